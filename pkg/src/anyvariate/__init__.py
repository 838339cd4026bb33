"""Any-variate masked-encoder forecasting on a small numpy autodiff core."""

from .encoder import Model, ModelConfig, count_parameters, preset
from .forecast import Forecast, forecast
from .patching import ConfigError, DataError, Frequency, Role, TimeSeries
from .trainer import TrainConfig, load_model, make_config, train

__all__ = [
    "ConfigError", "DataError", "Forecast", "Frequency", "Model", "ModelConfig", "Role", "TimeSeries",
    "TrainConfig", "count_parameters", "forecast", "load_model", "make_config", "preset", "train",
]
__version__ = "0.1.0"
