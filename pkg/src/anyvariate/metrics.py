"""Probabilistic and point forecast metrics, rolling evaluation, aggregation."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .patching import Frequency, TimeSeries, parse_frequency

QUANTILE_LEVELS = tuple(round(0.1 * k, 1) for k in range(1, 10))
MSIS_ALPHA = 0.05


class ProtocolError(ValueError):
    pass


class UndefinedMetric(ZeroDivisionError):
    """Normalization denominator is zero."""


_SEASONALITY = {
    Frequency.YEARLY: 1,
    Frequency.QUARTERLY: 4,
    Frequency.MONTHLY: 12,
    Frequency.WEEKLY: 52,
    Frequency.DAILY: 7,
    Frequency.HOURLY: 24,
}


def seasonality(frequency, multiplier: int = 1) -> int:
    freq = parse_frequency(frequency)
    if freq is Frequency.MINUTE:
        return max(1, 1440 // multiplier)
    if freq is Frequency.SECOND:
        return max(1, 86400 // multiplier)
    return _SEASONALITY[freq]


@dataclass
class MetricConfig:
    levels: tuple = QUANTILE_LEVELS
    msis_alpha: float = MSIS_ALPHA

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if lv.size == 0 or np.any(lv <= 0) or np.any(lv >= 1) or np.any(np.diff(lv) <= 0):
            raise ValueError("quantile levels must be strictly increasing in (0, 1)")


# ---------------------------------------------------------------------------
# probabilistic


def quantile_loss(q, y, alpha: float) -> np.ndarray:
    """Pinball loss ``(alpha - 1[y < q]) * (y - q)``."""
    q, y = np.asarray(q, float), np.asarray(y, float)
    return (alpha - (y < q)) * (y - q)


def wql(q, y, alpha: float) -> float:
    y = np.asarray(y, float)
    denom = np.abs(y).sum()
    if denom == 0:
        raise UndefinedMetric("sum of |actuals| is zero")
    return float(2.0 * quantile_loss(q, y, alpha).sum() / denom)


def crps(quantiles, y, levels=QUANTILE_LEVELS) -> float:
    """Mean weighted quantile loss; ``quantiles`` is ``[K, ...]`` aligned with ``y``."""
    quantiles = np.asarray(quantiles, float)
    if quantiles.shape[0] != len(levels) or quantiles.shape[1:] != np.shape(y):
        raise ValueError(f"quantiles {quantiles.shape} do not match {len(levels)} levels x {np.shape(y)}")
    return float(np.mean([wql(quantiles[k], y, a) for k, a in enumerate(levels)]))


def seasonal_scale(history, m: int) -> float:
    """Mean absolute seasonal difference of the in-sample history."""
    h = np.asarray(history, float)
    h = h[~np.isnan(h)] if h.ndim == 1 else h
    if h.size <= m:
        raise ProtocolError(f"history of {h.size} steps must exceed seasonality {m}")
    return float(np.mean(np.abs(h[m:] - h[:-m])))


def msis(upper, lower, y, history, m: int, a: float = MSIS_ALPHA) -> float:
    upper, lower, y = (np.asarray(v, float) for v in (upper, lower, y))
    if y.size < 1:
        raise ProtocolError("empty horizon")
    denom = seasonal_scale(history, m)
    if denom == 0:
        raise UndefinedMetric("seasonal difference of history is zero")
    num = (upper - lower) + (2.0 / a) * (lower - y) * (y < lower) + (2.0 / a) * (y - upper) * (y > upper)
    return float(np.mean(num) / denom)


# ---------------------------------------------------------------------------
# point


def point_metrics(pred, y, history=None, m: int = 1) -> dict[str, float]:
    """sMAPE, MASE, ND, NRMSE, MAE; an undefined metric is reported as NaN."""
    pred, y = np.asarray(pred, float), np.asarray(y, float)
    if y.size == 0:
        raise ProtocolError("empty horizon")
    err = np.abs(pred - y)
    mae = float(err.mean())
    denom = np.abs(pred) + np.abs(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(denom > 0, 2.0 * err / denom, 0.0)  # both zero -> 0
    out = {"sMAPE": float(terms.mean()), "MAE": mae}
    abs_sum = np.abs(y).sum()
    out["ND"] = float(err.sum() / abs_sum) if abs_sum > 0 else math.nan
    mean_abs = np.abs(y).mean()
    out["NRMSE"] = float(np.sqrt(np.mean((pred - y) ** 2)) / mean_abs) if mean_abs > 0 else math.nan
    out["MASE"] = math.nan
    if history is not None:
        scale = seasonal_scale(history, m)
        if scale > 0:
            out["MASE"] = mae / scale
    return out


# ---------------------------------------------------------------------------
# forecasters and rolling evaluation

# forecaster(history: TimeSeries, h) -> samples [num_targets, h, n_samples]
Forecaster = Callable[[TimeSeries, int], np.ndarray]


def seasonal_naive(m: int) -> Forecaster:
    """Repeat the last observed season; a degenerate (single-sample) forecast."""

    def fc(history: TimeSeries, h: int) -> np.ndarray:
        vals = history.values[history.target_mask]
        if vals.shape[1] < m:
            raise ProtocolError(f"seasonal naive needs {m} steps of history")
        last = vals[:, -m:]
        reps = np.tile(last, (1, math.ceil(h / m)))[:, :h]
        return reps[..., None]

    return fc


@dataclass
class EvalResult:
    dataset: str
    CRPS: float
    MSIS: float
    sMAPE: float
    MASE: float
    ND: float
    NRMSE: float
    MAE: float
    windows: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class WindowForecast:
    series_id: str
    variate: int
    start: int
    actual: np.ndarray
    median: np.ndarray
    quantiles: np.ndarray  # [K, h]
    lower: np.ndarray
    upper: np.ndarray


def rolling_windows(num_steps: int, h: int, r: int) -> list[int]:
    """Forecast start indices of the ``r`` non-overlapping test windows."""
    if h < 1 or r < 1:
        raise ProtocolError("h and r must be positive")
    first = num_steps - h * r
    if first < 1:
        raise ProtocolError(f"series of {num_steps} steps cannot hold {r} windows of {h}")
    return [first + i * h for i in range(r)]


def _summaries(samples: np.ndarray, levels, a: float):
    qs = np.quantile(samples, levels, axis=-1)
    med = np.quantile(samples, 0.5, axis=-1)
    lo = np.quantile(samples, a / 2, axis=-1)
    hi = np.quantile(samples, 1 - a / 2, axis=-1)
    return qs, med, lo, hi


def forecast_windows(forecaster: Forecaster, series_list: list[TimeSeries], h: int, r: int,
                     min_context: int = 1, config: MetricConfig | None = None) -> list[WindowForecast]:
    config = config or MetricConfig()
    out = []
    for s in series_list:
        starts = rolling_windows(s.num_steps, h, r)
        if starts[0] < min_context:
            raise ProtocolError(
                f"{s.id}: needs at least {min_context + h * r} steps for context {min_context} + {r}x{h} test"
            )
        targets = np.flatnonzero(s.target_mask)
        for t in starts:
            hist = TimeSeries(s.values[:, :t], s.roles, s.frequency, s.id, s.multiplier, s.names)
            samples = np.asarray(forecaster(hist, h), float)
            if samples.shape[:2] != (targets.size, h):
                raise ProtocolError(f"forecaster returned {samples.shape}, expected ({targets.size}, {h}, n)")
            qs, med, lo, hi = _summaries(samples, config.levels, config.msis_alpha)
            for j, v in enumerate(targets):
                out.append(WindowForecast(s.id, int(v), t, s.values[v, t : t + h], med[j], qs[:, j], lo[j], hi[j]))
    return out


def score_windows(windows: list[WindowForecast], series_list: list[TimeSeries], h: int, r: int, m: int,
                  name: str = "", config: MetricConfig | None = None) -> EvalResult:
    """Pool windows into one result.

    Sum-normalized metrics (CRPS, ND, NRMSE, sMAPE, MAE) pool every horizon
    step; scale-normalized metrics (MSIS, MASE) are computed per target
    variate against its pre-test history and then averaged.
    """
    config = config or MetricConfig()
    by_id = {s.id: s for s in series_list}
    actual = np.concatenate([w.actual for w in windows])
    median = np.concatenate([w.median for w in windows])
    quants = np.concatenate([w.quantiles for w in windows], axis=1)
    crps_v = crps(quants, actual, config.levels)
    pm = point_metrics(median, actual)
    groups: dict[tuple, list[WindowForecast]] = {}
    for w in windows:
        groups.setdefault((w.series_id, w.variate), []).append(w)
    msis_vals, mase_vals = [], []
    for (sid, v), ws in groups.items():
        s = by_id[sid]
        hist = s.values[v, : s.num_steps - h * r]
        act = np.concatenate([w.actual for w in ws])
        try:
            msis_vals.append(msis(np.concatenate([w.upper for w in ws]), np.concatenate([w.lower for w in ws]),
                                  act, hist, m, config.msis_alpha))
            mase_vals.append(point_metrics(np.concatenate([w.median for w in ws]), act, hist, m)["MASE"])
        except (UndefinedMetric, ProtocolError):
            continue
    return EvalResult(
        dataset=name, CRPS=crps_v,
        MSIS=float(np.mean(msis_vals)) if msis_vals else math.nan,
        sMAPE=pm["sMAPE"], MASE=float(np.nanmean(mase_vals)) if mase_vals else math.nan,
        ND=pm["ND"], NRMSE=pm["NRMSE"], MAE=pm["MAE"], windows=len(windows),
    )


def rolling_eval(forecaster: Forecaster, series, h: int, r: int, m: int | None = None, min_context: int = 1,
                 name: str = "", config: MetricConfig | None = None) -> EvalResult:
    """Non-overlapping rolling evaluation over the last ``h * r`` steps."""
    series_list = [series] if isinstance(series, TimeSeries) else list(series)
    if m is None:
        m = seasonality(series_list[0].frequency, series_list[0].multiplier)
    windows = forecast_windows(forecaster, series_list, h, r, min_context, config)
    return score_windows(windows, series_list, h, r, m, name, config)


def validation_window(num_steps: int, h: int, r: int) -> int:
    """Start index of the last horizon before the test region."""
    start = num_steps - h * r - h
    if start < 1:
        raise ProtocolError("no room for a validation window")
    return start


def aggregate_normalized_mae(model_mae, naive_mae) -> float:
    """Geometric mean over datasets of model MAE / naive MAE."""
    model_mae = np.asarray(model_mae, float)
    naive_mae = np.asarray(naive_mae, float)
    keep = naive_mae > 0
    if not keep.all():
        warnings.warn(f"excluding {int((~keep).sum())} dataset(s) with zero naive MAE", stacklevel=2)
    if not keep.any():
        raise UndefinedMetric("every naive MAE is zero")
    return float(np.exp(np.mean(np.log(model_mae[keep] / naive_mae[keep]))))
