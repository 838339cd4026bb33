"""End-to-end experiments shared by scripts/ and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .encoder import ModelConfig, preset
from .evaluation import ArchiveReport, evaluate_archive
from .forecast import forecast, model_forecaster
from .metrics import rolling_windows
from .synthetic import desk_archive, holdout_archive, peaky_archive
from .trainer import TrainConfig, TrainResult, make_config, train

# the desk run: 5k steps of the tiny preset; batch and lr are sized to finish
# well inside 20 minutes on one core (see README)
DESK_STEPS = 5000
DESK_BATCH = 4
DESK_LR = 3e-3


def desk_config(steps: int = DESK_STEPS, batch_size: int = DESK_BATCH, lr: float = DESK_LR, seed: int = 0,
                model: ModelConfig | None = None) -> TrainConfig:
    return make_config("desk", model=model or preset("tiny"), seed=seed, batch_size=batch_size,
                       schedule=dict(total_steps=steps, warmup_steps=100, base_lr=lr))


@dataclass
class SkillResult:
    train: TrainResult
    report: ArchiveReport
    train_seconds: float
    eval_seconds: float

    @property
    def mean_crps(self) -> tuple[float, float]:
        agg = self.report.to_dict()["aggregate"]
        return agg["mean_crps_model"], agg["mean_crps_naive"]


def desk_skill(cfg: TrainConfig | None = None, out_dir=None, n_samples: int = 100, log=None) -> SkillResult:
    """Train on the desk archive, then evaluate on fresh held-out series."""
    cfg = cfg or desk_config()
    t0 = time.perf_counter()
    res = train(desk_archive(0), cfg, out_dir=out_dir, log=log)
    t1 = time.perf_counter()
    report = evaluate_archive(model_forecaster(res.model, n_samples=n_samples, seed=cfg.seed), holdout_archive())
    return SkillResult(res, report, t1 - t0, time.perf_counter() - t1)


@dataclass
class FloorResult:
    components: tuple
    q05: np.ndarray  # lower 90%-interval bound at every forecast step, original units
    actual: np.ndarray
    losses: list = field(default_factory=list)

    @property
    def min_q05(self) -> float:
        return float(self.q05.min())

    @property
    def coverage(self) -> float:
        return float(np.mean(self.actual >= self.q05))


def interval_floor(components, steps: int = 1500, batch_size: int = 2, lr: float = DESK_LR, seed: int = 0,
                   n_samples: int = 400, h: int = 24, windows: int = 7, shape: dict | None = None) -> FloorResult:
    """Train a tiny model with the given mixture components on positive,
    right-skewed series and collect the 5% quantile over held-out windows."""
    model_cfg = ModelConfig(**{**preset("tiny").to_dict(), "components": tuple(components)})
    cfg = make_config("desk", model=model_cfg, seed=seed, batch_size=batch_size,
                      schedule=dict(total_steps=steps, warmup_steps=100, base_lr=lr))
    res = train(peaky_archive(seed, **(shape or {})), cfg)
    test = peaky_archive(seed + 1000, num_series=4, length=600, **(shape or {}))
    lows, acts = [], []
    for s in test.sub_datasets[0].series:
        for t in rolling_windows(s.num_steps, h, windows):
            hist = type(s)(s.values[:, :t], s.roles, s.frequency, s.id, s.multiplier, s.names)
            fc = forecast(res.model, hist, h, n_samples=n_samples, seed=seed)
            lows.append(np.quantile(fc.samples[0], 0.05, axis=-1))
            acts.append(s.values[0, t : t + h])
    return FloorResult(tuple(components), np.concatenate(lows), np.concatenate(acts), res.losses)
