"""Zero-shot inference: mask the horizon, sample the mixture, denormalize."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mixture
from .encoder import Model
from .metrics import QUANTILE_LEVELS, Forecaster
from .packing import ROW_LEN, single
from .patching import (
    ConfigError,
    Role,
    TaskWindow,
    TimeSeries,
    admissible_patch_sizes,
    denormalize,
    patchify_flatten,
    unpatchify,
)

DEFAULT_SAMPLES = 100


@dataclass
class Forecast:
    samples: np.ndarray  # [num_targets, h, n_samples], original units
    quantiles: np.ndarray  # [K, num_targets, h]
    median: np.ndarray  # [num_targets, h]
    levels: tuple
    targets: list[int]  # variate indices of the targets
    context_length: int
    patch_size: int


def default_patch_size(model: Model, frequency) -> int:
    usable = [p for p in admissible_patch_sizes(frequency) if p in model.cfg.patch_sizes]
    if not usable:
        raise ConfigError(f"model has no projection for any of {list(admissible_patch_sizes(frequency))}")
    return usable[0]


def max_context(num_variates: int, h: int, patch_size: int, max_tokens: int = ROW_LEN) -> int:
    """Longest context keeping the flattened window within ``max_tokens``."""
    per_variate = max_tokens // num_variates
    return max(per_variate * patch_size - h, 1)


def forecast(model: Model, series: TimeSeries, h: int, context_length: int | None = None,
             patch_size: int | None = None, n_samples: int = DEFAULT_SAMPLES, seed: int = 0,
             future_covariates: np.ndarray | None = None, levels=QUANTILE_LEVELS) -> Forecast:
    """Forecast ``h`` steps past the end of ``series``.

    Known covariates need their future values in ``future_covariates``
    (``[num_known, h]``). Quantiles and the median come from ``n_samples``
    mixture draws per step.
    """
    if h < 1:
        raise ConfigError("horizon must be >= 1")
    patch = default_patch_size(model, series.frequency) if patch_size is None else int(patch_size)
    admissible = admissible_patch_sizes(series.frequency)
    if patch not in admissible:
        raise ConfigError(
            f"patch size {patch} not admissible for {series.frequency.value}; use one of {list(admissible)}"
        )
    if patch not in model.cfg.patch_sizes:
        raise ConfigError(f"model has no projection for patch size {patch}")
    if context_length is None:
        context_length = min(series.num_steps, max_context(series.num_variates, h, patch))
    if context_length < 1 or context_length > series.num_steps:
        raise ConfigError(f"context length {context_length} outside [1, {series.num_steps}]")

    l = int(context_length)
    values = np.full((series.num_variates, l + h), np.nan)
    values[:, :l] = series.values[:, -l:]
    known = [i for i, r in enumerate(series.roles) if r is Role.KNOWN_COVARIATE]
    if known:
        if future_covariates is None:
            raise ConfigError(f"{len(known)} known covariate(s) need future values for the horizon")
        fut = np.atleast_2d(np.asarray(future_covariates, float))
        if fut.shape != (len(known), h):
            raise ConfigError(f"future_covariates shape {fut.shape} != ({len(known)}, {h})")
        values[known, l:] = fut
    window_series = TimeSeries(values, series.roles, series.frequency, series.id, series.multiplier, series.names)
    tokens = patchify_flatten(window_series, TaskWindow(t=l, l=l, h=h), patch)

    raw = model.raw_outputs(single(tokens))[0]  # [tokens, P, 12]
    params = mixture.constrain(raw, model.cfg.components)
    rng = np.random.default_rng(seed)
    draws = mixture.sample(params, n_samples, rng)  # [tokens, P, n]
    per_variate = unpatchify(tokens, draws)  # [nvar, l + h, n]
    per_variate = denormalize(per_variate, tokens.norm_loc, tokens.norm_scale)
    targets = [i for i, r in enumerate(series.roles) if r is Role.TARGET]
    samples = per_variate[targets, l:, :]
    return Forecast(
        samples=samples,
        quantiles=np.quantile(samples, levels, axis=-1),
        median=np.median(samples, axis=-1),
        levels=tuple(levels),
        targets=targets,
        context_length=l,
        patch_size=patch,
    )


def model_forecaster(model: Model, context_length: int | None = None, patch_size: int | None = None,
                     n_samples: int = DEFAULT_SAMPLES, seed: int = 0) -> Forecaster:
    """Adapter for :func:`metrics.rolling_eval`; each call reuses ``seed``."""

    def fc(history: TimeSeries, h: int) -> np.ndarray:
        l = None if context_length is None else min(context_length, history.num_steps)
        return forecast(model, history, h, l, patch_size, n_samples, seed).samples

    return fc


def forecast_records(fc: Forecast, variate: int = 0) -> list[dict]:
    """One JSON-able record per horizon step for one target."""
    out = []
    for i in range(fc.median.shape[1]):
        rec = {"step": i}
        for k, a in enumerate(fc.levels):
            rec[f"q{int(round(a * 100))}"] = float(fc.quantiles[k, variate, i])
        rec["median"] = float(fc.median[variate, i])
        out.append(rec)
    return out


def tokens_for(num_variates: int, length: int, patch: int) -> int:
    return num_variates * math.ceil(length / patch)
