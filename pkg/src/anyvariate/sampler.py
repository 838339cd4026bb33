"""Two-level data distribution and the task distribution over windows.

A draw picks a sub-dataset (size-proportional, capped at ``epsilon``), then a
series inside it (length-proportional), optionally augments the variate
dimension, then cuts a random context/horizon window and patchifies it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .archive import Archive, SubDataset
from .patching import (
    ConfigError,
    DataError,
    FlattenedTokens,
    Role,
    TaskWindow,
    TimeSeries,
    admissible_patch_sizes,
    patchify_flatten,
)


class TooShort(Exception):
    """Series cannot host a valid window; the caller should resample."""


@dataclass
class SamplingConfig:
    epsilon: float = 0.001
    min_len_per_variate: int = 2  # in patches
    max_total_len: int = 512  # in flattened tokens
    pred_proportion_range: tuple = (0.15, 0.5)
    betabinom: tuple = (128, 2.0, 5.0)
    concat_prob: float = 0.5
    max_retries: int = 100

    def __post_init__(self):
        lo, hi = self.pred_proportion_range
        if not 0 < self.epsilon <= 1:
            raise ConfigError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if not 0 < lo <= hi < 1:
            raise ConfigError(f"prediction proportion range must lie in (0, 1), got {self.pred_proportion_range}")
        if self.betabinom[0] < 1:
            raise ConfigError("beta-binomial n must be >= 1")
        if self.min_len_per_variate < 1 or self.max_total_len < self.min_len_per_variate:
            raise ConfigError("inconsistent length limits")
        if not 0 <= self.concat_prob <= 1:
            raise ConfigError("concat_prob must be in [0, 1]")


def subdataset_probs(archive, epsilon: float = 0.001) -> np.ndarray:
    """``p_k = w_k / sum(w)`` with ``w_k = min(|D_k| / sum|D|, epsilon)``.

    Accepts an :class:`Archive` or a plain sequence of sub-dataset sizes.
    """
    sizes = archive.sizes if isinstance(archive, Archive) else np.asarray(archive, dtype=np.float64)
    if sizes.size == 0:
        raise ConfigError("archive has no sub-datasets")
    if np.any(sizes <= 0):
        raise ConfigError("every sub-dataset needs at least one observation")
    w = np.minimum(sizes / sizes.sum(), epsilon)
    return w / w.sum()


def _length_weights(sd: SubDataset) -> np.ndarray:
    lengths = np.array([s.num_steps for s in sd.series], dtype=np.float64)
    return lengths / lengths.sum()


def sample_subdataset(archive: Archive, probs, rng: np.random.Generator) -> SubDataset:
    return archive.sub_datasets[rng.choice(len(archive), p=probs)]


def sample_series(archive: Archive, probs, rng: np.random.Generator) -> TimeSeries:
    sd = sample_subdataset(archive, probs, rng)
    return sd.series[rng.choice(len(sd.series), p=_length_weights(sd))]


def sample_task_window(series: TimeSeries, config: SamplingConfig, rng: np.random.Generator,
                       return_proportion: bool = False):
    """Draw ``(TaskWindow, patch_size)`` under the flattened-token cap."""
    patch = int(rng.choice(admissible_patch_sizes(series.frequency)))
    per_variate = config.max_total_len // series.num_variates
    if per_variate < config.min_len_per_variate:
        raise TooShort(f"{series.num_variates} variates cannot fit {config.min_len_per_variate} patches each")
    lo = config.min_len_per_variate * patch
    hi = min(series.num_steps, per_variate * patch)
    if hi < lo:
        raise TooShort(f"{series.id}: {series.num_steps} steps < {lo} needed at patch {patch}")
    w = int(rng.integers(lo, hi + 1))
    start = int(rng.integers(0, series.num_steps - w + 1))
    prop = float(rng.uniform(*config.pred_proportion_range))
    h = min(max(int(round(prop * w)), 1), w - 1)
    window = TaskWindow(t=start + w - h, l=w - h, h=h)
    return (window, patch, prop) if return_proportion else (window, patch)


def subsample_variates(series: TimeSeries, rng: np.random.Generator) -> TimeSeries:
    """Uniform nonempty subset of variates that keeps at least one target."""
    n = series.num_variates
    if n == 1:
        return series
    targets = series.target_mask
    while True:  # rejection: uniform over admissible subsets
        keep = rng.random(n) < 0.5
        if keep.any() and (keep & targets).any():
            return series.select(np.flatnonzero(keep))


def betabinomial(n: int, a: float, b: float, rng: np.random.Generator, size=None):
    return rng.binomial(n, rng.beta(a, b, size=size))


def concat_univariates(pool: list[TimeSeries], rng: np.random.Generator, config: SamplingConfig) -> TimeSeries:
    """Stack randomly chosen univariate series into one synthetic multivariate.

    Series are aligned by position: each is cropped at a random offset to the
    shortest member's length.
    """
    if not pool:
        raise ConfigError("empty pool for concatenation")
    if any(s.num_variates != 1 for s in pool):
        raise ConfigError("concatenation pool must be univariate")
    freq = pool[0].frequency
    if any(s.frequency is not freq for s in pool):
        raise ConfigError("concatenation pool mixes frequencies")
    d = int(np.clip(betabinomial(*config.betabinom, rng), 1, len(pool)))
    chosen = [pool[i] for i in rng.choice(len(pool), size=d, replace=False)]
    length = min(s.num_steps for s in chosen)
    rows = []
    for s in chosen:
        off = int(rng.integers(0, s.num_steps - length + 1))
        rows.append(s.values[0, off : off + length])
    ids = "+".join(s.id for s in chosen)
    return TimeSeries(np.stack(rows), [Role.TARGET] * d, freq, ids, pool[0].multiplier)


class TaskSampler:
    """Stream of training samples with its own RNG (one per worker)."""

    def __init__(self, archive: Archive, config: SamplingConfig | None = None, seed: int = 0):
        archive.audit()
        self.archive = archive
        self.config = config or SamplingConfig()
        self.probs = subdataset_probs(archive, self.config.epsilon)
        self.rng = np.random.default_rng(seed)

    def draw_series(self) -> TimeSeries:
        cfg, rng = self.config, self.rng
        sd = sample_subdataset(self.archive, self.probs, rng)
        series = sd.series[rng.choice(len(sd.series), p=_length_weights(sd))]
        if sd.is_univariate and len(sd.series) > 1 and rng.random() < cfg.concat_prob:
            return concat_univariates(sd.series, rng, cfg)
        return subsample_variates(series, rng)

    def sample(self) -> FlattenedTokens:
        cfg = self.config
        last = None
        for _ in range(cfg.max_retries):
            series = self.draw_series()
            max_vars = cfg.max_total_len // cfg.min_len_per_variate
            if series.num_variates > max_vars:
                keep = self.rng.choice(series.num_variates, size=max_vars, replace=False)
                keep = np.sort(keep)
                if not series.target_mask[keep].any():
                    keep[0] = int(np.flatnonzero(series.target_mask)[0])
                    keep = np.unique(keep)
                series = series.select(keep)
            try:
                window, patch = sample_task_window(series, cfg, self.rng)
                return patchify_flatten(series, window, patch)
            except (TooShort, DataError) as err:
                last = err
        raise DataError(f"no valid task after {cfg.max_retries} attempts (last: {last})")

    def get_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state


def token_count(num_variates: int, window: int, patch: int) -> int:
    return num_variates * math.ceil(window / patch)
