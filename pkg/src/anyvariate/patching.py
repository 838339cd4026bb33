"""Patchify multivariate windows into one flattened, normalized token sequence."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

NORM_EPS = 1e-5
MAX_PATCH_SIZE = 128
PATCH_SIZES = (8, 16, 32, 64, 128)


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class Role(str, enum.Enum):
    TARGET = "target"
    PAST_COVARIATE = "past_covariate"
    KNOWN_COVARIATE = "known_covariate"


class Frequency(str, enum.Enum):
    YEARLY = "yearly"
    QUARTERLY = "quarterly"
    MONTHLY = "monthly"
    WEEKLY = "weekly"
    DAILY = "daily"
    HOURLY = "hourly"
    MINUTE = "minute"
    SECOND = "second"


_PATCH_TABLE = {
    Frequency.YEARLY: (8,),
    Frequency.QUARTERLY: (8,),
    Frequency.MONTHLY: (8, 16, 32),
    Frequency.WEEKLY: (16, 32),
    Frequency.DAILY: (16, 32),
    Frequency.HOURLY: (32, 64),
    Frequency.MINUTE: (32, 64, 128),
    Frequency.SECOND: (64, 128),
}


def parse_frequency(freq) -> Frequency:
    if isinstance(freq, Frequency):
        return freq
    try:
        return Frequency(str(freq).lower())
    except ValueError:
        raise ConfigError(f"unknown frequency {freq!r}; expected one of {[f.value for f in Frequency]}") from None


def admissible_patch_sizes(frequency) -> tuple[int, ...]:
    """Patch sizes a series of ``frequency`` may be tokenized with."""
    return _PATCH_TABLE[parse_frequency(frequency)]


@dataclass
class TimeSeries:
    values: np.ndarray  # [num_variates, num_steps], NaN = missing
    roles: list[Role]
    frequency: Frequency
    id: str = ""
    multiplier: int = 1
    names: list[str] | None = None
    start: str | None = None  # ISO timestamp of the first step, when known

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        self.roles = [Role(r) for r in self.roles]
        self.frequency = parse_frequency(self.frequency)
        if len(self.roles) != self.values.shape[0]:
            raise DataError(f"{self.id}: {len(self.roles)} roles for {self.values.shape[0]} variates")
        if Role.TARGET not in self.roles:
            raise DataError(f"{self.id}: no target variate")

    @property
    def num_variates(self) -> int:
        return self.values.shape[0]

    @property
    def num_steps(self) -> int:
        return self.values.shape[1]

    @property
    def target_mask(self) -> np.ndarray:
        return np.array([r is Role.TARGET for r in self.roles])

    def select(self, variates) -> TimeSeries:
        variates = list(variates)
        names = [self.names[i] for i in variates] if self.names else None
        return TimeSeries(
            self.values[variates], [self.roles[i] for i in variates], self.frequency,
            self.id, self.multiplier, names, self.start,
        )

    def validate_length(self) -> None:
        min_steps = 2 * min(admissible_patch_sizes(self.frequency))
        if self.num_steps < min_steps:
            raise DataError(f"{self.id}: {self.num_steps} steps < {min_steps} required for {self.frequency.value}")


@dataclass(frozen=True)
class TaskWindow:
    """Context ``[t - l, t)`` and horizon ``[t, t + h)``."""

    t: int
    l: int
    h: int

    @property
    def start(self) -> int:
        return self.t - self.l

    @property
    def length(self) -> int:
        return self.l + self.h

    def check(self, num_steps: int) -> None:
        if self.l < 1 or self.h < 1 or self.start < 0 or self.t + self.h > num_steps:
            raise IndexError(f"window {self} outside series of {num_steps} steps")


@dataclass
class FlattenedTokens:
    patches: np.ndarray  # [num_tokens, patch_size], zero-filled where unobserved
    time_id: np.ndarray
    variate_id: np.ndarray
    is_mask: np.ndarray
    observed: np.ndarray  # [num_tokens, patch_size]
    target: np.ndarray  # per-element loss eligibility: target variate, horizon, observed
    patch_size: int
    norm_loc: np.ndarray
    norm_scale: np.ndarray
    num_variates: int = 0
    window_length: int = 0
    context_length: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def num_tokens(self) -> int:
        return self.patches.shape[0]

    @property
    def patches_per_variate(self) -> int:
        return self.num_tokens // max(self.num_variates, 1)


def instance_normalize(values: np.ndarray, context_length: int):
    """Standardize each variate by mean/std of its observed context values.

    Returns ``(normalized, loc, scale)``; NaNs pass through untouched.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    ctx = values[:, :context_length]
    observed = ~np.isnan(ctx)
    counts = observed.sum(axis=1)
    if np.any(counts == 0):
        bad = int(np.flatnonzero(counts == 0)[0])
        raise DataError(f"variate {bad} has no observed context values")
    filled = np.where(observed, ctx, 0.0)
    loc = filled.sum(axis=1) / counts
    var = (np.where(observed, ctx - loc[:, None], 0.0) ** 2).sum(axis=1) / counts
    scale = np.sqrt(var)
    normalized = (values - loc[:, None]) / (scale[:, None] + NORM_EPS)
    return normalized, loc, scale


def denormalize(values, loc, scale):
    """Invert :func:`instance_normalize`; broadcasts over trailing axes."""
    values = np.asarray(values, dtype=np.float64)
    loc = np.asarray(loc, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    extra = values.ndim - loc.ndim
    shape = loc.shape + (1,) * extra
    return values * (scale.reshape(shape) + NORM_EPS) + loc.reshape(shape)


def patchify_flatten(series: TimeSeries, window: TaskWindow, patch_size: int) -> FlattenedTokens:
    admissible = admissible_patch_sizes(series.frequency)
    if patch_size not in admissible:
        raise ConfigError(
            f"patch size {patch_size} not admissible for {series.frequency.value}; use one of {list(admissible)}"
        )
    window.check(series.num_steps)

    raw = series.values[:, window.start : window.t + window.h]
    normalized, loc, scale = instance_normalize(raw, window.l)
    nvar, length = raw.shape
    npatch = math.ceil(length / patch_size)
    padded_len = npatch * patch_size

    observed = np.zeros((nvar, padded_len), dtype=bool)
    observed[:, :length] = ~np.isnan(raw)
    horizon = np.zeros(padded_len, dtype=bool)
    horizon[window.l : length] = True

    roles = series.roles
    is_target = np.array([r is Role.TARGET for r in roles])
    is_past = np.array([r is Role.PAST_COVARIATE for r in roles])
    # past covariates are unknown over the horizon
    observed[is_past] &= ~horizon

    vals = np.zeros((nvar, padded_len))
    vals[:, :length] = np.where(np.isnan(normalized), 0.0, normalized)
    vals[~observed] = 0.0

    patches = vals.reshape(nvar * npatch, patch_size)
    obs = observed.reshape(nvar * npatch, patch_size)
    horizon_tokens = horizon.reshape(npatch, patch_size).any(axis=1)
    is_mask = (is_target[:, None] & horizon_tokens[None, :]).reshape(-1)
    target = (is_target[:, None] & horizon[None, :] & observed).reshape(nvar * npatch, patch_size)

    return FlattenedTokens(
        patches=patches,
        time_id=np.tile(np.arange(npatch), nvar),
        variate_id=np.repeat(np.arange(nvar), npatch),
        is_mask=is_mask,
        observed=obs,
        target=target,
        patch_size=patch_size,
        norm_loc=loc,
        norm_scale=scale,
        num_variates=nvar,
        window_length=length,
        context_length=window.l,
        meta={"series_id": series.id},
    )


def unpatchify(tokens: FlattenedTokens, values=None) -> np.ndarray:
    """Reassemble ``[num_variates, window_length]`` from token rows.

    ``values`` defaults to the token patches; any ``[num_tokens, patch_size,
    ...]`` array (e.g. per-element forecasts) is accepted.
    """
    values = tokens.patches if values is None else np.asarray(values)
    nvar = tokens.num_variates
    per = values.reshape((nvar, -1) + values.shape[2:])
    return per[:, : tokens.window_length]


def flatten_from_normalized(tokens: FlattenedTokens) -> np.ndarray:
    """Window values in original units with unobserved entries as NaN."""
    vals = unpatchify(tokens)
    obs = unpatchify(tokens, tokens.observed)
    out = denormalize(vals, tokens.norm_loc, tokens.norm_scale)
    return np.where(obs, out, np.nan)
