"""Synthetic archives for desk-scale training and evaluation."""

from __future__ import annotations

import numpy as np

from .archive import Archive, SubDataset
from .patching import Frequency, Role, TimeSeries

# seasonal period (in steps) used by the generators for each frequency
PERIODS = {Frequency.HOURLY: 24, Frequency.DAILY: 7, Frequency.MONTHLY: 12}


def ar1(n: int, phi: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    eps = rng.normal(0.0, sigma, n)
    out = np.empty(n)
    out[0] = eps[0] / np.sqrt(1 - phi * phi)
    for t in range(1, n):
        out[t] = phi * out[t - 1] + eps[t]
    return out


def seasonal_ar1(n: int, period: int, rng: np.random.Generator, level: float = 10.0,
                 phi: float | None = None, noise: float = 0.3) -> np.ndarray:
    """Level + 1-2 harmonics of ``period`` + an AR(1) disturbance."""
    t = np.arange(n)
    amp = rng.uniform(1.0, 3.0)
    phase = rng.uniform(0, 2 * np.pi)
    y = level + amp * np.sin(2 * np.pi * t / period + phase)
    if rng.random() < 0.5:
        y += 0.4 * amp * np.sin(4 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
    phi = rng.uniform(0.5, 0.9) if phi is None else phi
    return y + ar1(n, phi, noise, rng)


def _series(values, freq, sid, roles=None) -> TimeSeries:
    values = np.atleast_2d(values)
    roles = roles or [Role.TARGET] * values.shape[0]
    return TimeSeries(values, roles, freq, sid, 1, [f"v{i}" for i in range(values.shape[0])])


def desk_archive(seed: int = 0, scale: float = 1.0) -> Archive:
    """Sinusoid + AR(1) series at three frequencies with mixed variate counts.

    ``scale`` multiplies the number of series per sub-dataset.
    """
    rng = np.random.default_rng(seed)

    def count(n):
        return max(1, int(round(n * scale)))

    subs = []
    # univariate hourly sinusoids (pool for concatenation)
    subs.append(SubDataset("hourly_sine", [
        _series(seasonal_ar1(int(rng.integers(1200, 2400)), 24, rng), Frequency.HOURLY, f"hs{i}")
        for i in range(count(12))
    ]))
    # hourly 3-variate: two targets sharing a phase plus a past covariate
    multi = []
    for i in range(count(6)):
        n = int(rng.integers(1000, 2000))
        base = seasonal_ar1(n, 24, rng)
        other = base + 0.5 * ar1(n, 0.7, 0.3, rng)
        cov = np.roll(base, 3) + rng.normal(0, 0.2, n)
        multi.append(_series(np.stack([base, other, cov]), Frequency.HOURLY, f"hm{i}",
                             [Role.TARGET, Role.TARGET, Role.PAST_COVARIATE]))
    subs.append(SubDataset("hourly_multi", multi))
    # daily bivariate with weekly season
    subs.append(SubDataset("daily_ar", [
        _series(np.stack([seasonal_ar1(n, 7, rng, level=20.0), seasonal_ar1(n, 7, rng, level=15.0)]),
                Frequency.DAILY, f"da{i}")
        for i, n in enumerate(rng.integers(600, 1200, size=count(8)))
    ]))
    # univariate monthly sinusoids
    subs.append(SubDataset("monthly_sine", [
        _series(seasonal_ar1(int(rng.integers(200, 480)), 12, rng, noise=0.2), Frequency.MONTHLY, f"ms{i}")
        for i in range(count(20))
    ]))
    archive = Archive(subs)
    archive.audit()
    return archive


def holdout_archive(seed: int = 1000) -> Archive:
    """Fresh series from the same generators, for evaluation only."""
    return desk_archive(seed=seed, scale=0.5)


def peaky_positive(n: int, rng: np.random.Generator, period: int = 24, peak_at: int = 12,
                   base: float = 5.0, noise: float = 0.1, mu: float = 3.0, sigma: float = 0.8,
                   width: float = 2.0) -> np.ndarray:
    """Strictly positive series: a flat floor with one right-skewed peak per
    period. Peak heights are log-normal; each peak is a Gaussian bump ``width``
    steps wide (``width=0`` gives single-step spikes)."""
    y = base + noise * np.abs(rng.normal(size=n))
    t = np.arange(n)
    heights = rng.lognormal(mu, sigma, size=n // period + 1)[t // period]
    offset = t % period - peak_at
    bump = np.exp(-0.5 * (offset / width) ** 2) if width > 0 else (offset == 0).astype(float)
    return y + heights * bump


def peaky_archive(seed: int = 0, num_series: int = 16, length: int = 2000, **shape) -> Archive:
    """``shape`` is forwarded to :func:`peaky_positive`."""
    rng = np.random.default_rng(seed)
    series = [_series(peaky_positive(length, rng, **shape), Frequency.HOURLY, f"pk{i}") for i in range(num_series)]
    return Archive([SubDataset("peaky_hourly", series)])
