import numpy as np
import pytest

from anyvariate.encoder import Model, ModelConfig
from anyvariate.patching import Frequency, Role, TaskWindow, TimeSeries, patchify_flatten

# a model small enough for finite differences and fast forward passes
MICRO = ModelConfig(layers=1, d_model=8, d_ff=12, heads=2, d_kv=4, patch_sizes=(8, 16, 32))


def make_series(nvar=1, n=96, freq=Frequency.MONTHLY, seed=0, roles=None, sid="s"):
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    values = np.stack([5 + np.sin(2 * np.pi * t / 12 + k) + 0.1 * rng.normal(size=n) for k in range(nvar)])
    return TimeSeries(values, roles or [Role.TARGET] * nvar, freq, sid)


def make_tokens(nvar=1, n=96, l=64, patch=8, seed=0, roles=None):
    s = make_series(nvar, n, seed=seed, roles=roles)
    return patchify_flatten(s, TaskWindow(t=l, l=l, h=n - l), patch)


@pytest.fixture
def micro_model():
    return Model(MICRO, seed=0)
