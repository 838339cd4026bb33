"""Four-component mixture head: Student-t, log-normal, continuous negative
binomial and a fixed low-variance normal.

Raw head outputs carry 12 unconstrained slots per forecast element::

    0..3  mixture logits (student_t, lognormal, negbin, lowvar_normal)
    4     Student-t df      -> 2 + softplus
    5     Student-t loc     -> identity
    6     Student-t scale   -> softplus
    7     log-normal mu     -> identity
    8     log-normal sigma  -> softplus
    9     neg-binomial r    -> softplus
    10    neg-binomial p    -> sigmoid
    11    low-variance mean -> identity
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import interpolate, special

from . import autodiff as ad
from .autodiff import ContractError, NumericError, Tensor

N_DIST_PARAMS = 12
COMPONENTS = ("student_t", "lognormal", "negbin", "lowvar_normal")
DF_MIN = 2.0
LOWVAR_SIGMA = 1e-3
LOG_DENSITY_FLOOR = -1e10
NB_P_EPS = 1e-15
QUANTILE_LEVELS = tuple(round(0.1 * k, 1) for k in range(1, 10))

_LOG_2PI = math.log(2 * math.pi)


@dataclass
class MixtureParams:
    """Constrained parameters; every field broadcasts over forecast elements."""

    w: np.ndarray  # [..., 4]
    df: np.ndarray
    t_loc: np.ndarray
    t_scale: np.ndarray
    ln_mu: np.ndarray
    ln_sigma: np.ndarray
    nb_r: np.ndarray
    nb_p: np.ndarray
    n_mu: np.ndarray

    def validate(self) -> None:
        w = np.asarray(self.w)
        if np.any(w < 0) or not np.allclose(w.sum(axis=-1), 1.0, atol=1e-9):
            raise ContractError("mixture weights must lie on the simplex")
        if np.any(np.asarray(self.df) < DF_MIN):
            raise ContractError(f"Student-t df must be >= {DF_MIN}")
        for name in ("t_scale", "ln_sigma", "nb_r"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ContractError(f"{name} must be positive")
        p = np.asarray(self.nb_p)
        if np.any((p <= 0) | (p >= 1)):
            raise ContractError("negative-binomial p must lie in (0, 1)")

    def __getitem__(self, index) -> MixtureParams:
        return MixtureParams(
            w=self.w[index], df=self.df[index], t_loc=self.t_loc[index], t_scale=self.t_scale[index],
            ln_mu=self.ln_mu[index], ln_sigma=self.ln_sigma[index], nb_r=self.nb_r[index],
            nb_p=self.nb_p[index], n_mu=self.n_mu[index],
        )


# ---------------------------------------------------------------------------
# continuous negative binomial normalizer
#
# The extension Gamma(x+r)/(Gamma(x+1)Gamma(r)) (1-p)^r p^x does not integrate
# to one over [0, inf). Its log-normalizer is tabulated once by composite
# Gauss-Legendre quadrature on a (log r, logit p) grid and read back through a
# bicubic spline, whose partial derivatives supply the backward pass.

NB_LOG_R_RANGE = (math.log(1e-3), math.log(1e3))
NB_LOGIT_P_RANGE = (-12.0, 12.0)
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _unit_edges() -> np.ndarray:
    geometric = 2.0 ** -np.arange(1, 46)
    linear = np.arange(1, 33) / 32.0
    return np.unique(np.concatenate([[0.0], geometric, linear]))


def nb_upper_limit(r, p) -> np.ndarray:
    """Point beyond which the continuous NB density is negligible."""
    r, p = np.asarray(r, float), np.asarray(p, float)
    mean = r * p / (1 - p)
    sd = np.sqrt(r * p) / (1 - p)
    return mean + 10 * sd + 30 / -np.log(p) + 5


def nb_unnormalized_log_density(x, r, p) -> np.ndarray:
    x, r, p = np.asarray(x, float), np.asarray(r, float), np.asarray(p, float)
    return (
        special.gammaln(x + r) - special.gammaln(x + 1) - special.gammaln(r)
        + r * np.log1p(-p) + x * np.log(p)
    )


def nb_log_normalizer_quadrature(r, p) -> np.ndarray:
    """log of the integral of the unnormalized density over [0, inf)."""
    r, p = np.broadcast_arrays(np.asarray(r, float), np.asarray(p, float))
    edges = _unit_edges()
    lo, hi = edges[:-1], edges[1:]
    unit_x = (0.5 * (hi - lo)[:, None] * (_GL_NODES[None, :] + 1) + lo[:, None]).ravel()
    unit_w = (0.5 * (hi - lo)[:, None] * _GL_WEIGHTS[None, :]).ravel()
    flat_r, flat_p = r.ravel(), p.ravel()
    out = np.empty(flat_r.size)
    chunk = max(1, 2_000_000 // unit_x.size)
    for s in range(0, flat_r.size, chunk):
        rr, pp = flat_r[s : s + chunk, None], flat_p[s : s + chunk, None]
        upper = nb_upper_limit(rr, pp)
        x = upper * unit_x[None, :]
        logf = nb_unnormalized_log_density(x, rr, pp) + np.log(upper * unit_w[None, :])
        out[s : s + chunk] = special.logsumexp(logf, axis=1)
    return out.reshape(r.shape)


@functools.lru_cache(maxsize=1)
def _nb_spline() -> interpolate.RectBivariateSpline:
    log_r = np.linspace(*NB_LOG_R_RANGE, 121)
    logit_p = np.linspace(*NB_LOGIT_P_RANGE, 97)
    rr, pp = np.meshgrid(np.exp(log_r), special.expit(logit_p), indexing="ij")
    table = nb_log_normalizer_quadrature(rr, pp)
    return interpolate.RectBivariateSpline(log_r, logit_p, table, kx=3, ky=3, s=0)


def nb_log_normalizer(r, p, where: np.ndarray | None = None) -> Tensor:
    """Differentiable log-normalizer of the continuous negative binomial.

    Arguments outside the tabulated domain are clamped to its edge, where the
    gradient is zero. With ``where``, only those entries are evaluated and the
    rest are 0 with zero gradient.
    """
    r, p = ad.as_tensor(r), ad.as_tensor(p)
    spline = _nb_spline()
    rd, pd = np.broadcast_arrays(r.data, p.data)
    shape = rd.shape
    sel = np.ones(shape, dtype=bool) if where is None else np.broadcast_to(where, shape)
    rs, ps = rd[sel], pd[sel]
    u_raw, v_raw = np.log(rs), special.logit(ps)
    u = np.clip(u_raw, *NB_LOG_R_RANGE)
    v = np.clip(v_raw, *NB_LOGIT_P_RANGE)
    value = np.zeros(shape)
    value[sel] = spline.ev(u, v)

    def grad_fn(g):
        gs = g[sel]
        du = np.where(u == u_raw, spline.ev(u, v, dx=1), 0.0)
        dv = np.where(v == v_raw, spline.ev(u, v, dy=1), 0.0)
        gr = gp = None
        if r.requires_grad:
            gr = np.zeros(shape)
            gr[sel] = gs * du / rs
            gr = ad._unbroadcast(gr, r.shape)
        if p.requires_grad:
            gp = np.zeros(shape)
            gp[sel] = gs * dv / (ps * (1 - ps))
            gp = ad._unbroadcast(gp, p.shape)
        return gr, gp

    return ad.custom(value, (r, p), grad_fn)


# ---------------------------------------------------------------------------
# component log-densities (autodiff)


def _student_t_log_prob(y, df, loc, scale) -> Tensor:
    z = (y - loc) / scale
    half = (df + 1.0) * 0.5
    return (
        ad.lgamma(half) - ad.lgamma(df * 0.5) - 0.5 * ad.log(math.pi * df) - ad.log(scale)
        - half * ad.log(1.0 + z * z / df)
    )


def _lognormal_log_prob(y: np.ndarray, mu, sigma) -> Tensor:
    support = y > 0
    ly = np.log(np.where(support, y, 1.0))
    lp = -ly - ad.log(sigma) - 0.5 * _LOG_2PI - (ly - mu) ** 2 / (2.0 * sigma * sigma)
    return ad.where(support, lp, LOG_DENSITY_FLOOR)


def _negbin_log_prob(y: np.ndarray, r, log_p, log_1mp, p) -> Tensor:
    support = y >= 0
    ys = np.where(support, y, 0.0)
    lp = (
        ad.lgamma(ys + r) - special.gammaln(ys + 1.0) - ad.lgamma(r) + r * log_1mp + ys * log_p
        - nb_log_normalizer(r, p, where=support)
    )
    return ad.where(support, lp, LOG_DENSITY_FLOOR)


def _lowvar_log_prob(y, mu) -> Tensor:
    z = (y - mu) / LOWVAR_SIGMA
    return -0.5 * z * z - math.log(LOWVAR_SIGMA) - 0.5 * _LOG_2PI


def _component_log_probs(y: np.ndarray, p: dict) -> Tensor:
    """Stack of per-component log-densities, shape ``y.shape + (4,)``."""
    parts = [
        _student_t_log_prob(y, p["df"], p["t_loc"], p["t_scale"]),
        _lognormal_log_prob(y, p["ln_mu"], p["ln_sigma"]),
        _negbin_log_prob(y, p["nb_r"], p["nb_log_p"], p["nb_log_1mp"], p["nb_p"]),
        _lowvar_log_prob(y, p["n_mu"]),
    ]
    shape = np.broadcast_shapes(*(t.shape for t in parts)) + (1,)
    return ad.concat([ad.broadcast_to(t, shape[:-1]).reshape(shape) for t in parts], axis=-1)


def _component_mask(components) -> np.ndarray:
    unknown = set(components) - set(COMPONENTS)
    if unknown or not components:
        raise ValueError(f"unknown mixture components {sorted(unknown)}")
    return np.array([c in components for c in COMPONENTS])


def _constrain_tensor(raw: Tensor, components=COMPONENTS) -> tuple[Tensor, dict]:
    keep = _component_mask(components)
    logits = raw[..., 0:4]
    log_w = ad.log_softmax(logits, axis=-1) if keep.all() else _masked_log_softmax(logits, keep)
    params = {
        "df": DF_MIN + ad.softplus(raw[..., 4]),
        "t_loc": raw[..., 5],
        "t_scale": ad.softplus(raw[..., 6]),
        "ln_mu": raw[..., 7],
        "ln_sigma": ad.softplus(raw[..., 8]),
        "nb_r": ad.softplus(raw[..., 9]),
        "nb_p": ad.sigmoid(raw[..., 10]),
        "nb_log_p": ad.log_sigmoid(raw[..., 10]),
        "nb_log_1mp": ad.log_sigmoid(-raw[..., 10]),
        "n_mu": raw[..., 11],
    }
    return log_w, params


def _masked_log_softmax(logits: Tensor, keep: np.ndarray) -> Tensor:
    # excluded components get log-weight -inf; only kept logits normalize
    idx = np.flatnonzero(keep)
    sub = ad.take(logits, idx, axis=-1)
    lsm = ad.log_softmax(sub, axis=-1)
    full = [None] * len(keep)
    for j, i in enumerate(idx):
        full[i] = lsm[..., j : j + 1]
    neg_inf = np.full(lsm.shape[:-1] + (1,), -np.inf)
    return ad.concat([f if f is not None else ad.Tensor(neg_inf) for f in full], axis=-1)


def mixture_log_prob(raw: Tensor, y, components=COMPONENTS) -> Tensor:
    """log p(y) from raw head outputs ``[..., 12]``; differentiable in ``raw``."""
    raw = ad.as_tensor(raw)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(raw.data)):
        raise NumericError("non-finite raw mixture parameters")
    log_w, params = _constrain_tensor(raw, components)
    comp = _component_log_probs(y, params)
    return ad.logsumexp(log_w + comp, axis=-1)


def nll_loss(raw: Tensor, targets, loss_mask, components=COMPONENTS) -> Tensor:
    """Mean negative log-likelihood over elements where ``loss_mask`` holds.

    ``raw`` is ``[..., 12]`` with leading shape equal to ``targets``.
    """
    raw = ad.as_tensor(raw)
    targets = np.asarray(targets, dtype=np.float64)
    loss_mask = np.asarray(loss_mask, dtype=bool)
    if raw.shape[:-1] != targets.shape or targets.shape != loss_mask.shape:
        raise ad.ShapeError(f"shape mismatch: raw {raw.shape}, targets {targets.shape}, mask {loss_mask.shape}")
    idx = np.flatnonzero(loss_mask.ravel())
    if idx.size == 0:
        raise ContractError("empty loss mask")
    flat = ad.take(raw.reshape(-1, raw.shape[-1]), idx, axis=0)
    lp = mixture_log_prob(flat, targets.ravel()[idx], components)
    return -lp.mean()


# ---------------------------------------------------------------------------
# numpy-facing API


def constrain(raw, components=COMPONENTS) -> MixtureParams:
    """Map raw outputs ``[..., 12]`` to constrained :class:`MixtureParams`."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != N_DIST_PARAMS:
        raise ad.ShapeError(f"expected trailing dimension {N_DIST_PARAMS}, got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise NumericError("non-finite raw mixture parameters")
    with ad.no_grad():
        log_w, p = _constrain_tensor(ad.Tensor(raw), components)
    # saturated raw values round to the boundary in float64; keep them interior
    tiny = np.finfo(np.float64).tiny
    return MixtureParams(
        w=np.exp(log_w.data), df=p["df"].data, t_loc=p["t_loc"].data, t_scale=np.maximum(p["t_scale"].data, tiny),
        ln_mu=p["ln_mu"].data, ln_sigma=np.maximum(p["ln_sigma"].data, tiny), nb_r=np.maximum(p["nb_r"].data, tiny),
        nb_p=np.clip(p["nb_p"].data, NB_P_EPS, 1 - NB_P_EPS), n_mu=p["n_mu"].data,
    )


def component_log_probs(params: MixtureParams, y) -> np.ndarray:
    """Per-component log-densities ``[..., 4]`` (floored outside support)."""
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(params.nb_p, float)
    tensors = {
        "df": params.df, "t_loc": params.t_loc, "t_scale": params.t_scale, "ln_mu": params.ln_mu,
        "ln_sigma": params.ln_sigma, "nb_r": params.nb_r, "nb_p": p, "nb_log_p": np.log(p),
        "nb_log_1mp": np.log1p(-p), "n_mu": params.n_mu,
    }
    with ad.no_grad():
        comp = _component_log_probs(y, {k: ad.Tensor(v) for k, v in tensors.items()})
    return comp.data


def log_prob(params: MixtureParams, y) -> np.ndarray:
    """log sum_i w_i p_i(y) via log-sum-exp over components."""
    params.validate()
    comp = component_log_probs(params, y)
    with np.errstate(divide="ignore"):
        log_w = np.log(np.asarray(params.w, float))
    with ad.no_grad():
        return ad.logsumexp(ad.Tensor(log_w + comp), axis=-1).data


def _nb_inverse_cdf(r: float, p: float, u: np.ndarray, grid: int = 4096) -> np.ndarray:
    upper = float(nb_upper_limit(r, p))
    x = np.unique(np.concatenate([upper * np.linspace(0, 1, grid), upper * 2.0 ** -np.arange(1, 40)]))
    logf = nb_unnormalized_log_density(x, r, p)
    f = np.exp(logf - logf.max())
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    return np.interp(u, cdf, x)


def sample(params: MixtureParams, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n_samples`` per element; output shape ``batch + (n_samples,)``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    w = np.asarray(params.w, float)
    batch = w.shape[:-1]
    fields = {
        k: np.broadcast_to(np.asarray(getattr(params, k), float), batch).reshape(-1)
        for k in ("df", "t_loc", "t_scale", "ln_mu", "ln_sigma", "nb_r", "nb_p", "n_mu")
    }
    flat_w = w.reshape(-1, 4)
    n_el = flat_w.shape[0]
    cum = np.cumsum(flat_w, axis=1)
    cum[:, -1] = 1.0
    u = rng.random((n_el, n_samples))
    choice = (u[:, :, None] > cum[:, None, :]).sum(axis=2)
    out = np.empty((n_el, n_samples))

    def col(name):
        return np.repeat(fields[name][:, None], n_samples, axis=1)

    sel = choice == 0
    if sel.any():
        t = rng.standard_t(col("df")[sel])
        out[sel] = col("t_loc")[sel] + col("t_scale")[sel] * t
    sel = choice == 1
    if sel.any():
        out[sel] = np.exp(col("ln_mu")[sel] + col("ln_sigma")[sel] * rng.standard_normal(sel.sum()))
    sel = choice == 2
    if sel.any():
        for e in np.flatnonzero(sel.any(axis=1)):
            k = sel[e]
            out[e, k] = _nb_inverse_cdf(fields["nb_r"][e], fields["nb_p"][e], rng.random(k.sum()))
    sel = choice == 3
    if sel.any():
        out[sel] = col("n_mu")[sel] + LOWVAR_SIGMA * rng.standard_normal(sel.sum())
    return out.reshape(batch + (n_samples,))


def quantiles(samples, levels=QUANTILE_LEVELS) -> np.ndarray:
    """Empirical quantiles along the last axis (linear interpolation).

    Output shape is ``(len(levels),) + samples.shape[:-1]``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[-1] == 0:
        raise ValueError("no samples")
    levels = np.asarray(levels, dtype=np.float64)
    if np.any((levels <= 0) | (levels >= 1)):
        raise ValueError("quantile levels must lie in (0, 1)")
    return np.quantile(samples, levels, axis=-1, method="linear")
