"""Any-variate attention: rotary time encoding plus binary variate biases.

Scores between query token (time i, variate m) and key token (time j,
variate n) are::

    E = <rot(qk_norm(W_Q x), i), rot(qk_norm(W_K x), j)> / sqrt(d_kv)
        + u1 [m == n] + u2 [m != n]

Attention is bidirectional and restricted to tokens of the same packed
sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor

ROPE_BASE = 10000.0
QK_NORM_EPS = 1e-6


@dataclass
class AttentionParams:
    wq: Tensor  # [d_model, heads * d_kv]
    wk: Tensor
    wv: Tensor
    wo: Tensor  # [heads * d_kv, d_model]
    q_gain: Tensor  # [d_kv]
    k_gain: Tensor
    u1: Tensor  # [heads], same-variate bias
    u2: Tensor  # [heads], cross-variate bias
    heads: int
    d_kv: int

    @classmethod
    def init(cls, d_model: int, heads: int, d_kv: int, rng: np.random.Generator, prefix: str = "") -> AttentionParams:
        def xavier(fan_in, fan_out, name):
            std = (2.0 / (fan_in + fan_out)) ** 0.5
            return Tensor(rng.normal(0, std, (fan_in, fan_out)), requires_grad=True, name=prefix + name)

        inner = heads * d_kv
        return cls(
            wq=xavier(d_model, inner, "wq"),
            wk=xavier(d_model, inner, "wk"),
            wv=xavier(d_model, inner, "wv"),
            wo=xavier(inner, d_model, "wo"),
            q_gain=Tensor(np.ones(d_kv), requires_grad=True, name=prefix + "q_gain"),
            k_gain=Tensor(np.ones(d_kv), requires_grad=True, name=prefix + "k_gain"),
            u1=Tensor(np.zeros(heads), requires_grad=True, name=prefix + "u1"),
            u2=Tensor(np.zeros(heads), requires_grad=True, name=prefix + "u2"),
            heads=heads,
            d_kv=d_kv,
        )

    def parameters(self) -> list[Tensor]:
        return [self.wq, self.wk, self.wv, self.wo, self.q_gain, self.k_gain, self.u1, self.u2]


# ---------------------------------------------------------------------------
# rotary encoding


def rotary_tables(positions, d_kv: int, base: float = ROPE_BASE):
    """cos/sin tables ``positions.shape + (d_kv,)`` for half-split pairing.

    Frequency ``k`` (``k < d_kv/2``) rotates the pair ``(k, k + d_kv/2)`` by
    ``position * base**(-2k/d_kv)``.
    """
    if d_kv % 2:
        raise ValueError("d_kv must be even for rotary encoding")
    half = d_kv // 2
    inv_freq = base ** (-np.arange(half) * 2.0 / d_kv)
    angles = np.asarray(positions, dtype=np.float64)[..., None] * inv_freq
    angles = np.concatenate([angles, angles], axis=-1)
    return np.cos(angles), np.sin(angles)


def rotate(v, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    return ad.rotate_pairs(v, cos, sin)


def qk_normalize(v, gain) -> Tensor:
    """RMS-normalize the last axis, then scale by ``gain``."""
    return ad.rms_norm(v, gain, QK_NORM_EPS)


def _prepare(x: Tensor, w: Tensor, gain: Tensor, cos, sin, heads: int, d_kv: int) -> Tensor:
    # x [B, N, d] -> [B, H, N, d_kv], normalized then rotated
    b, n, _ = x.shape
    v = (x @ w).reshape(b, n, heads, d_kv).transpose(0, 2, 1, 3)
    return rotate(qk_normalize(v, gain), cos, sin)


# ---------------------------------------------------------------------------
# scores and attention


def allowed_keys(sample_id: np.ndarray) -> np.ndarray:
    """Block-diagonal mask ``[B, N, N]``; padding tokens (id < 0) see only
    themselves and are seen by nobody else."""
    sid = np.asarray(sample_id)
    same = (sid[..., :, None] == sid[..., None, :]) & (sid[..., :, None] >= 0)
    eye = np.eye(sid.shape[-1], dtype=bool)
    pad = sid < 0
    return same | (eye & pad[..., :, None])


def scores(x, time_id, variate_id, sample_id, params: AttentionParams) -> Tensor:
    """Pre-softmax scores ``[B, H, N, N]``; disallowed pairs are ``-inf``."""
    x = ad.as_tensor(x)
    time_id = np.asarray(time_id)
    variate_id = np.asarray(variate_id)
    cos, sin = rotary_tables(time_id, params.d_kv)
    cos, sin = cos[:, None], sin[:, None]
    q = _prepare(x, params.wq, params.q_gain, cos, sin, params.heads, params.d_kv)
    k = _prepare(x, params.wk, params.k_gain, cos, sin, params.heads, params.d_kv)
    e = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(params.d_kv))
    same = (variate_id[:, :, None] == variate_id[:, None, :])[:, None].astype(np.float64)
    h = params.heads
    e = e + params.u1.reshape(1, h, 1, 1) * same + params.u2.reshape(1, h, 1, 1) * (1.0 - same)
    allowed = allowed_keys(sample_id)
    if not allowed.any(axis=-1).all():
        raise ContractError("a token has no allowed keys")
    return ad.where(allowed[:, None], e, -np.inf)


def contiguous_segments(sample_id: np.ndarray):
    """Runs of equal non-negative sample ids in the flattened ``[B, N]`` grid.

    Returns ``(segments, pads)`` as flat index ranges, or ``None`` when some
    sample is not contiguous within a single row.
    """
    sid = np.asarray(sample_id)
    b, n = sid.shape
    segments, seen = [], set()
    for r in range(b):
        row = sid[r]
        change = np.flatnonzero(np.diff(row)) + 1
        starts = np.concatenate([[0], change])
        ends = np.concatenate([change, [n]])
        for s, e in zip(starts, ends):
            key = int(row[s])
            if key < 0:
                continue
            if key in seen:
                return None
            seen.add(key)
            segments.append((r * n + int(s), r * n + int(e)))
    pads = np.flatnonzero(sid.reshape(-1) < 0)
    return segments, pads


_BUCKETS = (8, 16, 24, 32, 48, 64, 96)


@dataclass
class SegmentGroup:
    idx: np.ndarray  # [G, L] flat token indices (0 where padded)
    valid: np.ndarray | None  # [G, L], None when nothing is padded
    same: np.ndarray  # [G, L, L] same-variate indicator as float

    @property
    def flat(self) -> np.ndarray:
        return self.idx.reshape(-1) if self.valid is None else self.idx[self.valid]


@dataclass
class SegmentLayout:
    """Packed-sample structure shared by every layer of one forward pass."""

    groups: list[SegmentGroup]
    pads: np.ndarray

    @classmethod
    def build(cls, sample_id, variate_id) -> SegmentLayout | None:
        found = contiguous_segments(np.atleast_2d(sample_id))
        if found is None:
            return None
        segments, pads = found
        vid = np.asarray(variate_id).reshape(-1)
        small: dict[int, list] = {}
        groups = []
        for s, e in segments:
            width = next((w for w in _BUCKETS if w >= e - s), None)
            if width is None:  # long segments run alone, unpadded
                idx = np.arange(s, e)[None]
                groups.append(SegmentGroup(idx, None, cls._same(vid[idx])))
            else:
                small.setdefault(width, []).append((s, e))
        for width, segs in sorted(small.items()):
            idx = np.zeros((len(segs), width), dtype=np.int64)
            valid = np.zeros((len(segs), width), dtype=bool)
            for g, (s, e) in enumerate(segs):
                idx[g, : e - s] = np.arange(s, e)
                valid[g, : e - s] = True
            vi = np.where(valid, vid[idx], -1)
            groups.append(SegmentGroup(idx, None if valid.all() else valid, cls._same(vi)))
        return cls(groups, pads)

    @staticmethod
    def _same(vi: np.ndarray) -> np.ndarray:
        return (vi[:, :, None] == vi[:, None, :]).astype(np.float64)


def segment_attention(q, k, v, u1, u2, layout: SegmentLayout) -> Tensor:
    """Softmax attention restricted to contiguous token segments.

    ``q``, ``k``, ``v`` are ``[H, T, d_kv]`` (already normalized and rotated);
    padding tokens attend only to themselves. Short segments are zero-padded
    into buckets and batched; padded keys get zero weight. Only ``u1 - u2``
    enters the scores because a shift shared by every key cancels in the
    softmax; the gradient of ``u2`` is therefore ``-du1``.
    """
    q, k, v, u1, u2 = (ad.as_tensor(t) for t in (q, k, v, u1, u2))
    c = 1.0 / np.sqrt(q.shape[-1])
    delta = (u1.data - u2.data)[:, None, None, None]
    out = np.zeros_like(v.data)
    cache = []
    for grp in layout.groups:
        qs, ks, vs = q.data[:, grp.idx] * c, k.data[:, grp.idx], v.data[:, grp.idx]  # [H, G, L, d]
        a = qs @ np.swapaxes(ks, -1, -2)
        a += delta * grp.same
        if grp.valid is not None:
            a += np.where(grp.valid, 0.0, -np.inf)[None, :, None, :]
        a -= a.max(axis=-1, keepdims=True)
        np.exp(a, out=a)
        a *= 1.0 / a.sum(axis=-1, keepdims=True)
        o = a @ vs
        if grp.valid is None:
            out[:, grp.flat] = o.reshape(o.shape[0], -1, o.shape[-1])
        else:
            out[:, grp.flat] = o[:, grp.valid]
        cache.append((a, o, qs, ks, vs))
    pads = layout.pads
    if pads.size:
        out[:, pads] = v.data[:, pads]

    def grad_fn(g):
        dq = np.zeros_like(q.data)
        dk = np.zeros_like(k.data)
        dv = np.zeros_like(v.data)
        dd = np.zeros_like(u1.data)
        for grp, (a, o, qs, ks, vs) in zip(layout.groups, cache):
            gs = g[:, grp.idx]
            if grp.valid is not None:
                gs = gs * grp.valid[None, :, :, None]
            de = gs @ np.swapaxes(vs, -1, -2)
            de -= (gs * o).sum(axis=-1)[..., None]  # rowsum(dA * A) == rowsum(dO * O)
            de *= a
            h = de.shape[0]
            dd += de.reshape(h, -1) @ grp.same.reshape(-1)
            sel = (slice(None), grp.valid) if grp.valid is not None else None

            def put(dst, val):
                if sel is None:
                    dst[:, grp.flat] = val.reshape(h, -1, val.shape[-1])
                else:
                    dst[:, grp.flat] = val[sel]

            put(dq, (de @ ks) * c)
            put(dk, np.swapaxes(de, -1, -2) @ qs)
            put(dv, np.swapaxes(a, -1, -2) @ gs)
        if pads.size:
            dv[:, pads] = g[:, pads]
        return dq, dk, dv, dd, -dd

    return ad.custom(out, (q, k, v, u1, u2), grad_fn)


def attend(x, time_id, variate_id, sample_id, params: AttentionParams, return_weights: bool = False,
           dense: bool = False, layout: SegmentLayout | None = None):
    """Multi-head any-variate attention over ``x`` of shape ``[B, N, d]``.

    Unbatched ``[N, d]`` input (with 1-D ids) is accepted and returned
    unbatched. Contiguously packed samples use the segment kernel; anything
    else, or a request for the attention weights, takes the dense masked path.
    Pass a prebuilt ``layout`` to share it across layers.
    """
    x = ad.as_tensor(x)
    unbatched = x.ndim == 2
    if unbatched:
        x = x.reshape(1, *x.shape)
        time_id, variate_id, sample_id = (np.asarray(a)[None] for a in (time_id, variate_id, sample_id))
    time_id, variate_id, sample_id = (np.asarray(a) for a in (time_id, variate_id, sample_id))
    b, n, _ = x.shape
    h, dk = params.heads, params.d_kv
    if dense or return_weights:
        layout = None
    elif layout is None:
        layout = SegmentLayout.build(sample_id, variate_id)
    if layout is None:
        e = scores(x, time_id, variate_id, sample_id, params)
        a = ad.softmax(e, axis=-1)
        v = (x @ params.wv).reshape(b, n, h, dk).transpose(0, 2, 1, 3)
        ctx = (a @ v).transpose(0, 2, 1, 3).reshape(b, n, h * dk)
    else:
        flat = x.reshape(b * n, x.shape[-1])
        cos, sin = rotary_tables(time_id.reshape(-1), dk)
        cos, sin = cos[:, None], sin[:, None]

        def heads_first(w, gain=None):
            t = (flat @ w).reshape(b * n, h, dk)
            if gain is not None:
                t = rotate(qk_normalize(t, gain), cos, sin)
            return t.transpose(1, 0, 2)

        q = heads_first(params.wq, params.q_gain)
        k = heads_first(params.wk, params.k_gain)
        v = heads_first(params.wv)
        o = segment_attention(q, k, v, params.u1, params.u2, layout)
        ctx = o.transpose(1, 0, 2).reshape(b, n, h * dk)
        a = None
    out = ctx @ params.wo
    if unbatched:
        out = out.reshape(n, out.shape[-1])
        a = a.reshape(*a.shape[1:]) if a is not None else None
    return (out, a) if return_weights else out


def score(x_q, x_k, time_q: int, time_k: int, variate_q: int, variate_k: int,
          params: AttentionParams, head: int = 0) -> float:
    """Scalar pre-softmax score between one query and one key token."""
    xq, xk = np.asarray(x_q, float), np.asarray(x_k, float)
    dk = params.d_kv
    cols = slice(head * dk, (head + 1) * dk)
    with ad.no_grad():
        q = qk_normalize(xq @ params.wq.data[:, cols], params.q_gain)
        k = qk_normalize(xk @ params.wk.data[:, cols], params.k_gain)
        cq, sq = rotary_tables(np.array(time_q), dk)
        ck, sk = rotary_tables(np.array(time_k), dk)
        q = rotate(q, cq, sq).data
        k = rotate(k, ck, sk).data
    bias = params.u1.data[head] if variate_q == variate_k else params.u2.data[head]
    return float(q @ k / np.sqrt(dk) + bias)
