import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anyvariate import autodiff as ad
from anyvariate.attention import (
    AttentionParams,
    SegmentLayout,
    allowed_keys,
    attend,
    contiguous_segments,
    rotary_tables,
    score,
    scores,
)
from anyvariate.autodiff import Tensor

D, H, DK = 16, 2, 8


def params(seed=0, bias=True):
    p = AttentionParams.init(D, H, DK, np.random.default_rng(seed))
    if bias:
        p.u1.data = np.array([0.7, -0.3])
        p.u2.data = np.array([-0.2, 0.5])
    return p


def grid(nvar, npatch):
    """Token ids for one sample laid out variate-major."""
    return np.tile(np.arange(npatch), nvar), np.repeat(np.arange(nvar), npatch), np.zeros(nvar * npatch, int)


def test_rotary_relative_property():
    rng = np.random.default_rng(0)
    q, k = rng.normal(size=DK), rng.normal(size=DK)
    p = params()

    def dot(i, j):
        cq, sq = rotary_tables(np.array(i), DK)
        ck, sk = rotary_tables(np.array(j), DK)
        with ad.no_grad():
            return float(ad.rotate_pairs(Tensor(q), cq, sq).data @ ad.rotate_pairs(Tensor(k), ck, sk).data)

    assert dot(3, 1) == pytest.approx(dot(103, 101), abs=1e-12)
    assert p.heads == H


def test_score_matches_hand_computation():
    """Re-derive one score from the raw weights with plain numpy."""
    rng = np.random.default_rng(1)
    p = params()
    p.q_gain.data = rng.uniform(0.5, 1.5, DK)
    xq, xk = rng.normal(size=D), rng.normal(size=D)
    for head, (ti, tj, vi, vj) in enumerate([(4, 1, 0, 0), (2, 6, 1, 3)]):
        cols = slice(head * DK, (head + 1) * DK)

        def prep(x, w, g, t):
            z = x @ w[:, cols]
            z = z / np.sqrt(np.mean(z * z) + 1e-6) * g
            half = DK // 2
            ang = t * 10000.0 ** (-np.arange(half) * 2.0 / DK)
            a, b = z[:half], z[half:]
            return np.concatenate([a * np.cos(ang) - b * np.sin(ang), b * np.cos(ang) + a * np.sin(ang)])

        qv = prep(xq, p.wq.data, p.q_gain.data, ti)
        kv = prep(xk, p.wk.data, p.k_gain.data, tj)
        bias = p.u1.data[head] if vi == vj else p.u2.data[head]
        expected = qv @ kv / np.sqrt(DK) + bias
        assert score(xq, xk, ti, tj, vi, vj, p, head) == pytest.approx(expected, abs=1e-12)
        x = np.stack([xq, xk])[None]
        e = scores(x, np.array([[ti, tj]]), np.array([[vi, vj]]), np.zeros((1, 2), int), p)
        assert e.data[0, head, 0, 1] == pytest.approx(expected, abs=1e-12)


def test_allowed_keys_isolates_padding():
    m = allowed_keys(np.array([[0, 0, 1, -1, -1]]))[0]
    assert m[0, 1] and not m[0, 2] and not m[2, 0]
    assert m[3, 3] and not m[3, 4] and not m[0, 3]


def test_contiguous_segments():
    segs, pads = contiguous_segments(np.array([[0, 0, 1, -1], [2, 2, 2, -1]]))
    assert segs == [(0, 2), (2, 3), (4, 7)]
    assert pads.tolist() == [3, 7]
    assert contiguous_segments(np.array([[0, 1, 0]])) is None


@pytest.mark.parametrize("nvar,npatch", [(1, 5), (3, 4), (2, 70)])
def test_segment_kernel_matches_dense(nvar, npatch):
    rng = np.random.default_rng(nvar)
    t, v, s = grid(nvar, npatch)
    n = t.size
    # two copies of the sample plus padding in one row
    tid = np.concatenate([t, t + 5, [-1, -1]])
    vid = np.concatenate([v, v, [-1, -1]])
    sid = np.concatenate([s, s + 1, [-1, -1]])
    x = rng.normal(size=(1, 2 * n + 2, D))
    p = params()
    outs, grads = [], []
    for dense in (True, False):
        xt = Tensor(x, requires_grad=True)
        w = np.random.default_rng(9).normal(size=(1, 2 * n + 2, D))
        for t_ in p.parameters():
            t_.grad = None
        (attend(xt, tid[None], vid[None], sid[None], p, dense=dense) * w).sum().backward()
        outs.append(attend(x, tid[None], vid[None], sid[None], p, dense=dense).data)
        grads.append([xt.grad] + [t_.grad.copy() for t_ in p.parameters()])
    np.testing.assert_allclose(outs[0], outs[1], atol=1e-12)
    for a, b in zip(*grads):
        np.testing.assert_allclose(a, b, atol=1e-11)


def test_attention_gradient_finite_difference():
    rng = np.random.default_rng(3)
    t, v, s = grid(2, 3)
    x = Tensor(rng.normal(size=(6, D)), requires_grad=True)
    p = params()
    w = rng.normal(size=(6, D))

    def f():
        return (attend(x, t, v, s, p) * w).sum()

    f().backward()
    for tensor in [x, *p.parameters()]:
        assert ad.relative_error(tensor.grad, ad.numerical_grad(f, tensor)) < 1e-4


def test_u2_gradient_is_minus_u1_gradient():
    t, v, s = grid(2, 3)
    p = params()
    x = np.random.default_rng(4).normal(size=(6, D))
    attend(x, t, v, s, p).sum().backward()
    np.testing.assert_allclose(p.u2.grad, -p.u1.grad, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(nvar=st.integers(1, 5), npatch=st.integers(1, 6), seed=st.integers(0, 10_000), dense=st.booleans())
def test_variate_permutation_equivariance(nvar, npatch, seed, dense):
    rng = np.random.default_rng(seed)
    t, v, s = grid(nvar, npatch)
    x = rng.normal(size=(t.size, D))
    p = params(seed)
    out = attend(x, t, v, s, p, dense=dense).data
    perm = rng.permutation(nvar)
    # token order follows the permuted variate order
    order = np.concatenate([np.flatnonzero(v == k) for k in perm])
    out_p = attend(x[order], t[order], v[order], s, p, dense=dense).data
    np.testing.assert_allclose(out_p, out[order], atol=1e-7)


@settings(max_examples=20, deadline=None)
@given(nvar=st.integers(1, 5), seed=st.integers(0, 10_000))
def test_variate_relabel_invariance_exact(nvar, seed):
    rng = np.random.default_rng(seed)
    t, v, s = grid(nvar, 4)
    x = rng.normal(size=(t.size, D))
    p = params(seed)
    labels = rng.choice(1000, size=nvar, replace=False)
    for dense in (True, False):
        a = attend(x, t, v, s, p, dense=dense).data
        b = attend(x, t, labels[v], s, p, dense=dense).data
        assert np.array_equal(a, b)


@settings(max_examples=20, deadline=None)
@given(shift=st.integers(1, 5000), seed=st.integers(0, 10_000))
def test_time_shift_invariance(shift, seed):
    rng = np.random.default_rng(seed)
    t, v, s = grid(3, 5)
    x = rng.normal(size=(t.size, D))
    p = params(seed)
    np.testing.assert_allclose(attend(x, t + shift, v, s, p).data, attend(x, t, v, s, p).data, atol=1e-7)


@pytest.mark.parametrize("nvar", [1, 5, 50])
def test_any_number_of_variates(nvar):
    t, v, s = grid(nvar, 3)
    x = np.random.default_rng(nvar).normal(size=(t.size, D))
    out = attend(x, t, v, s, params())
    assert out.shape == (t.size, D) and np.isfinite(out.data).all()


def test_cross_sample_isolation():
    rng = np.random.default_rng(5)
    t, v, s = grid(2, 3)
    x = rng.normal(size=(12, D))
    ids = np.concatenate([s, s + 1])
    p = params()
    base = attend(x[None], np.tile(t, 2)[None], np.tile(v, 2)[None], ids[None], p).data[0]
    x2 = x.copy()
    x2[6:] += 10.0
    moved = attend(x2[None], np.tile(t, 2)[None], np.tile(v, 2)[None], ids[None], p).data[0]
    np.testing.assert_array_equal(base[:6], moved[:6])


def test_return_weights_rows_sum_to_one():
    t, v, s = grid(2, 4)
    out, a = attend(np.ones((8, D)), t, v, s, params(), return_weights=True)
    np.testing.assert_allclose(a.data.sum(-1), 1.0, atol=1e-12)
    assert a.shape == (H, 8, 8)


def test_layout_none_for_split_sample():
    assert SegmentLayout.build(np.array([[0, 1, 0]]), np.zeros((1, 3), int)) is None
