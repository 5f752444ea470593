import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, cross_attention_direct, infonce_direct, rel_err
from tsjm.featurestore import BadMagicError, ChecksumError, TruncatedPayloadError
from tsjm.mcl import (
    AdapterParams,
    Adapters,
    ContrastiveBatch,
    adapter_backward,
    adapter_forward,
    cross_attention_backward,
    cross_attention_matrix,
    infonce_grad,
    infonce_loss,
    init_adapter,
    init_adapters,
    load_adapters,
    mcl_similarity_matrix,
    save_adapters,
)


def random_params(rng, D=4, B=2, scale=0.5):
    return AdapterParams(rng.standard_normal((D, B)) * scale, rng.standard_normal(B) * scale,
                         rng.standard_normal((B, D)) * scale, rng.standard_normal(D) * scale)


def test_identity_at_init(rng):
    p = init_adapter(8, 2, rng)
    x = rng.standard_normal((5, 8))
    np.testing.assert_array_equal(adapter_forward(x, p), x)


def test_bias_only_shift(rng):
    v = rng.standard_normal(4)
    p = AdapterParams(np.zeros((4, 2)), np.zeros(2), np.zeros((2, 4)), v)
    x = rng.standard_normal((3, 4))
    np.testing.assert_allclose(adapter_forward(x, p), x + v, atol=0)


def test_forward_matches_manual_arithmetic(rng):
    p = random_params(rng)
    x = rng.standard_normal((2, 4))
    for t in range(2):
        h = [max(0.0, sum(x[t, d] * p.W_down[d, b] for d in range(4)) + p.b_down[b]) for b in range(2)]
        out = [x[t, d] + sum(h[b] * p.W_up[b, d] for b in range(2)) + p.b_up[d] for d in range(4)]
        np.testing.assert_allclose(adapter_forward(x, p)[t], out, atol=1e-12)


def test_forward_dimension_mismatch(rng):
    with pytest.raises(ValueError, match="dimension mismatch"):
        adapter_forward(np.ones((2, 5)), random_params(rng))


def test_bottleneck_must_be_narrower():
    with pytest.raises(ValueError):
        init_adapter(4, 4)
    with pytest.raises(ValueError):
        AdapterParams(np.zeros((4, 2)), np.zeros(3), np.zeros((2, 4)), np.zeros(4))
    with pytest.raises(ValueError):
        AdapterParams(np.full((4, 2), np.inf), np.zeros(2), np.zeros((2, 4)), np.zeros(4))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_shape_preserved(T, D, seed):
    r = np.random.default_rng(seed)
    p = random_params(r, D, max(1, D // 2))
    assert adapter_forward(r.standard_normal((T, D)), p).shape == (T, D)


def test_backward_zero_upstream(rng):
    p = random_params(rng)
    x = rng.standard_normal((3, 4))
    gx, gp = adapter_backward(x, p, np.zeros((3, 4)))
    assert not gx.any()
    assert not gp.flat().any()


def test_backward_identity_path(rng):
    p = init_adapter(4, 2, rng)
    x = rng.standard_normal((3, 4))
    g = rng.standard_normal((3, 4))
    gx, _ = adapter_backward(x, p, g)
    np.testing.assert_array_equal(gx, g)


def test_backward_shape_mismatch(rng):
    with pytest.raises(ValueError, match="shape mismatch"):
        adapter_backward(np.ones((3, 4)), random_params(rng), np.ones((2, 4)))


def test_backward_finite_differences(rng):
    D, B = 5, 2
    for _ in range(5):
        p = random_params(rng, D, B)
        x = rng.standard_normal((3, D))
        g = rng.standard_normal((3, D))
        gx, gp = adapter_backward(x, p, g)
        f_x = lambda v: float((adapter_forward(v, p) * g).sum())
        f_p = lambda v: float((adapter_forward(x, AdapterParams.from_flat(v, D, B)) * g).sum())
        assert rel_err(gx, central_difference(f_x, x)) < 1e-6
        num = central_difference(f_p, p.flat())
        for a, b in zip(gp.blocks(), AdapterParams.from_flat(num, D, B).blocks()):
            assert rel_err(a, b) < 1e-6


def test_similarity_matrix_constant_frames():
    seqs = [np.tile(v, (3, 1)) for v in ([1.0, 2.0, 3.0], [0.5, -1, 2], [1, 1, 1])]
    sim = mcl_similarity_matrix(ContrastiveBatch(tuple(seqs), tuple(seqs)))
    np.testing.assert_allclose(np.diag(sim), 1.0, atol=1e-15)
    same = [np.tile([1.0, 2.0, 3.0], (3, 1))] * 2
    np.testing.assert_allclose(mcl_similarity_matrix(ContrastiveBatch(tuple(same), tuple(same))), 1.0, atol=1e-15)


def test_similarity_matrix_single_pair(rng):
    r, f = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
    sim = mcl_similarity_matrix(ContrastiveBatch((r,), (f,)))
    assert sim.shape == (1, 1)
    assert abs(sim[0, 0] - cross_attention_direct(r, f)) < 1e-12


def test_similarity_matrix_entrywise(rng):
    rgb = tuple(rng.standard_normal((4, 6)) for _ in range(3))
    flow = tuple(rng.standard_normal((4, 6)) for _ in range(3))
    sim = mcl_similarity_matrix(ContrastiveBatch(rgb, flow))
    for i in range(3):
        for j in range(3):
            assert abs(sim[i, j] - cross_attention_direct(rgb[i], flow[j])) < 1e-12
    assert np.all(np.abs(sim) <= 1)


def test_similarity_matrix_ragged_lengths(rng):
    rgb = (rng.standard_normal((3, 4)), rng.standard_normal((5, 4)))
    flow = (rng.standard_normal((3, 4)), rng.standard_normal((5, 4)))
    sim = mcl_similarity_matrix(ContrastiveBatch(rgb, flow))
    assert abs(sim[0, 1] - cross_attention_direct(rgb[0], flow[1])) < 1e-12


def test_batch_invariants():
    with pytest.raises(ValueError):
        ContrastiveBatch((), ())
    with pytest.raises(ValueError):
        ContrastiveBatch((np.ones((1, 2)),), (np.ones((1, 2)),), tau=0.0)


def test_infonce_singleton():
    assert infonce_loss([[0.37]], 0.1) == 0.0
    assert not infonce_grad([[0.37]], 0.1).any()


def test_infonce_uniform():
    assert infonce_loss(np.full((4, 4), 0.3), 0.1) == pytest.approx(math.log(4), abs=1e-12)


def test_infonce_direct_formula(rng):
    sim = rng.uniform(-1, 1, (3, 3))
    assert abs(infonce_loss(sim, 0.1) - infonce_direct(sim.tolist(), 0.1)) < 1e-10


def test_infonce_errors():
    with pytest.raises(ValueError, match="non-square"):
        infonce_loss(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        infonce_loss(np.zeros((2, 2)), 0.0)
    with pytest.raises(ValueError):
        infonce_grad(np.zeros((2, 2)), -1.0)


def test_infonce_grad_finite_differences(rng):
    sim = rng.uniform(-1, 1, (4, 4))
    num = central_difference(lambda s: infonce_loss(s, 0.5), sim)
    assert rel_err(infonce_grad(sim, 0.5), num) < 1e-6


def test_infonce_grad_rows_sum_to_zero(rng):
    # each softmax direction contributes a zero-sum row (row term) or column (column term)
    sim = rng.uniform(-1, 1, (5, 5))
    g = infonce_grad(sim, 0.2)
    assert abs(g.sum()) < 1e-12
    z = sim / 0.2
    p_row = np.exp(z - z.max(1, keepdims=True))
    p_row /= p_row.sum(1, keepdims=True)
    np.testing.assert_allclose((p_row - np.eye(5)).sum(1), 0, atol=1e-12)


@settings(max_examples=100)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1), st.floats(0.05, 2.0))
def test_infonce_positive_and_permutation_invariant(k, seed, tau):
    r = np.random.default_rng(seed)
    sim = r.uniform(-1, 1, (k, k))
    base = infonce_loss(sim, tau)
    assert base > 0
    pi = r.permutation(k)
    assert abs(infonce_loss(sim[np.ix_(pi, pi)], tau) - base) < 1e-12


@settings(max_examples=100)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_infonce_monotone_in_diagonal(k, seed, bump):
    r = np.random.default_rng(seed)
    sim = r.uniform(-1, 1, (k, k))
    i = int(r.integers(k))
    up = sim.copy()
    up[i, i] += bump
    assert infonce_loss(up, 0.1) <= infonce_loss(sim, 0.1) + 1e-12


def test_end_to_end_chain_finite_differences(rng):
    k, T, D, B, tau = 3, 4, 6, 2, 0.3
    rgb, flow = rng.standard_normal((k, T, D)), rng.standard_normal((k, T, D))
    pr, pf = random_params(rng, D, B), random_params(rng, D, B)
    n = pr.flat().size

    def loss(vec):
        a, b = AdapterParams.from_flat(vec[:n], D, B), AdapterParams.from_flat(vec[n:], D, B)
        sim = np.array([[cross_attention_direct(adapter_forward(rgb[i], a), adapter_forward(flow[j], b))
                         for j in range(k)] for i in range(k)])
        return infonce_direct(sim.tolist(), tau)

    sim, cache = cross_attention_matrix(adapter_forward(rgb, pr), adapter_forward(flow, pf))
    dxr, dxf = cross_attention_backward(cache, infonce_grad(sim, tau))
    analytic = np.concatenate([adapter_backward(rgb, pr, dxr)[1].flat(), adapter_backward(flow, pf, dxf)[1].flat()])
    num = central_difference(loss, np.concatenate([pr.flat(), pf.flat()]))
    assert rel_err(analytic, num) < 1e-4


def test_adapter_checkpoint_round_trip(tmp_path, rng):
    ad = Adapters(random_params(rng, 8, 2), random_params(rng, 8, 2))
    path = tmp_path / "a.adpt"
    save_adapters(ad, path)
    back = load_adapters(path)
    for a, b in ((ad.rgb, back.rgb), (ad.flow, back.flow)):
        np.testing.assert_array_equal(b.flat(), a.flat().astype(np.float32))
    save_adapters(back, tmp_path / "b.adpt")
    assert (tmp_path / "b.adpt").read_bytes() == path.read_bytes()


def test_adapter_checkpoint_errors(tmp_path):
    ad = init_adapters(8, 2, seed=1)
    path = tmp_path / "a.adpt"
    save_adapters(ad, path)
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.adpt"
    bad.write_bytes(b"XDPT" + bytes(raw[4:]))
    with pytest.raises(BadMagicError):
        load_adapters(bad)
    flipped = raw.copy()
    flipped[20] ^= 0xFF
    bad.write_bytes(bytes(flipped))
    with pytest.raises(ChecksumError):
        load_adapters(bad)
    bad.write_bytes(bytes(raw[:30]))
    with pytest.raises(TruncatedPayloadError):
        load_adapters(bad)
