import math

import numpy as np
import pytest

from feakm.keypoint import KeypointSet
from feakm.matcher import (
    AssignmentMatrix,
    AttentionWeights,
    MatchFailure,
    attend,
    attention_probs,
    attention_round,
    build_assignment,
    filter_matches,
    match_keypoints,
    rotary_encode,
)

from oracles import naive_sinkhorn


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# rotary encoding

def test_rotary_zero_position_is_identity():
    v = np.arange(8.0)
    np.testing.assert_array_equal(rotary_encode(v, [0.0, 0.0]), v)


def test_rotary_preserves_norm_and_rejects_odd_dims():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(16)
    assert np.linalg.norm(rotary_encode(v, [3.0, -7.5])) == pytest.approx(np.linalg.norm(v), rel=1e-12)
    with pytest.raises(ValueError):
        rotary_encode(np.ones(3), [0, 0])


def test_rotary_relative_position_identity():
    rng = np.random.default_rng(1)
    for _ in range(200):
        q, k = rng.standard_normal((2, 32))
        p, r, s = rng.uniform(-50, 50, size=(3, 2))
        lhs = rotary_encode(q, p) @ rotary_encode(k, r)
        rhs = rotary_encode(q, p + s) @ rotary_encode(k, r + s)
        assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))


def test_rotary_pairs_alternate_axes():
    v = np.array([1.0, 0.0, 1.0, 0.0])
    out = rotary_encode(v, [math.pi / 2, 0.0], base_frequency=1.0)
    # pair 0 follows x (turned 90 degrees), pair 1 follows y (untouched)
    np.testing.assert_allclose(out, [0.0, 1.0, 1.0, 0.0], atol=1e-15)


# attention

def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(2)
    p = attention_probs(rng.standard_normal((7, 8)) * 5, rng.standard_normal((11, 8)) * 5)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0)


def test_single_point_attention_by_hand():
    x = np.array([[1.0, 2.0]])
    eye = np.eye(2)
    z, p = attend(x, [[0, 0]], np.array([[3.0, -1.0]]), [[0, 0]], eye, eye, eye)
    assert p[0, 0] == 1.0
    np.testing.assert_array_equal(z, [[3.0, -1.0]])


def test_attention_is_permutation_equivariant_bit_exact():
    rng = np.random.default_rng(3)
    w = AttentionWeights.initialize(16, 1, seed=4)
    xa, xb = rng.standard_normal((9, 16)), rng.standard_normal((6, 16))
    pa, pb = rng.uniform(0, 100, (9, 2)), rng.uniform(0, 100, (6, 2))
    ya, yb = attention_round(xa, pa, xb, pb, w.wq[0], w.wk[0], w.wv[0])
    perm_a, perm_b = rng.permutation(9), rng.permutation(6)
    za, zb = attention_round(xa[perm_a], pa[perm_a], xb[perm_b], pb[perm_b], w.wq[0], w.wk[0], w.wv[0])
    assert np.array_equal(za, ya[perm_a])
    assert np.array_equal(zb, yb[perm_b])


def test_attention_round_empty_side_passes_through():
    rng = np.random.default_rng(5)
    w = AttentionWeights.initialize(4, 1)
    xa = rng.standard_normal((3, 4))
    ya, yb = attention_round(xa, np.zeros((3, 2)), np.zeros((0, 4)), np.zeros((0, 2)), w.wq[0], w.wk[0], w.wv[0])
    assert yb.shape == (0, 4)
    expected = xa + attend(xa, np.zeros((3, 2)), xa, np.zeros((3, 2)), w.wq[0], w.wk[0], w.wv[0])[0]
    np.testing.assert_array_equal(ya, expected)


def test_attention_weights_are_seeded():
    a = AttentionWeights.initialize(8, 2, seed=9)
    b = AttentionWeights.initialize(8, 2, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a.wq + a.wk + a.wv, b.wq + b.wk + b.wv))
    assert a.layers == 2 and a.dim == 8


# assignment

def test_sinkhorn_marginals_random_instances():
    rng = np.random.default_rng(6)
    for _ in range(100):
        m, n = rng.integers(1, 20, size=2)
        a = build_assignment(unit_rows(rng, m, 16), unit_rows(rng, n, 16))
        np.testing.assert_allclose(a.scores.sum(axis=1) + a.row_bin, 1.0, atol=1e-6)
        np.testing.assert_allclose(a.scores.sum(axis=0) + a.col_bin, 1.0, atol=1e-6)
        assert np.all(a.scores >= 0)


def test_sinkhorn_matches_naive_oracle():
    rng = np.random.default_rng(7)
    da, db = unit_rows(rng, 5, 8), unit_rows(rng, 4, 8)
    a = build_assignment(da, db, temperature=1.0, dustbin_similarity=0.5)
    ref = naive_sinkhorn(da @ db.T, 0.5)
    np.testing.assert_allclose(a.scores, ref[:5, :4], atol=1e-9)
    np.testing.assert_allclose(a.row_bin, ref[:5, 4], atol=1e-9)


def test_orthonormal_descriptors_give_identity():
    q, _ = np.linalg.qr(np.random.default_rng(8).standard_normal((16, 16)))
    d = q[:6]
    a = build_assignment(d, d, temperature=0.02)
    np.testing.assert_allclose(a.scores, np.eye(6), atol=1e-3)
    # both solvers creep toward the exact identity here, so agreement is loose
    ref = naive_sinkhorn(d @ d.T / 0.02, 0.5 / 0.02)
    np.testing.assert_allclose(ref[:6, :6], np.eye(6), atol=1e-3)
    np.testing.assert_allclose(a.scores, ref[:6, :6], atol=1e-4)
    m = filter_matches(a, 0.2, 4)
    assert [(i, j) for i, j, _ in m.pairs] == [(k, k) for k in range(6)]


def test_empty_sides_send_mass_to_dustbin():
    a = build_assignment(np.zeros((0, 4)), unit_rows(np.random.default_rng(0), 3, 4))
    assert a.shape == (0, 3)
    np.testing.assert_array_equal(a.col_bin, 1.0)


# filtering

def test_filter_examples():
    s = np.zeros((6, 6))
    for k in range(5):
        s[k, k] = 0.9
    s[5, 5] = 0.1
    a = AssignmentMatrix(s, 1 - s.sum(1), 1 - s.sum(0))
    got = filter_matches(a, 0.2, 4)
    assert len(got) == 5
    fail = filter_matches(a, 0.2, 8)
    assert isinstance(fail, MatchFailure) and not fail
    assert (fail.found, fail.required) == (5, 8)
    with pytest.raises(ValueError):
        filter_matches(a, 0.2, 1)


def test_filter_requires_mutual_best():
    s = np.array([[0.6, 0.3], [0.5, 0.4]])
    got = filter_matches(AssignmentMatrix(s, np.zeros(2), np.zeros(2)), 0.2, 2)
    assert isinstance(got, MatchFailure) and got.found == 1


def test_match_keypoints_is_deterministic_and_translation_equivariant():
    rng = np.random.default_rng(9)
    desc = unit_rows(rng, 12, 16)
    coords = rng.uniform(0, 100, (12, 2))
    perm = rng.permutation(12)
    kp_a = KeypointSet(coords, desc, np.ones(12))
    kp_b = KeypointSet(coords[perm], desc[perm], np.ones(12))
    w = AttentionWeights.initialize(16, 2, seed=1)
    m1, _ = match_keypoints(kp_a, kp_b, 4, weights=w)
    m2, _ = match_keypoints(kp_a, kp_b, 4, weights=w)
    assert m1.pairs == m2.pairs
    # shifting both sets together leaves every relative position unchanged
    kp_a7 = KeypointSet(coords + 7.0, desc, np.ones(12))
    kp_b7 = KeypointSet(coords[perm] + 7.0, desc[perm], np.ones(12))
    m3, _ = match_keypoints(kp_a7, kp_b7, 4, weights=w)
    assert [(i, j) for i, j, _ in m1.pairs] == [(i, j) for i, j, _ in m3.pairs]
    np.testing.assert_allclose(m1.confidences, m3.confidences, atol=1e-9)
    assert sorted((i, perm[j]) for i, j, _ in m1.pairs) == [(k, k) for k in range(12)]
