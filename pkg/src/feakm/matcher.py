"""Keypoint matching: rotary-encoded attention, Sinkhorn assignment, mutual filtering.

Attention sums are taken over sorted contributions so that permuting the
points of either set permutes the outputs bit-for-bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


def rotary_encode(vec, position, base_frequency: float = 10000.0) -> np.ndarray:
    """Rotate consecutive feature pairs by position-dependent angles.

    Pair ``k`` turns by ``position[k % 2] * base ** (-2k / D)``: even pairs
    follow the x axis, odd pairs the y axis. Works on a single vector with a
    single position or on stacked (N, D) / (N, 2) inputs.
    """
    v = np.asarray(vec, dtype=float)
    p = np.asarray(position, dtype=float)
    d = v.shape[-1]
    if d % 2:
        raise ValueError(f"rotary encoding needs an even dimension, got {d}")
    k = np.arange(d // 2)
    omega = base_frequency ** (-2.0 * k / d)
    axis = k % 2
    theta = p[..., axis] * omega  # (..., D/2)
    c, s = np.cos(theta), np.sin(theta)
    even, odd = v[..., 0::2], v[..., 1::2]
    out = np.empty_like(v)
    out[..., 0::2] = even * c - odd * s
    out[..., 1::2] = even * s + odd * c
    return out


@dataclass(frozen=True)
class AttentionWeights:
    """Per-layer query/key/value projections, drawn from N(0, 1/D) with a fixed seed."""

    wq: tuple
    wk: tuple
    wv: tuple
    seed: int

    @classmethod
    def initialize(cls, dim: int, layers: int = 2, seed: int = 0) -> "AttentionWeights":
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(dim)
        wq, wk, wv = [], [], []
        for _ in range(layers):
            wq.append(rng.standard_normal((dim, dim)) * scale)
            wk.append(rng.standard_normal((dim, dim)) * scale)
            wv.append(rng.standard_normal((dim, dim)) * scale)
        return cls(tuple(wq), tuple(wk), tuple(wv), seed)

    @property
    def layers(self) -> int:
        return len(self.wq)

    @property
    def dim(self) -> int:
        return self.wq[0].shape[0] if self.wq else 0


def _sorted_sum(x: np.ndarray, axis: int) -> np.ndarray:
    return np.sort(x, axis=axis).sum(axis=axis)


def attention_probs(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Row-wise softmax of q_i . k_j."""
    logits = (q[:, None, :] * k[None, :, :]).sum(axis=-1)
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / _sorted_sum(e, axis=1)[:, None]


def attend(x_q, pos_q, x_kv, pos_kv, wq, wk, wv, base_frequency=10000.0):
    """One attention message ``z_i = sum_j p_ij v_j`` from the key/value set to the query set."""
    q = rotary_encode(x_q @ wq, pos_q, base_frequency)
    k = rotary_encode(x_kv @ wk, pos_kv, base_frequency)
    v = x_kv @ wv
    p = attention_probs(q, k)
    return _sorted_sum(p[:, :, None] * v[None, :, :], axis=1), p


def attention_round(x_a, pos_a, x_b, pos_b, wq, wk, wv, base_frequency=10000.0):
    """Self-attention within each set, then cross-attention between them, residual added.

    An empty set passes through unchanged and contributes nothing to the other.
    """
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    if len(x_a):
        x_a = x_a + attend(x_a, pos_a, x_a, pos_a, wq, wk, wv, base_frequency)[0]
    if len(x_b):
        x_b = x_b + attend(x_b, pos_b, x_b, pos_b, wq, wk, wv, base_frequency)[0]
    if len(x_a) and len(x_b):
        za = attend(x_a, pos_a, x_b, pos_b, wq, wk, wv, base_frequency)[0]
        zb = attend(x_b, pos_b, x_a, pos_a, wq, wk, wv, base_frequency)[0]
        x_a, x_b = x_a + za, x_b + zb
    return x_a, x_b


def run_attention(desc_a, pos_a, desc_b, pos_b, weights: AttentionWeights, base_frequency=10000.0):
    """Apply every layer, then L2-normalize the refined descriptors."""
    a, b = desc_a, desc_b
    for wq, wk, wv in zip(weights.wq, weights.wk, weights.wv):
        a, b = attention_round(a, pos_a, b, pos_b, wq, wk, wv, base_frequency)
    return _normalize(a), _normalize(b)


def _normalize(x):
    x = np.asarray(x, dtype=float)
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


@dataclass
class AssignmentMatrix:
    scores: np.ndarray
    row_bin: np.ndarray
    col_bin: np.ndarray

    @property
    def shape(self):
        return self.scores.shape

    def to_csv(self) -> str:
        """Scores with the row dustbin as a last column and the column dustbin as a last row."""
        m, n = self.scores.shape
        header = ",".join([f"b{j}" for j in range(n)] + ["dustbin"])
        rows = [header]
        for i in range(m):
            rows.append(",".join(f"{v:.6g}" for v in self.scores[i]) + f",{self.row_bin[i]:.6g}")
        rows.append(",".join(f"{v:.6g}" for v in self.col_bin) + ",")
        return "\n".join(rows) + "\n"


def build_assignment(
    desc_a,
    desc_b,
    temperature: float = 0.1,
    sinkhorn_iters: int = 20,
    dustbin_similarity: float = 0.5,
    tol: float = 1e-9,
    max_iters: int = 10000,
) -> AssignmentMatrix:
    """Log-domain Sinkhorn over similarities augmented with a constant dustbin.

    Real rows and columns carry unit mass; the dustbin row and column carry
    N and M. At least ``sinkhorn_iters`` rounds run, continuing until every
    marginal is within ``tol`` (capped at ``max_iters``).
    """
    a = np.asarray(desc_a, dtype=float)
    b = np.asarray(desc_b, dtype=float)
    m, n = len(a), len(b)
    if m == 0 or n == 0:
        return AssignmentMatrix(np.zeros((m, n)), np.ones(m), np.ones(n))
    z = np.full((m + 1, n + 1), dustbin_similarity / temperature)
    z[:m, :n] = a @ b.T / temperature
    log_mu = np.concatenate([np.zeros(m), [np.log(n)]])
    log_nu = np.concatenate([np.zeros(n), [np.log(m)]])
    u = np.zeros(m + 1)
    v = np.zeros(n + 1)
    for it in range(max_iters):
        u = log_mu - logsumexp(z + v[None, :], axis=1)
        v = log_nu - logsumexp(z + u[:, None], axis=0)
        if it + 1 >= sinkhorn_iters:
            p = np.exp(z + u[:, None] + v[None, :])
            # columns are exact after the v update; rows carry the residual
            if np.max(np.abs(p[:m].sum(axis=1) - 1.0)) < tol:
                break
    p = np.exp(z + u[:, None] + v[None, :])
    return AssignmentMatrix(p[:m, :n], p[:m, n], p[m, :n])


@dataclass
class MatchSet:
    """One-to-one matches ``(index_a, index_b, confidence)``, best first."""

    pairs: list
    coords_a: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    coords_b: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __len__(self):
        return len(self.pairs)

    @property
    def index_a(self) -> np.ndarray:
        return np.array([p[0] for p in self.pairs], dtype=int)

    @property
    def index_b(self) -> np.ndarray:
        return np.array([p[1] for p in self.pairs], dtype=int)

    @property
    def confidences(self) -> np.ndarray:
        return np.array([p[2] for p in self.pairs], dtype=float)


@dataclass
class MatchFailure:
    """Too few matches survived; callers fall back to the reported pose."""

    found: int
    required: int
    reason: str = "too few matches"

    def __bool__(self):
        return False


def filter_matches(a: AssignmentMatrix, confidence_floor: float = 0.2, min_pairs: int = 4, coords_a=None, coords_b=None):
    """Mutual-argmax pairs scoring at least ``confidence_floor``; MatchFailure below ``min_pairs``."""
    if min_pairs < 2:
        raise ValueError("min_pairs must be at least 2")
    s = a.scores
    m, n = s.shape
    if m == 0 or n == 0:
        return MatchFailure(0, min_pairs, "empty assignment")
    best_b = np.argmax(s, axis=1)
    best_a = np.argmax(s, axis=0)
    pairs = []
    for i in range(m):
        j = int(best_b[i])
        if best_a[j] == i and s[i, j] >= confidence_floor:
            pairs.append((i, j, float(s[i, j])))
    pairs.sort(key=lambda p: (-p[2], p[0], p[1]))
    if len(pairs) < min_pairs:
        return MatchFailure(len(pairs), min_pairs)
    ms = MatchSet(pairs)
    if coords_a is not None:
        ms.coords_a = np.asarray(coords_a, dtype=float)[ms.index_a]
    if coords_b is not None:
        ms.coords_b = np.asarray(coords_b, dtype=float)[ms.index_b]
    return ms


def match_keypoints(
    kp_a,
    kp_b,
    min_pairs: int = 4,
    temperature: float = 0.1,
    sinkhorn_iters: int = 20,
    confidence_floor: float = 0.2,
    dustbin_similarity: float = 0.5,
    weights: AttentionWeights | None = None,
    base_frequency: float = 10000.0,
):
    """Match two KeypointSets. Without ``weights`` (or with zero layers) raw descriptors are compared.

    Returns ``(MatchSet | MatchFailure, AssignmentMatrix)``.
    """
    da, db = kp_a.descriptors, kp_b.descriptors
    if weights is not None and weights.layers > 0 and len(da) and len(db):
        da, db = run_attention(da, kp_a.coords, db, kp_b.coords, weights, base_frequency)
    am = build_assignment(da, db, temperature, sinkhorn_iters, dustbin_similarity)
    return filter_matches(am, confidence_floor, min_pairs, kp_a.coords, kp_b.coords), am
