"""UMAP: fuzzy k-NN graph, (a, b) curve fit, SGD with negative sampling.

Updates are applied per epoch in vectorised form (all edges sampled in an
epoch see the embedding as it was at the start of that epoch) instead of the
lock-free sequential updates of the reference implementation.  This keeps
the result deterministic for a given seed.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse
from scipy.optimize import curve_fit

from drtsad.dimreduce.base import FittedReducer, ReducerSpec, knn
from drtsad.dimreduce.linear import fit_pca, transform_linear
from drtsad.errors import InsufficientSamples
from drtsad.numerics import RandomSource

logger = logging.getLogger(__name__)

_SMOOTH_TOL = 1e-5
_MIN_SCALE = 1e-3
_CLIP = 4.0


def find_ab_params(spread: float, min_dist: float) -> tuple[float, float]:
    """Least-squares fit of ``1 / (1 + a x^(2b))`` to the offset exponential curve."""

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    (a, b), _ = curve_fit(curve, xv, yv, p0=(1.0, 1.0), maxfev=10000)
    return float(a), float(b)


def smooth_knn_dist(dist: np.ndarray, n_iter: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ``rho`` (nearest distance) and ``sigma`` with sum exp(-max(0, d - rho)/sigma) = log2(k)."""
    k = dist.shape[1]
    target = np.log2(k)
    rho = dist[:, 0].copy()
    shifted = np.maximum(dist - rho[:, None], 0.0)
    lo = np.zeros(len(dist))
    hi = np.full(len(dist), np.inf)
    mid = np.ones(len(dist))
    for _ in range(n_iter):
        psum = np.exp(-shifted / mid[:, None]).sum(axis=1)
        if np.all(np.abs(psum - target) < _SMOOTH_TOL):
            break
        too_big = psum > target
        hi = np.where(too_big, mid, hi)
        lo = np.where(too_big, lo, mid)
        mid = np.where(np.isinf(hi), mid * 2.0, (lo + hi) / 2.0)
    mean_dist = dist.mean(axis=1)
    floor = _MIN_SCALE * np.where(rho > 0, mean_dist, dist.mean())
    sigma = np.maximum(mid, np.maximum(floor, 1e-12))
    return rho, sigma


def _memberships(dist: np.ndarray, rho: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return np.exp(-np.maximum(dist - rho[:, None], 0.0) / sigma[:, None])


def fuzzy_graph(idx: np.ndarray, dist: np.ndarray) -> tuple[scipy.sparse.coo_matrix, np.ndarray, np.ndarray]:
    """Symmetrised membership graph ``V = A + A^T - A * A^T``."""
    t, k = idx.shape
    rho, sigma = smooth_knn_dist(dist)
    w = _memberships(dist, rho, sigma)
    rows = np.repeat(np.arange(t), k)
    a = scipy.sparse.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(t, t))
    at = a.T.tocsr()
    v = (a + at - a.multiply(at)).tocoo()
    v.eliminate_zeros()
    return v, rho, sigma


def _q(d2: np.ndarray, a: float, b: float) -> np.ndarray:
    return 1.0 / (1.0 + a * np.power(d2, b))


def cross_entropy(y, heads, tails, weights, neg_heads, neg_tails, a, b) -> float:
    """Fuzzy-set cross-entropy over the graph edges plus a fixed sample of non-edges."""
    eps = 1e-12
    q = np.clip(_q(np.sum((y[heads] - y[tails]) ** 2, axis=1), a, b), eps, 1 - eps)
    ce = -np.sum(weights * np.log(q) + (1 - weights) * np.log(1 - q))
    qn = np.clip(_q(np.sum((y[neg_heads] - y[neg_tails]) ** 2, axis=1), a, b), eps, 1 - eps)
    return float(ce - np.sum(np.log(1 - qn)))


def _attract(y_head, y_tail, a, b):
    diff = y_head - y_tail
    d2 = np.sum(diff * diff, axis=1)
    safe = np.where(d2 > 0, d2, 1.0)
    coef = np.where(d2 > 0, -2.0 * a * b * np.power(safe, b - 1.0) / (1.0 + a * np.power(safe, b)), 0.0)
    return np.clip(coef[:, None] * diff, -_CLIP, _CLIP)


def _repel(y_head, y_neg, a, b):
    diff = y_head - y_neg
    d2 = np.sum(diff * diff, axis=-1)
    coef = 2.0 * b / ((0.001 + d2) * (1.0 + a * np.power(d2, b)))
    g = np.clip(coef[..., None] * diff, -_CLIP, _CLIP)
    return np.where((d2 > 0)[..., None], g, 0.0)


def _epoch_mask(weights_rel: np.ndarray, epoch: int) -> np.ndarray:
    # an edge of relative weight w is sampled about every 1/w epochs
    return np.floor((epoch + 1) * weights_rel) > np.floor(epoch * weights_rel)


def optimize_layout(y, heads, tails, weights, a, b, epochs, lr, n_neg, rng: RandomSource, trace=None):
    n = y.shape[0]
    rel = weights / weights.max()
    keep = rel >= 1.0 / max(epochs, 1)
    heads, tails, rel = heads[keep], tails[keep], rel[keep]
    for e in range(epochs):
        alpha = lr * (1.0 - e / epochs)
        sel = _epoch_mask(rel, e)
        h, t = heads[sel], tails[sel]
        g = alpha * _attract(y[h], y[t], a, b)
        delta = np.zeros_like(y)
        np.add.at(delta, h, g)
        np.add.at(delta, t, -g)
        neg = rng.integers(0, n, size=(h.size, n_neg))
        gn = _repel(y[h][:, None, :], y[neg], a, b)
        gn[neg == h[:, None]] = 0.0
        np.add.at(delta, h, alpha * gn.sum(axis=1))
        y += delta
        if trace is not None:
            trace(y)
    return y


def fit_umap(train: np.ndarray, spec: ReducerSpec) -> FittedReducer:
    train = np.asarray(train, dtype=np.float64)
    t, n = train.shape
    p = spec.umap
    k = p.n_neighbors
    rng = RandomSource(spec.seed)
    fit_index = np.arange(t)
    if t > spec.max_fit_rows:
        fit_index = np.sort(rng.child(1).choice(t, spec.max_fit_rows))
        logger.info("UMAP: fitting on a %d-row subsample of %d rows", spec.max_fit_rows, t)
    data = train[fit_index]
    if data.shape[0] < k + 1:
        raise InsufficientSamples(f"UMAP with n_neighbors={k} needs at least {k + 1} rows, got {data.shape[0]}")

    idx, dist = knn(data, data, k, exclude_self=True)
    graph, rho, sigma = fuzzy_graph(idx, dist)
    a, b = find_ab_params(p.spread, p.min_dist)

    init = transform_linear(fit_pca(data, spec.target_dim), data)
    peak = np.max(np.abs(init))
    y = init * (10.0 / peak) if peak > 0 else init.copy()

    upper = graph.row < graph.col
    e_heads, e_tails, e_w = graph.row[upper], graph.col[upper], graph.data[upper]
    mon = rng.child(2)
    neg_heads = mon.integers(0, len(data), size=5 * max(len(e_heads), 1))
    neg_tails = mon.integers(0, len(data), size=neg_heads.size)
    losses = [cross_entropy(y, e_heads, e_tails, e_w, neg_heads, neg_tails, a, b)]

    def record(cur):
        losses.append(cross_entropy(cur, e_heads, e_tails, e_w, neg_heads, neg_tails, a, b))

    y = optimize_layout(
        y, graph.row, graph.col, graph.data, a, b, p.epochs, p.learning_rate, p.negative_samples,
        rng.child(3), trace=record,
    )
    arrays = {
        "embedding": y,
        "fit_data": data,
        "fit_index": fit_index.astype(np.float64),
        "rho": rho,
        "sigma": sigma,
    }
    info = {"a": a, "b": b, "loss_trace": losses, "n_edges": int(graph.nnz)}
    return FittedReducer(spec, n, arrays, info)


def transform_umap(fr: FittedReducer, data: np.ndarray) -> np.ndarray:
    """Embed new rows against the frozen training embedding.

    Each row starts at the membership-weighted mean of its k nearest training
    points' embeddings and is refined for ``epochs // 4`` epochs.  Negative
    samples are shared by all rows within an epoch, so identical rows always
    receive identical embeddings.
    """
    data = np.asarray(data, dtype=np.float64)
    fr.check_columns(data)
    p = fr.spec.umap
    fit_data = fr.arrays["fit_data"]
    y_train = fr.arrays["embedding"]
    a, b = fr.info["a"], fr.info["b"]
    k = min(p.n_neighbors, fit_data.shape[0])
    idx, dist = knn(data, fit_data, k)
    rho, sigma = smooth_knn_dist(dist)
    w = _memberships(dist, rho, sigma)
    y = np.einsum("ik,ikd->id", w, y_train[idx]) / w.sum(axis=1, keepdims=True)

    epochs = p.epochs // 4
    if epochs == 0:
        return y
    rng = RandomSource(fr.spec.seed).child(4)
    rel = w / w.max()
    lr = p.learning_rate / 4.0
    for e in range(epochs):
        alpha = lr * (1.0 - e / epochs)
        sel = _epoch_mask(rel, e)
        g = np.zeros_like(y)
        for j in range(k):
            rows = sel[:, j]
            if np.any(rows):
                g[rows] += _attract(y[rows], y_train[idx[rows, j]], a, b)
        neg = rng.integers(0, fit_data.shape[0], size=p.negative_samples)
        g += _repel(y[:, None, :], y_train[neg][None, :, :], a, b).sum(axis=1)
        y = y + alpha * g
    return y
