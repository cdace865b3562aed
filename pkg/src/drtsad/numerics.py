"""Dense linear-algebra and statistics kernels shared by the reducers and detectors.

Everything here works on float64 numpy arrays.  ``RandomSource`` wraps numpy's
PCG64 bit generator, which produces the same stream for a given seed on every
platform numpy supports.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from drtsad.errors import (
    EvaluationFailed,
    InfiniteDivergence,
    InsufficientSamples,
    NotSymmetric,
    PreconditionError,
    ZeroVariance,
)

__all__ = [
    "RandomSource",
    "covariance_matrix",
    "pearson_correlation",
    "softmax_rows",
    "kl_divergence_rows",
    "symmetric_eigendecomposition",
    "gradient_check",
]


class RandomSource:
    """Seeded PCG64 stream.

    A source is single-owner.  Hand independent streams to workers with
    :meth:`child`, which derives a new seed through ``numpy.random.SeedSequence``
    rather than sharing state.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int, _spawn_key: tuple[int, ...] = ()) -> None:
        if seed < 0:
            raise PreconditionError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self._spawn_key = tuple(_spawn_key)
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self._spawn_key))
        )

    def child(self, *key: int) -> "RandomSource":
        return RandomSource(self.seed, self._spawn_key + tuple(int(k) for k in key))

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=size)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self.generator.uniform(low, high, size=size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)


def covariance_matrix(data: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """Unbiased sample covariance ``(1/(m-1)) * sum (x_i - mu)(x_i - mu)^T``."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise PreconditionError(f"expected a 2-D matrix, got shape {data.shape}")
    m = data.shape[0]
    if m < 2:
        raise InsufficientSamples(f"covariance needs at least 2 rows, got {m}")
    centered = data - np.asarray(mean, dtype=np.float64)
    cov = centered.T @ centered / (m - 1)
    # a + b == b + a in IEEE arithmetic, so this is exactly symmetric
    return (cov + cov.T) / 2.0


def pearson_correlation(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise PreconditionError(f"vectors must be 1-D with equal length, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise InsufficientSamples("correlation needs at least 2 observations")
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float(xc @ xc)
    vy = float(yc @ yc)
    if vx == 0.0 or vy == 0.0:
        raise ZeroVariance("correlation is undefined for a constant vector")
    r = float(xc @ yc) / math.sqrt(vx * vy)
    return min(1.0, max(-1.0, r))


def softmax_rows(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def kl_divergence_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p || q) with the convention 0 * ln(0 / q) = 0.

    Raises InfiniteDivergence when some q_i is zero while p_i is positive.
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    if p.shape != q.shape:
        raise PreconditionError(f"shape mismatch {p.shape} vs {q.shape}")
    support = p > 0
    if np.any(support & (q <= 0)):
        rows = np.nonzero(np.any(support & (q <= 0), axis=-1))[0]
        raise InfiniteDivergence(f"q has zero mass where p is positive (rows {rows.tolist()[:10]})")
    terms = np.zeros_like(p)
    terms[support] = p[support] * (np.log(p[support]) - np.log(q[support]))
    return terms.sum(axis=-1)


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n-1 rounds of n/2 disjoint index pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        p = np.array([players[i] for i in range(n // 2)])
        q = np.array([players[n - 1 - i] for i in range(n // 2)])
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        rounds.append((lo, hi))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def symmetric_eigendecomposition(
    a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60
) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvectors (columns) of a symmetric matrix.

    Cyclic Jacobi in tournament ordering: each round applies n/2 disjoint
    rotations at once, which is equivalent to applying them one by one because
    disjoint rotations commute.  Each eigenvector is flipped so that its
    largest-magnitude entry (first one on ties) is positive.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise PreconditionError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and float(np.max(np.abs(a - a.T))) > 1e-9 * scale:
        raise NotSymmetric(f"asymmetry {float(np.max(np.abs(a - a.T))):.3g} exceeds 1e-9")
    a = (a + a.T) / 2.0
    v = np.eye(n)
    if n <= 1:
        return np.diag(a).copy(), v

    # odd sizes get a dummy player whose pairs are no-ops
    size = n + (n % 2)
    rounds = _round_robin(size)
    norm = float(np.linalg.norm(a))
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off <= tol * norm:
            break
        for lo, hi in rounds:
            keep = hi < n
            p, q = lo[keep], hi[keep]
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            # for huge theta, t ~ 1/(2 theta) without squaring theta
            big = np.abs(theta) > 1e150
            safe = np.where(big, 1.0, theta)
            t = np.sign(safe) / (np.abs(safe) + np.sqrt(safe * safe + 1.0))
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            # columns p and q mix; A <- J^T A J, V <- V J
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq

    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    v = v[:, order]
    pivots = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[pivots, np.arange(n)])
    signs[signs == 0] = 1.0
    return eigenvalues, v * signs


def gradient_check(
    f: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    point: np.ndarray,
    step: float = 1e-6,
) -> float:
    """Largest elementwise ``|g_analytic - g_fd| / max(1, |g_fd|)`` using central differences."""
    if not (1e-7 <= step <= 1e-3):
        raise PreconditionError(f"step must lie in [1e-7, 1e-3], got {step}")
    x = np.array(point, dtype=np.float64).ravel()
    analytic = np.asarray(grad(x.copy()), dtype=np.float64).ravel()
    if analytic.shape != x.shape:
        raise PreconditionError(f"gradient has shape {analytic.shape}, expected {x.shape}")
    if not np.all(np.isfinite(analytic)):
        raise EvaluationFailed("analytic gradient is not finite")
    fd = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + step
        fp = float(f(x.copy()))
        x[i] = orig - step
        fm = float(f(x.copy()))
        x[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise EvaluationFailed(f"non-finite function value near coordinate {i}")
        fd[i] = (fp - fm) / (2.0 * step)
    return float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd)))) if x.size else 0.0
