"""PCA and Gaussian random projection."""

from __future__ import annotations

import numpy as np

from drtsad.dimreduce.base import FittedReducer, ReducerSpec
from drtsad.errors import InsufficientSamples, PreconditionError
from drtsad.numerics import RandomSource, covariance_matrix, symmetric_eigendecomposition


def fit_pca(train: np.ndarray, m: int, seed: int = 0) -> FittedReducer:
    """Top-``m`` eigenvectors of the train covariance, largest eigenvalue first."""
    train = np.asarray(train, dtype=np.float64)
    t, n = train.shape
    if t < 2:
        raise InsufficientSamples(f"PCA needs at least 2 rows, got {t}")
    if not 1 <= m <= n:
        raise PreconditionError(f"PCA target dim must satisfy 1 <= m <= n (m={m}, n={n})")
    mean = train.mean(axis=0)
    eigenvalues, vectors = symmetric_eigendecomposition(covariance_matrix(train, mean))
    spec = ReducerSpec("pca", m, seed=seed)
    arrays = {"mean": mean, "components": vectors[:, :m].copy(), "eigenvalues": eigenvalues}
    return FittedReducer(spec, n, arrays)


def fit_random_projection(n: int, m: int, rng: RandomSource) -> FittedReducer:
    """``R`` with i.i.d. Normal(0, 1/m) entries, so E[|xR|^2] = |x|^2."""
    if not 1 <= m < n:
        raise PreconditionError(f"random projection needs 1 <= m < n (m={m}, n={n})")
    matrix = rng.normal((n, m), scale=1.0 / np.sqrt(m))
    spec = ReducerSpec("random_projection", m, seed=rng.seed)
    return FittedReducer(spec, n, {"matrix": matrix})


def transform_linear(fr: FittedReducer, data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    fr.check_columns(data)
    if fr.technique == "pca":
        return (data - fr.arrays["mean"]) @ fr.arrays["components"]
    if fr.technique == "random_projection":
        return data @ fr.arrays["matrix"]
    raise PreconditionError(f"{fr.technique} is not a linear reducer")
