from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from drtsad.errors import DimensionMismatch, PreconditionError, TargetDimTooHigh
from drtsad.serialization import load_bundle, save_bundle

TECHNIQUES = ("pca", "random_projection", "umap", "tsne")

_ALIASES = {
    "pca": "pca",
    "random_projection": "random_projection",
    "rp": "random_projection",
    "randomprojection": "random_projection",
    "umap": "umap",
    "tsne": "tsne",
    "t-sne": "tsne",
}


def canonical_technique(name: str) -> str:
    try:
        return _ALIASES[name.lower().replace(" ", "")]
    except KeyError:
        raise PreconditionError(f"unknown reducer technique {name!r}") from None


@dataclass(frozen=True)
class UmapParams:
    n_neighbors: int = 15
    min_dist: float = 0.1
    spread: float = 1.0
    epochs: int = 200
    learning_rate: float = 1.0
    negative_samples: int = 5


@dataclass(frozen=True)
class TsneParams:
    perplexity: float = 30.0
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    iterations: int = 1000
    # "auto": max(N / exaggeration / 4, 50)
    learning_rate: float | str = "auto"
    momentum: float = 0.5
    final_momentum: float = 0.8


@dataclass(frozen=True)
class ReducerSpec:
    technique: str
    target_dim: int
    seed: int = 0
    umap: UmapParams = field(default_factory=UmapParams)
    tsne: TsneParams = field(default_factory=TsneParams)
    fit_on: str = "train"
    # UMAP fits on a seeded subsample above this many rows; t-SNE refuses
    # exact fits above it (reduce_dataset subsamples instead)
    max_fit_rows: int = 20000

    def __post_init__(self) -> None:
        object.__setattr__(self, "technique", canonical_technique(self.technique))
        if self.target_dim < 1:
            raise PreconditionError("target_dim must be >= 1")
        if self.fit_on not in ("train", "joint"):
            raise PreconditionError("fit_on must be 'train' or 'joint'")
        if self.technique == "tsne" and self.target_dim > 3:
            raise TargetDimTooHigh(f"t-SNE supports at most 3 output dimensions, got {self.target_dim}")
        if self.technique == "umap" and self.umap.n_neighbors < 2:
            raise PreconditionError("UMAP needs n_neighbors >= 2")

    def check_input_dim(self, n: int) -> None:
        if not 1 <= self.target_dim < n:
            raise PreconditionError(f"target_dim must satisfy 1 <= m < n (m={self.target_dim}, n={n})")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ReducerSpec":
        d = dict(d)
        if "umap" in d:
            d["umap"] = UmapParams(**d["umap"])
        if "tsne" in d:
            d["tsne"] = TsneParams(**d["tsne"])
        return cls(**d)


@dataclass
class FittedReducer:
    """A fitted n -> m map.

    ``arrays`` holds the technique payload: ``mean``/``components``/``eigenvalues``
    for PCA, ``matrix`` for random projection, ``embedding``/``fit_data``/``rho``/
    ``sigma`` for UMAP, ``embedding`` plus the train/test row ranges in ``info``
    for t-SNE.  ``info`` carries scalars and traces.
    """

    spec: ReducerSpec
    n_features: int
    arrays: dict[str, np.ndarray]
    info: dict = field(default_factory=dict)

    @property
    def technique(self) -> str:
        return self.spec.technique

    @property
    def target_dim(self) -> int:
        return self.spec.target_dim

    def check_columns(self, data: np.ndarray) -> None:
        if data.ndim != 2 or data.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} columns, got shape {data.shape}")

    def save(self, directory: str | Path) -> None:
        meta = {"spec": self.spec.to_dict(), "n_features": self.n_features, "info": self.info}
        save_bundle(directory, "reducer", meta, self.arrays)

    @classmethod
    def load(cls, directory: str | Path) -> "FittedReducer":
        meta, arrays = load_bundle(directory, "reducer")
        return cls(ReducerSpec.from_dict(meta["spec"]), int(meta["n_features"]), arrays, meta["info"])


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def knn(query: np.ndarray, data: np.ndarray, k: int, exclude_self: bool = False, block: int = 2048):
    """Exact Euclidean k nearest neighbours of each query row among ``data`` rows.

    With ``exclude_self`` the query set must be ``data`` itself and row i never
    lists itself.  Ties are broken by index.
    """
    n_q = query.shape[0]
    idx = np.empty((n_q, k), dtype=np.int64)
    dist = np.empty((n_q, k))
    for start in range(0, n_q, block):
        stop = min(start + block, n_q)
        d2 = pairwise_sq_dists(query[start:stop], data)
        if exclude_self:
            d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        part = np.argpartition(d2, k - 1, axis=1)[:, :k] if k < d2.shape[1] else np.tile(np.arange(d2.shape[1]), (stop - start, 1))
        pd = np.take_along_axis(d2, part, axis=1)
        order = np.lexsort((part, pd), axis=1)
        idx[start:stop] = np.take_along_axis(part, order, axis=1)
        dist[start:stop] = np.sqrt(np.take_along_axis(pd, order, axis=1))
    return idx, dist
