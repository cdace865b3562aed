from __future__ import annotations

import dataclasses
import logging

import numpy as np

from drtsad.dataset_io import TimeSeriesDataset
from drtsad.dimreduce.base import FittedReducer, ReducerSpec, knn
from drtsad.dimreduce.linear import fit_pca, fit_random_projection, transform_linear
from drtsad.dimreduce.tsne import fit_tsne_joint
from drtsad.dimreduce.umap import fit_umap, smooth_knn_dist, transform_umap
from drtsad.errors import PreconditionError
from drtsad.numerics import RandomSource

logger = logging.getLogger(__name__)


def fit_reducer(train: np.ndarray, spec: ReducerSpec) -> FittedReducer:
    """Fit PCA, random projection or UMAP on ``train`` (t-SNE goes through :func:`fit_tsne_joint`)."""
    spec.check_input_dim(train.shape[1])
    if spec.technique == "pca":
        fr = fit_pca(train, spec.target_dim, seed=spec.seed)
        return dataclasses.replace(fr, spec=spec)
    if spec.technique == "random_projection":
        fr = fit_random_projection(train.shape[1], spec.target_dim, RandomSource(spec.seed))
        return dataclasses.replace(fr, spec=spec)
    if spec.technique == "umap":
        return fit_umap(train, spec)
    raise PreconditionError(f"{spec.technique} has no train-only fit; use fit_tsne_joint")


def transform(fr: FittedReducer, data: np.ndarray) -> np.ndarray:
    if fr.technique in ("pca", "random_projection"):
        return transform_linear(fr, data)
    if fr.technique == "umap":
        return transform_umap(fr, data)
    raise PreconditionError("t-SNE has no out-of-sample transform")


def _umap_outputs(fr: FittedReducer, fit_rows: np.ndarray) -> np.ndarray:
    """Embedding of every fit row: fitted coordinates for the subsample, transform for the rest."""
    out = np.empty((fit_rows.shape[0], fr.target_dim))
    index = fr.arrays["fit_index"].astype(np.int64)
    out[index] = fr.arrays["embedding"]
    rest = np.setdiff1d(np.arange(fit_rows.shape[0]), index)
    if rest.size:
        out[rest] = transform_umap(fr, fit_rows[rest])
    return out


def _tsne_embed(x: np.ndarray, n_train: int, spec: ReducerSpec) -> tuple[np.ndarray, FittedReducer]:
    n = x.shape[0]
    if n <= spec.max_fit_rows:
        fr = fit_tsne_joint(x[:n_train], x[n_train:], spec)
        return fr.arrays["embedding"], fr
    rng = RandomSource(spec.seed).child(7)
    sub = np.sort(rng.choice(n, spec.max_fit_rows))
    logger.info("t-SNE: fitting on a %d-row subsample of %d rows", sub.size, n)
    fr = fit_tsne_joint(x[sub], np.empty((0, x.shape[1])), spec)
    out = np.empty((n, spec.target_dim))
    out[sub] = fr.arrays["embedding"]
    rest = np.setdiff1d(np.arange(n), sub)
    # unfitted rows: membership-weighted mean of their nearest fitted rows
    idx, dist = knn(x[rest], x[sub], min(10, sub.size))
    rho, sigma = smooth_knn_dist(dist)
    w = np.exp(-np.maximum(dist - rho[:, None], 0.0) / sigma[:, None])
    out[rest] = np.einsum("ik,ikd->id", w, fr.arrays["embedding"][idx]) / w.sum(axis=1, keepdims=True)
    fr.info["subsample"] = sub.tolist()
    return out, fr


def reduce_dataset(ds: TimeSeriesDataset, spec: ReducerSpec) -> tuple[TimeSeriesDataset, FittedReducer]:
    """Map both splits of ``ds`` from n to ``spec.target_dim`` features.

    PCA, random projection and UMAP are fitted on the train split (or on both
    splits with ``fit_on="joint"``); t-SNE always embeds both splits together.
    Labels and row counts are untouched.
    """
    spec.check_input_dim(ds.n_dims)
    n_train = ds.train.shape[0]
    if spec.technique == "tsne":
        y, fr = _tsne_embed(np.vstack([ds.train, ds.test]), n_train, spec)
        train_out, test_out = y[:n_train], y[n_train:]
    elif spec.fit_on == "joint":
        x = np.vstack([ds.train, ds.test])
        fr = fit_reducer(x, spec)
        y = _umap_outputs(fr, x) if spec.technique == "umap" else transform(fr, x)
        train_out, test_out = y[:n_train], y[n_train:]
    else:
        fr = fit_reducer(ds.train, spec)
        train_out = _umap_outputs(fr, ds.train) if spec.technique == "umap" else transform(fr, ds.train)
        test_out = transform(fr, ds.test)
    manifest = dataclasses.replace(ds.manifest, n_dims=spec.target_dim)
    return TimeSeriesDataset(manifest, np.ascontiguousarray(train_out), np.ascontiguousarray(test_out), ds.labels), fr
