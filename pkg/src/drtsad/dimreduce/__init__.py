"""Dimensionality reducers: PCA, Gaussian random projection, UMAP and exact t-SNE."""

from drtsad.dimreduce.base import FittedReducer, ReducerSpec, TsneParams, UmapParams
from drtsad.dimreduce.linear import fit_pca, fit_random_projection, transform_linear
from drtsad.dimreduce.pipeline import fit_reducer, reduce_dataset, transform
from drtsad.dimreduce.tsne import fit_tsne_joint
from drtsad.dimreduce.umap import fit_umap, transform_umap

__all__ = [
    "FittedReducer",
    "ReducerSpec",
    "TsneParams",
    "UmapParams",
    "fit_pca",
    "fit_random_projection",
    "fit_reducer",
    "fit_tsne_joint",
    "fit_umap",
    "reduce_dataset",
    "transform",
    "transform_linear",
    "transform_umap",
]
