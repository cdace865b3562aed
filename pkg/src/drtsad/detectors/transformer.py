"""Anomaly-transformer detector.

Every attention layer exposes two row-stochastic maps per head: the learned
series association ``S`` (softmax attention) and a prior association ``P``
(a Gaussian kernel over temporal distance with a learned per-position scale).
Training plays a minimax game on their symmetric-KL discrepancy alongside
reconstruction; the anomaly score multiplies a softmax of the negated
discrepancy with the reconstruction error.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from drtsad.dataset_io import TimeSeriesDataset, WindowConfig, make_windows
from drtsad.detectors._torch import DTYPE, Optimizer, init_parameters, load_state, save_module, tensor
from drtsad.errors import DimensionMismatch, PreconditionError, SeriesTooShort
from drtsad.evaluation import AnomalyScoreSeries
from drtsad.numerics import RandomSource, kl_divergence_rows, softmax_rows

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-4


@dataclass(frozen=True)
class MinimaxConfig:
    window: int = 100
    layers: int = 3
    heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    lam: float = 3.0
    smoothing: float = 1e-8
    epochs: int = 10
    batch_size: int = 16
    train_stride: int | None = None
    lr: float = 1e-3
    momentum: float = 0.9
    clip: float = 5.0
    ratio: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise PreconditionError("lam must be >= 0")
        if not 0.0 < self.ratio < 0.5:
            raise PreconditionError("ratio must lie in (0, 0.5)")
        if self.window < 2 or self.layers < 1 or self.heads < 1:
            raise PreconditionError("window >= 2, layers >= 1 and heads >= 1 are required")
        if self.d_model % self.heads:
            raise PreconditionError("d_model must be divisible by heads")
        if self.epochs < 1 or self.batch_size < 1:
            raise PreconditionError("epochs and batch_size must be positive")

    @property
    def stride(self) -> int:
        return self.train_stride or self.window

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MinimaxConfig":
        return cls(**d)


# ---------------------------------------------------------------- associations


def prior_association(n: int, sigma) -> torch.Tensor | np.ndarray:
    """Rows ``P_ij ∝ exp(-(i - j)^2 / (2 sigma_i^2))``, normalized over ``j``.

    ``sigma`` has shape ``(..., n)``; numpy input gives numpy output.
    """
    as_numpy = not torch.is_tensor(sigma)
    s = tensor(sigma)
    if s.shape[-1] != n:
        raise DimensionMismatch(f"sigma has {s.shape[-1]} positions, expected {n}")
    if torch.any(s <= 0):
        raise PreconditionError("sigma must be positive")
    idx = torch.arange(n, dtype=DTYPE)
    dist2 = (idx[:, None] - idx[None, :]) ** 2
    p = torch.softmax(-dist2 / (2.0 * s[..., :, None] ** 2), dim=-1)
    return p.numpy() if as_numpy else p


def _smooth(p: torch.Tensor, eps: float) -> torch.Tensor:
    p = p + eps
    return p / p.sum(dim=-1, keepdim=True)


def _discrepancy(priors, series, eps: float) -> torch.Tensor:
    """Per-position discrepancy, ``(..., N)``, from per-layer ``(..., h, N, N)`` maps."""
    total = 0.0
    for p, s in zip(priors, series):
        p = _smooth(p.mean(dim=-3), eps)
        s = _smooth(s.mean(dim=-3), eps)
        total = total + ((p - s) * (torch.log(p) - torch.log(s))).sum(dim=-1)
    return total / len(priors)


def association_discrepancy(p_layers, s_layers, smoothing: float = 1e-8) -> np.ndarray:
    """Symmetric KL between head-averaged P and S rows, averaged over layers.

    Inputs are ``(layers, heads, N, N)`` arrays (or sequences of ``(heads, N, N)``).
    With ``smoothing=0`` mismatched supports raise ``InfiniteDivergence``.
    """
    p_layers = [np.asarray(p, dtype=np.float64) for p in p_layers]
    s_layers = [np.asarray(s, dtype=np.float64) for s in s_layers]
    if len(p_layers) != len(s_layers) or any(p.shape != s.shape for p, s in zip(p_layers, s_layers)):
        raise DimensionMismatch("P and S layer stacks must have matching shapes")
    if smoothing > 0:
        return _discrepancy([torch.from_numpy(p) for p in p_layers], [torch.from_numpy(s) for s in s_layers], smoothing).numpy()
    out = np.zeros(p_layers[0].shape[-1])
    for p, s in zip(p_layers, s_layers):
        pm, sm = p.mean(axis=0), s.mean(axis=0)
        out += kl_divergence_rows(pm, sm) + kl_divergence_rows(sm, pm)
    return out / len(p_layers)


def criterion(assdis, x, x_hat) -> np.ndarray:
    """Softmax of the negated discrepancy over positions times per-position MSE."""
    assdis = np.asarray(assdis, dtype=np.float64)
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape or x.shape[0] != assdis.shape[-1]:
        raise DimensionMismatch(f"criterion shapes disagree: {assdis.shape}, {x.shape}, {x_hat.shape}")
    cad = softmax_rows(-assdis[None, :])[0]
    return cad * ((x - x_hat) ** 2).mean(axis=1)


# ---------------------------------------------------------------- network


def positional_encoding(n: int, d_model: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=DTYPE)[:, None]
    div = torch.exp(torch.arange(0, d_model, 2, dtype=DTYPE) * (-math.log(10000.0) / d_model))
    pe = torch.zeros(n, d_model, dtype=DTYPE)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : d_model // 2]
    return pe


class AnomalyAttentionLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, d_ff: int) -> None:
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.k = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.v = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.sigma = nn.Linear(d_model, heads, dtype=DTYPE)
        self.out = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.norm1 = nn.LayerNorm(d_model, dtype=DTYPE)
        self.ff1 = nn.Linear(d_model, d_ff, dtype=DTYPE)
        self.ff2 = nn.Linear(d_ff, d_model, dtype=DTYPE)
        self.norm2 = nn.LayerNorm(d_model, dtype=DTYPE)

    def forward(self, x: torch.Tensor):
        b, n, dm = x.shape
        h = self.heads

        def split(t):
            return t.reshape(b, n, h, dm // h).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        series = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dm // h), dim=-1)
        sigma = F.softplus(self.sigma(x)).transpose(1, 2) + SIGMA_FLOOR
        prior = prior_association(n, sigma)
        ctx = (series @ v).transpose(1, 2).reshape(b, n, dm)
        x = self.norm1(x + self.out(ctx))
        x = self.norm2(x + self.ff2(F.gelu(self.ff1(x))))
        return x, prior, series


class TransformerNet(nn.Module):
    def __init__(self, n_features: int, cfg: MinimaxConfig) -> None:
        super().__init__()
        self.embed = nn.Linear(n_features, cfg.d_model, dtype=DTYPE)
        self.blocks = nn.ModuleList([AnomalyAttentionLayer(cfg.d_model, cfg.heads, cfg.d_ff) for _ in range(cfg.layers)])
        self.head = nn.Linear(cfg.d_model, n_features, dtype=DTYPE)
        self.register_buffer("pe", positional_encoding(cfg.window, cfg.d_model), persistent=False)

    def forward(self, x: torch.Tensor):
        """``(B, N, m)`` windows to ``(reconstruction, priors, series)``."""
        h = self.embed(x) + self.pe[: x.shape[1]]
        priors, series = [], []
        for block in self.blocks:
            h, p, s = block(h)
            priors.append(p)
            series.append(s)
        return self.head(h), priors, series


def phase_losses(net: TransformerNet, x: torch.Tensor, lam: float, smoothing: float, frozen_priors=None, frozen_series=None):
    """Minimize-phase and maximize-phase losses for one batch.

    The minimize phase sees ``rec - lam * dis`` with P held fixed, so it only
    moves the series attention; the maximize phase sees ``rec + lam * dis`` with
    S held fixed, so the discrepancy term only reaches the prior scales.  By
    default the fixed side is the detached current value; finite-difference
    checks pass the values frozen at the base point instead.
    Returns ``(min_loss, max_loss, rec, dis)``.
    """
    recon, priors, series = net(x)
    rec = ((recon - x) ** 2).mean()
    p_fixed = frozen_priors if frozen_priors is not None else [p.detach() for p in priors]
    s_fixed = frozen_series if frozen_series is not None else [s.detach() for s in series]
    dis_s = _discrepancy(p_fixed, series, smoothing).mean()
    dis_p = _discrepancy(priors, s_fixed, smoothing).mean()
    return rec - lam * dis_s, rec + lam * dis_p, rec, dis_s.detach()


# ---------------------------------------------------------------- training


@dataclass
class TransformerModel:
    config: MinimaxConfig
    n_dims: int
    net: TransformerNet
    loss_trace: list[dict] = field(default_factory=list)

    def save(self, directory: str | Path, stem: str = "transformer") -> None:
        meta = {"config": self.config.to_dict(), "n_dims": self.n_dims, "loss_trace": self.loss_trace}
        save_module(directory, stem, self.net, meta)

    @classmethod
    def load(cls, directory: str | Path, stem: str = "transformer") -> "TransformerModel":
        meta, state = load_state(directory, stem)
        cfg = MinimaxConfig.from_dict(meta["config"])
        net = TransformerNet(int(meta["n_dims"]), cfg)
        net.load_state_dict(state)
        return cls(cfg, int(meta["n_dims"]), net, list(meta["loss_trace"]))


def init_net(n_features: int, cfg: MinimaxConfig, rng: RandomSource) -> TransformerNet:
    net = TransformerNet(n_features, cfg)
    init_parameters(net, rng)
    return net


def train_minimax(ds: TimeSeriesDataset, cfg: MinimaxConfig = MinimaxConfig()) -> TransformerModel:
    """Minimax training on the train split.

    Each batch backpropagates both phase losses and takes one optimizer step on
    the summed gradient.  The loss trace holds per-epoch means of both phase
    losses, the reconstruction MSE and the discrepancy.
    """
    if ds.train.shape[0] < cfg.window:
        raise SeriesTooShort(f"train split has {ds.train.shape[0]} rows, window is {cfg.window}")
    rng = RandomSource(cfg.seed)
    net = init_net(ds.n_dims, cfg, rng.child(0))
    windows, _ = make_windows(ds.train, WindowConfig(cfg.window, cfg.stride))
    xw = torch.from_numpy(np.ascontiguousarray(windows))
    opt = Optimizer(net, cfg.lr, cfg.momentum, cfg.clip)
    order_rng = rng.child(1)
    trace = []
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(xw.shape[0])
        sums = np.zeros(4)
        for start in range(0, order.size, cfg.batch_size):
            idx = torch.from_numpy(order[start : start + cfg.batch_size])
            min_loss, max_loss, rec, dis = phase_losses(net, xw[idx], cfg.lam, cfg.smoothing)
            opt.step(min_loss + max_loss)
            sums += np.array([float(t.detach()) for t in (min_loss, max_loss, rec, dis)]) * idx.numel()
        sums /= order.size
        trace.append({"epoch": epoch + 1, "min_loss": sums[0], "max_loss": sums[1], "recon": sums[2], "dis": sums[3]})
        logger.debug("transformer epoch %d recon %.6f dis %.6f", epoch + 1, sums[2], sums[3])
    return TransformerModel(cfg, ds.n_dims, net, trace)


# ---------------------------------------------------------------- scoring


def inference_windows(series: np.ndarray, n: int) -> tuple[np.ndarray, int]:
    """Non-overlapping windows; a short tail is left-padded with copies of its first row.

    Returns ``(windows (k, n, m), pad)`` where ``pad`` rows at the front of the
    last window are padding.
    """
    t = series.shape[0]
    if t == 0:
        raise SeriesTooShort("empty series")
    full = t // n
    parts = [series[: full * n].reshape(full, n, series.shape[1])]
    pad = 0
    if t % n:
        tail = series[full * n :]
        pad = n - tail.shape[0]
        parts.append(np.concatenate([np.repeat(tail[:1], pad, axis=0), tail])[None])
    return np.concatenate(parts), pad


def window_scores(model: TransformerModel, windows: np.ndarray, batch_size: int = 64) -> np.ndarray:
    cfg = model.config
    out = np.empty(windows.shape[:2])
    with torch.no_grad():
        for lo in range(0, windows.shape[0], batch_size):
            x = torch.from_numpy(np.ascontiguousarray(windows[lo : lo + batch_size]))
            recon, priors, series = model.net(x)
            dis = _discrepancy(priors, series, cfg.smoothing)
            cad = torch.softmax(-dis, dim=-1)
            out[lo : lo + batch_size] = (cad * ((x - recon) ** 2).mean(dim=-1)).numpy()
    return out


def score_series(model: TransformerModel, ds: TimeSeriesDataset, split: str = "test") -> AnomalyScoreSeries:
    series = np.asarray(ds.test if split == "test" else ds.train, dtype=np.float64)
    if series.ndim != 2 or series.shape[1] != model.n_dims:
        raise DimensionMismatch(f"model expects {model.n_dims} columns, got {series.shape}")
    windows, pad = inference_windows(series, model.config.window)
    scores = window_scores(model, windows).reshape(-1)
    if pad:
        n = model.config.window
        scores = np.concatenate([scores[: -n], scores[-n + pad :]])
    return AnomalyScoreSeries(scores, detector="transformer", fingerprint=_fingerprint(model))


def _fingerprint(model: TransformerModel) -> str:
    blob = json.dumps({"cfg": model.config.to_dict(), "d": model.n_dims}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
