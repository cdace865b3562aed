"""Graph-attention VAE detector.

Each window becomes a feature graph (nodes are variables, edges are strong
Pearson correlations).  A GCN embeds every node, a per-variable LSTM running
across consecutive windows produces attention weights over variables, and a
per-node VAE reconstructs each variable's window values.  Anomaly scores are the
attention-weighted squared reconstruction errors, averaged over covering windows.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from drtsad.dataset_io import TimeSeriesDataset, WindowConfig, make_windows
from drtsad.detectors._torch import DTYPE, Optimizer, init_parameters, load_state, save_module, tensor
from drtsad.errors import DimensionMismatch, DimensionTooLow, PreconditionError, SeriesTooShort, TrainingDiverged
from drtsad.evaluation import AnomalyScoreSeries
from drtsad.numerics import RandomSource

logger = logging.getLogger(__name__)

MIN_DIMS = 8


def check_min_dims(d: int) -> None:
    if d < MIN_DIMS:
        raise DimensionTooLow(
            f"MUTANT needs no fewer than {MIN_DIMS} input dimensions; got {d}"
        )


@dataclass(frozen=True)
class FeatureGraph:
    norm_adj: np.ndarray
    rho: np.ndarray


@dataclass(frozen=True)
class MutantTrainConfig:
    window: int = 64
    stride: int = 8
    tau: float = 0.3
    gcn_layers: int = 2
    gcn_hidden: int = 32
    lstm_hidden: int = 32
    latent_dim: int = 8
    seq_len: int = 8
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    momentum: float = 0.9
    clip: float = 5.0
    kl_weight: float = 0.01
    uniform_mix: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.window < 4:
            raise PreconditionError("window length must be >= 4")
        if self.stride < 1 or self.seq_len < 1 or self.epochs < 1 or self.batch_size < 1:
            raise PreconditionError("stride, seq_len, epochs and batch_size must be positive")
        if self.gcn_layers < 1:
            raise PreconditionError("at least one GCN layer is required")
        if not 0.0 <= self.uniform_mix <= 1.0:
            raise PreconditionError("uniform_mix must lie in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MutantTrainConfig":
        return cls(**d)


# ---------------------------------------------------------------- graphs


def correlation_stack(windows: np.ndarray) -> np.ndarray:
    """Pearson correlation of the columns of every ``(L, d)`` window; constant columns get 0."""
    w = np.asarray(windows, dtype=np.float64)
    c = w - w.mean(axis=-2, keepdims=True)
    norms = np.sqrt(np.einsum("...ld,...ld->...d", c, c))
    constant = np.ptp(w, axis=-2) == 0
    safe = np.where(constant, 1.0, norms)
    rho = np.einsum("...li,...lj->...ij", c, c) / (safe[..., :, None] * safe[..., None, :])
    rho = np.clip(rho, -1.0, 1.0)
    rho = np.where(constant[..., :, None] | constant[..., None, :], 0.0, rho)
    return rho


def normalized_adjacency(rho: np.ndarray, tau: float) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with ``A = |rho|`` masked below ``tau`` and no self edges."""
    d = rho.shape[-1]
    a = np.abs(rho)
    a = np.where(a >= tau, a, 0.0)
    eye = np.eye(d, dtype=bool)
    a = np.where(eye, 1.0, a)  # self-loop replaces the diagonal of A
    deg = a.sum(axis=-1)
    inv = 1.0 / np.sqrt(deg)
    out = a * inv[..., :, None] * inv[..., None, :]
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def build_feature_graph(window: np.ndarray, tau: float = 0.3) -> FeatureGraph:
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] < 2:
        raise PreconditionError("a feature graph needs a (L >= 2, d) window")
    rho = correlation_stack(window)
    return FeatureGraph(normalized_adjacency(rho, tau), rho)


def feature_graphs(windows: np.ndarray, tau: float) -> np.ndarray:
    """Normalized adjacency for a stack of windows, shape ``(n, d, d)``."""
    return normalized_adjacency(correlation_stack(windows), tau)


# ---------------------------------------------------------------- network


class MutantNet(nn.Module):
    def __init__(self, window: int, gcn_layers: int, gcn_hidden: int, lstm_hidden: int, latent_dim: int) -> None:
        super().__init__()
        dims = [window] + [gcn_hidden] * gcn_layers
        self.gcn = nn.ParameterList(
            [nn.Parameter(torch.empty(dims[i], dims[i + 1], dtype=DTYPE)) for i in range(gcn_layers)]
        )
        hx = lstm_hidden + gcn_hidden
        for gate in "fioc":
            setattr(self, f"W_{gate}", nn.Parameter(torch.empty(lstm_hidden, hx, dtype=DTYPE)))
            setattr(self, f"b_{gate}", nn.Parameter(torch.empty(lstm_hidden, dtype=DTYPE)))
        self.att = nn.Parameter(torch.empty(1, lstm_hidden, dtype=DTYPE))
        vh = 2 * latent_dim
        self.enc_W = nn.Parameter(torch.empty(vh, gcn_hidden, dtype=DTYPE))
        self.enc_b = nn.Parameter(torch.empty(vh, dtype=DTYPE))
        self.mu_W = nn.Parameter(torch.empty(latent_dim, vh, dtype=DTYPE))
        self.mu_b = nn.Parameter(torch.empty(latent_dim, dtype=DTYPE))
        self.lv_W = nn.Parameter(torch.empty(latent_dim, vh, dtype=DTYPE))
        self.lv_b = nn.Parameter(torch.empty(latent_dim, dtype=DTYPE))
        self.dec_W = nn.Parameter(torch.empty(vh, latent_dim, dtype=DTYPE))
        self.dec_b = nn.Parameter(torch.empty(vh, dtype=DTYPE))
        self.out_W = nn.Parameter(torch.empty(window, vh, dtype=DTYPE))
        self.out_b = nn.Parameter(torch.empty(window, dtype=DTYPE))
        self.window = window
        self.lstm_hidden = lstm_hidden
        self.latent_dim = latent_dim

    def shapes(self) -> dict:
        return {
            "window": self.window,
            "gcn_layers": len(self.gcn),
            "gcn_hidden": self.gcn[0].shape[1],
            "lstm_hidden": self.lstm_hidden,
            "latent_dim": self.latent_dim,
        }


def gcn_forward(adj, h, w) -> torch.Tensor:
    """One propagation step ``ReLU(A_norm H W)``; leading batch axes broadcast."""
    adj, h, w = tensor(adj), tensor(h), tensor(w)
    if adj.shape[-1] != h.shape[-2] or h.shape[-1] != w.shape[0]:
        raise DimensionMismatch(f"cannot propagate {tuple(h.shape)} over {tuple(adj.shape)} with {tuple(w.shape)}")
    return torch.relu(adj @ h @ w)


def embed_nodes(net: MutantNet, windows: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
    """``(..., L, d)`` windows to ``(..., d, gcn_hidden)`` node embeddings."""
    h = windows.transpose(-1, -2)
    for w in net.gcn:
        h = gcn_forward(adj, h, w)
    return h


def lstm_attention(net: MutantNet, embeddings) -> torch.Tensor:
    """Attention over variables for a ``(S, d, g)`` or ``(B, S, d, g)`` embedding sequence.

    One LSTM (weights shared across variables) runs over the S windows for each
    variable; ``alpha_t`` is the softmax over variables of ``att . h_t``.
    """
    x = tensor(embeddings)
    if x.ndim == 3:
        return lstm_attention(net, x[None])[0]
    if x.shape[1] == 0:
        raise PreconditionError("attention needs a non-empty window sequence")
    b, s, d, _ = x.shape
    h = x.new_zeros(b, d, net.lstm_hidden)
    c = x.new_zeros(b, d, net.lstm_hidden)
    alphas = []
    for t in range(s):
        hx = torch.cat([h, x[:, t]], dim=-1)
        f = torch.sigmoid(hx @ net.W_f.T + net.b_f)
        i = torch.sigmoid(hx @ net.W_i.T + net.b_i)
        o = torch.sigmoid(hx @ net.W_o.T + net.b_o)
        c = f * c + i * torch.tanh(hx @ net.W_c.T + net.b_c)
        h = o * torch.tanh(c)
        alphas.append(torch.softmax((h @ net.att.T)[..., 0], dim=-1))
    return torch.stack(alphas, dim=1)


def vae_forward(net: MutantNet, embedding: torch.Tensor, eps: torch.Tensor | None):
    """Per-node encoder/decoder.  Returns ``(reconstruction (..., L, d), mu, logvar)``."""
    hid = torch.tanh(embedding @ net.enc_W.T + net.enc_b)
    mu = hid @ net.mu_W.T + net.mu_b
    logvar = hid @ net.lv_W.T + net.lv_b
    z = mu if eps is None else mu + torch.exp(0.5 * logvar) * eps
    dec = torch.tanh(z @ net.dec_W.T + net.dec_b)
    out = dec @ net.out_W.T + net.out_b
    return out.transpose(-1, -2), mu, logvar


def elbo_terms(target: torch.Tensor, recon: torch.Tensor, alpha: torch.Tensor, mu: torch.Tensor, logvar: torch.Tensor):
    """``(recon_term, kl_term)``, both averaged over windows.

    The reconstruction term weights each variable's window MSE by its attention
    weight; the KL term is the diagonal-Gaussian KL against N(0, I), summed over
    latent units and averaged over variables.
    """
    per_var = ((target - recon) ** 2).mean(dim=-2)
    rec = (alpha * per_var).sum(dim=-1).mean()
    kl = 0.5 * (mu**2 + torch.exp(logvar) - 1.0 - logvar).sum(dim=-1).mean()
    return rec, kl


def vae_elbo(net: MutantNet, embedding, target, alpha, eps, kl_weight: float = 1.0):
    """Loss and reconstruction for a batch of node embeddings.

    Returns ``(loss, reconstruction, recon_term, kl_term)``.
    """
    embedding, target, alpha = tensor(embedding), tensor(target), tensor(alpha)
    eps = None if eps is None else tensor(eps)
    recon, mu, logvar = vae_forward(net, embedding, eps)
    rec, kl = elbo_terms(target, recon, alpha, mu, logvar)
    loss = rec + kl_weight * kl
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite ELBO {float(loss.detach())}")
    return loss, recon, rec, kl


def variable_weights(alpha: torch.Tensor, uniform_mix: float) -> torch.Tensor:
    """Attention mixed with the uniform distribution; stays on the simplex.

    Pure attention weighting lets training park all weight on the easiest
    variable, after which the others are never reconstructed or scored.
    """
    if uniform_mix == 0.0:
        return alpha
    return (1.0 - uniform_mix) * alpha + uniform_mix / alpha.shape[-1]


def model_loss(net: MutantNet, windows, adj, eps, kl_weight: float = 1.0, uniform_mix: float = 0.0):
    """Full forward pass on ``(B, S, L, d)`` windows; returns ``(loss, recon_term, kl_term)``."""
    windows, adj = tensor(windows), tensor(adj)
    emb = embed_nodes(net, windows, adj)
    weights = variable_weights(lstm_attention(net, emb), uniform_mix)
    loss, _, rec, kl = vae_elbo(net, emb, windows, weights, eps, kl_weight)
    return loss, rec, kl


# ---------------------------------------------------------------- training


@dataclass
class MutantModel:
    config: MutantTrainConfig
    n_dims: int
    net: MutantNet
    loss_trace: list[dict] = field(default_factory=list)

    def save(self, directory: str | Path, stem: str = "mutant") -> None:
        meta = {"config": self.config.to_dict(), "n_dims": self.n_dims, "loss_trace": self.loss_trace}
        save_module(directory, stem, self.net, meta)

    @classmethod
    def load(cls, directory: str | Path, stem: str = "mutant") -> "MutantModel":
        meta, state = load_state(directory, stem)
        cfg = MutantTrainConfig.from_dict(meta["config"])
        net = _make_net(cfg)
        net.load_state_dict(state)
        return cls(cfg, int(meta["n_dims"]), net, list(meta["loss_trace"]))


def _make_net(cfg: MutantTrainConfig) -> MutantNet:
    return MutantNet(cfg.window, cfg.gcn_layers, cfg.gcn_hidden, cfg.lstm_hidden, cfg.latent_dim)


def init_net(cfg: MutantTrainConfig, rng: RandomSource) -> MutantNet:
    net = _make_net(cfg)
    init_parameters(net, rng)
    return net


def _sequences(n_windows: int, seq_len: int) -> np.ndarray:
    """Index array ``(n_seq, seq_len)`` of consecutive non-overlapping window runs."""
    s = min(seq_len, n_windows)
    n_seq = n_windows // s
    return np.arange(n_seq * s).reshape(n_seq, s)


def train_mutant(ds: TimeSeriesDataset, cfg: MutantTrainConfig = MutantTrainConfig()) -> MutantModel:
    """Unsupervised training on the train split; one loss-trace entry per epoch."""
    check_min_dims(ds.n_dims)
    if ds.train.shape[0] < cfg.window:
        raise SeriesTooShort(f"train split has {ds.train.shape[0]} rows, window is {cfg.window}")
    rng = RandomSource(cfg.seed)
    net = init_net(cfg, rng.child(0))
    windows, _ = make_windows(ds.train, WindowConfig(cfg.window, cfg.stride))
    adj = torch.from_numpy(feature_graphs(windows, cfg.tau))
    xw = torch.from_numpy(np.ascontiguousarray(windows))
    seqs = _sequences(windows.shape[0], cfg.seq_len)
    opt = Optimizer(net, cfg.lr, cfg.momentum, cfg.clip)
    noise = rng.child(1)
    order_rng = rng.child(2)
    trace = []
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(seqs.shape[0])
        sums = np.zeros(3)
        for start in range(0, order.size, cfg.batch_size):
            idx = torch.from_numpy(seqs[order[start : start + cfg.batch_size]])
            xb, ab = xw[idx], adj[idx]
            eps = torch.from_numpy(noise.normal(size=(*idx.shape, ds.n_dims, cfg.latent_dim)))
            loss, rec, kl = model_loss(net, xb, ab, eps, cfg.kl_weight, cfg.uniform_mix)
            opt.step(loss)
            sums += np.array([float(loss.detach()), float(rec.detach()), float(kl.detach())]) * idx.shape[0]
        sums /= order.size
        trace.append({"epoch": epoch + 1, "loss": sums[0], "recon": sums[1], "kl": sums[2]})
        logger.debug("mutant epoch %d loss %.6f", epoch + 1, sums[0])
    return MutantModel(cfg, ds.n_dims, net, trace)


# ---------------------------------------------------------------- scoring


def scoring_windows(n_rows: int, window: int, stride: int) -> np.ndarray:
    """Window starts covering every row: the strided grid plus a tail window if needed."""
    if n_rows < window:
        raise SeriesTooShort(f"{n_rows} rows are fewer than the window length {window}")
    starts = np.arange(0, n_rows - window + 1, stride)
    if starts[-1] != n_rows - window:
        starts = np.append(starts, n_rows - window)
    return starts


def window_errors(model: MutantModel, series: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Attention-weighted per-timestep errors for each scoring window.

    Returns ``(errors (n_w, L), starts)``; the VAE uses its posterior mean.
    """
    cfg = model.config
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2 or series.shape[1] != model.n_dims:
        raise DimensionMismatch(f"model expects {model.n_dims} columns, got {series.shape}")
    starts = scoring_windows(series.shape[0], cfg.window, cfg.stride)
    windows = series[starts[:, None] + np.arange(cfg.window)[None, :]]
    adj = feature_graphs(windows, cfg.tau)
    errors = np.empty((starts.size, cfg.window))
    s = cfg.seq_len
    with torch.no_grad():
        for lo in range(0, starts.size, s * cfg.batch_size):
            hi = min(lo + s * cfg.batch_size, starts.size)
            full = (hi - lo) // s * s
            for a, b, k in ((lo, lo + full, s), (lo + full, hi, hi - lo - full)):
                if b <= a:
                    continue
                xb = torch.from_numpy(windows[a:b]).reshape(-1, k, cfg.window, model.n_dims)
                ab = torch.from_numpy(adj[a:b]).reshape(-1, k, model.n_dims, model.n_dims)
                emb = embed_nodes(model.net, xb, ab)
                alpha = variable_weights(lstm_attention(model.net, emb), cfg.uniform_mix)
                recon, _, _ = vae_forward(model.net, emb, None)
                err = (alpha[..., None, :] * (xb - recon) ** 2).sum(dim=-1)
                errors[a:b] = err.reshape(-1, cfg.window).numpy()
    return errors, starts


def score_mutant(model: MutantModel, ds: TimeSeriesDataset, split: str = "test") -> AnomalyScoreSeries:
    """Per-timestep anomaly score: mean window-local error over the windows covering it."""
    check_min_dims(ds.n_dims)
    series = ds.test if split == "test" else ds.train
    errors, starts = window_errors(model, series)
    n, w = series.shape[0], model.config.window
    total = np.zeros(n)
    count = np.zeros(n)
    for s, e in zip(starts, errors):
        total[s : s + w] += e
        count[s : s + w] += 1
    return AnomalyScoreSeries(total / count, detector="mutant", fingerprint=_fingerprint(model))


def _fingerprint(model: MutantModel) -> str:
    blob = json.dumps({"cfg": model.config.to_dict(), "d": model.n_dims}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]

