"""Plumbing shared by both detectors: float64 torch, seeded init, optimizer, blobs."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
from torch import nn

from drtsad.errors import TrainingDiverged
from drtsad.numerics import RandomSource
from drtsad.serialization import load_bundle, save_bundle

DTYPE = torch.float64


def tensor(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=np.float64) if not torch.is_tensor(x) else x, dtype=DTYPE)


def init_parameters(module: nn.Module, rng: RandomSource) -> None:
    """Deterministic init from the numpy stream, independent of torch's RNG.

    Matrices get Glorot-uniform entries, vectors start at zero, LayerNorm gains at one.
    """
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("ln_gain") or (isinstance(p, nn.Parameter) and name.split(".")[-1] == "weight" and p.ndim == 1):
                p.fill_(1.0)
            elif p.ndim == 1:
                p.zero_()
            else:
                fan_out, fan_in = p.shape[0], int(np.prod(p.shape[1:]))
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                p.copy_(torch.from_numpy(rng.uniform(-bound, bound, size=tuple(p.shape))))


def flat_parameters(module: nn.Module) -> np.ndarray:
    return torch.nn.utils.parameters_to_vector(module.parameters()).detach().numpy().copy()


def set_flat_parameters(module: nn.Module, flat: np.ndarray) -> None:
    with torch.no_grad():
        torch.nn.utils.vector_to_parameters(torch.as_tensor(flat, dtype=DTYPE), module.parameters())


def flat_gradient(module: nn.Module) -> np.ndarray:
    parts = []
    for p in module.parameters():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        parts.append(g.reshape(-1))
    return torch.cat(parts).detach().numpy().copy()


class Optimizer:
    """SGD with momentum and global gradient-norm clipping."""

    def __init__(self, module: nn.Module, lr: float, momentum: float = 0.9, clip: float = 5.0) -> None:
        self.module = module
        self.clip = clip
        self.sgd = torch.optim.SGD(module.parameters(), lr=lr, momentum=momentum)

    def step(self, loss: torch.Tensor) -> float:
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite training loss {value}")
        self.sgd.zero_grad()
        loss.backward()
        if self.clip:
            torch.nn.utils.clip_grad_norm_(self.module.parameters(), self.clip)
        self.sgd.step()
        return value


def save_module(directory: str | Path, stem: str, module: nn.Module, meta: dict) -> None:
    arrays = {k: v.detach().numpy() for k, v in module.state_dict().items()}
    save_bundle(directory, stem, meta, arrays)


def load_state(directory: str | Path, stem: str) -> tuple[dict, dict[str, torch.Tensor]]:
    meta, arrays = load_bundle(directory, stem)
    return meta, {k: torch.from_numpy(v) for k, v in arrays.items()}
