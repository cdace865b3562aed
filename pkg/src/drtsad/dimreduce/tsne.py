"""Exact (O(N^2)) t-SNE, fitted jointly on train and test rows."""

from __future__ import annotations

import numpy as np

from drtsad.dimreduce.base import FittedReducer, ReducerSpec, pairwise_sq_dists
from drtsad.dimreduce.linear import fit_pca, transform_linear
from drtsad.errors import PreconditionError, TargetDimTooHigh, TooLargeForExact


def conditional_probabilities(sq_dists: np.ndarray, perplexity: float, tol: float = 1e-10, max_iter: int = 200):
    """Row-wise Gaussian conditionals ``p_{j|i}`` whose perplexity matches the target.

    Bisects the precision ``beta_i = 1 / (2 sigma_i^2)`` of each row until the
    Shannon entropy (nats) equals ``ln(perplexity)``.  Returns ``(P, beta)``.
    """
    n = sq_dists.shape[0]
    if not 1.0 <= perplexity < n - 1:
        raise PreconditionError(f"perplexity must lie in [1, N-1) = [1, {n - 1}), got {perplexity}")
    d = sq_dists.astype(np.float64).copy()
    np.fill_diagonal(d, np.inf)
    d -= d.min(axis=1, keepdims=True)
    target = np.log(perplexity)
    beta = np.ones(n)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    for _ in range(max_iter):
        p = np.exp(-d * beta[:, None])
        s = p.sum(axis=1)
        p /= s[:, None]
        dp = np.where(np.isfinite(d), d, 0.0) * p
        entropy = np.log(s) + beta * dp.sum(axis=1)
        diff = entropy - target
        if np.all(np.abs(diff) < tol):
            break
        # entropy falls as beta grows
        up = diff > 0
        lo = np.where(up, beta, lo)
        hi = np.where(up, hi, beta)
        beta = np.where(np.isinf(hi), beta * 2.0, (lo + hi) / 2.0)
    p = np.exp(-d * beta[:, None])
    p /= p.sum(axis=1, keepdims=True)
    return p, beta


def joint_probabilities(cond: np.ndarray) -> np.ndarray:
    n = cond.shape[0]
    return (cond + cond.T) / (2.0 * n)


def kl_objective(p: np.ndarray, y: np.ndarray) -> float:
    num = 1.0 / (1.0 + pairwise_sq_dists(y, y))
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(np.maximum(q[mask], 1e-300)))))


def fit_tsne_joint(train: np.ndarray, test: np.ndarray, spec: ReducerSpec) -> FittedReducer:
    """Embed train and test rows together.

    t-SNE has no out-of-sample map, so the test rows take part in the fit; the
    returned ``info`` records which embedding rows belong to which split.
    """
    if spec.technique != "tsne":
        raise PreconditionError("spec is not a t-SNE spec")
    m = spec.target_dim
    if m > 3:
        raise TargetDimTooHigh(f"t-SNE supports at most 3 output dimensions, got {m}")
    train = np.asarray(train, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64).reshape(-1, train.shape[1])
    x = np.vstack([train, test])
    n = x.shape[0]
    if n > spec.max_fit_rows:
        raise TooLargeForExact(f"{n} rows exceed the exact t-SNE cap of {spec.max_fit_rows}")
    p_cfg = spec.tsne

    cond, beta = conditional_probabilities(pairwise_sq_dists(x, x), p_cfg.perplexity)
    p = joint_probabilities(cond)

    init = transform_linear(fit_pca(x, m), x)
    std = init[:, 0].std()
    y = init / std * 1e-4 if std > 0 else init.copy()

    lr = p_cfg.learning_rate
    if lr is None or lr == "auto":
        lr = max(n / p_cfg.exaggeration / 4.0, 50.0)
    mask = p > 0
    p_log_p = float(np.sum(p[mask] * np.log(p[mask])))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    losses = []
    for it in range(p_cfg.iterations):
        early = it < p_cfg.exaggeration_iters
        exag = p_cfg.exaggeration if early else 1.0
        momentum = p_cfg.momentum if early else p_cfg.final_momentum
        num = 1.0 / (1.0 + pairwise_sq_dists(y, y))
        np.fill_diagonal(num, 0.0)
        q = num / num.sum()
        w = (exag * p - q) * num
        grad = 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)
        same = np.sign(grad) == np.sign(update)
        gains = np.maximum(np.where(same, gains * 0.8, gains + 0.2), 0.01)
        # KL(P || Q) at the current layout; the diagonal has p = 0
        np.fill_diagonal(num, 1.0)
        losses.append(p_log_p - float(np.sum(p * np.log(num))) + float(np.log(num.sum() - n)))
        update = momentum * update - lr * gains * grad
        y = y + update
        y -= y.mean(axis=0)

    info = {
        "train_rows": [0, train.shape[0]],
        "test_rows": [train.shape[0], n],
        "loss_trace": losses,
        "exaggeration_iters": p_cfg.exaggeration_iters,
        "learning_rate": lr,
    }
    return FittedReducer(spec, train.shape[1], {"embedding": y, "beta": beta}, info)
