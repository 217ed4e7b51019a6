"""Training objective: MAE plus the gated hard pairwise ranking loss.

Scores live in the normalized [0, 1] MOS space. A pair ``(i, j)`` counts as
hard when ``0 < |y_i - y_j| <= tau``; only hard pairs contribute, and each
is a hinge whose margin is the true gap itself::

    max(0, |y_i - y_j| - sign(y_i - y_j) * (yhat_i - yhat_j))

with ``sign`` taken as +1 on ties. The rank term is the mean over the hard
pairs in the batch (0 when there are none).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import _kernels


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    tau: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")


def _check(y, yhat):
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: y {tuple(y.shape)} vs yhat {tuple(yhat.shape)}")
    if y.dim() != 1 or y.numel() < 1:
        raise ValueError("expected 1-d batches with at least one element")


def _as_tensor(v, like=None):
    if isinstance(v, torch.Tensor):
        return v
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(v, dtype=dtype)


def mae_loss(y, yhat) -> torch.Tensor:
    y, yhat = _as_tensor(y), _as_tensor(yhat)
    y = y.to(yhat.dtype)
    _check(y, yhat)
    return (yhat - y).abs().mean()


def l1_sign(y_i: float, y_j: float) -> int:
    return 1 if y_i >= y_j else -1


def l2_gate(y_i: float, y_j: float, tau: float) -> int:
    if tau <= 0:
        raise ValueError("tau must be > 0")
    return 1 if 0 < abs(y_i - y_j) <= tau else 0


def hard_rank_pair(y_i, y_j, yhat_i, yhat_j, tau) -> float:
    """Scalar loss for one pair."""
    gap = y_i - y_j
    return l2_gate(y_i, y_j, tau) * max(0.0, abs(gap) - l1_sign(y_i, y_j) * (yhat_i - yhat_j))


def pair_terms(y: torch.Tensor, yhat: torch.Tensor, tau: float):
    """Hinge values and the gate mask over all ``i < j`` pairs of the batch."""
    n = y.shape[0]
    i, j = torch.triu_indices(n, n, offset=1, device=y.device)
    gap = y[i] - y[j]
    gate = (gap != 0) & (gap.abs() <= tau)
    sign = torch.where(gap >= 0, 1.0, -1.0).to(yhat.dtype)
    hinge = torch.clamp(gap.abs() - sign * (yhat[i] - yhat[j]), min=0.0)
    return hinge, gate


def hard_rank_loss(y, yhat, tau: float = 0.1) -> torch.Tensor:
    y, yhat = _as_tensor(y), _as_tensor(yhat)
    y = y.to(yhat.dtype)
    _check(y, yhat)
    hinge, gate = pair_terms(y, yhat, tau)
    if not bool(gate.any()):
        return yhat.sum() * 0.0
    return hinge[gate].mean()


def combined_loss(y, yhat, cfg: LossConfig = LossConfig(), parts=False):
    """``mae + lam * rank``; with ``parts=True`` also returns the two terms."""
    mae = mae_loss(y, yhat)
    rank = hard_rank_loss(y, yhat, cfg.tau)
    total = mae + cfg.lam * rank if cfg.lam else mae
    if parts:
        return total, {"mae": mae.detach(), "rank": rank.detach()}
    return total


def hard_pair_accuracy(y, yhat, tau: float = 0.1):
    """Fraction of hard pairs ordered correctly; ``(accuracy, n_hard_pairs)``."""
    _, gated, correct = _kernels.hard_pair_stats(np.asarray(y, dtype=np.float64),
                                                 np.asarray(yhat, dtype=np.float64), float(tau))
    return (correct / gated if gated else float("nan")), gated
