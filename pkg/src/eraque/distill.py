"""Teacher-to-student distillation terms.

``kd``: absolute difference between student and teacher scores.
``at``: per stage, the channel-summed absolute activation map of each
network is L2-normalised; the loss is the L2 distance between the two
normalised maps divided by ``2 * n`` with ``n`` the element count of the
stage tensor. The total objective adds the plain training loss, ``kd`` and
the mean of the four stage ``at`` terms. All per-frame terms are averaged
over the batch.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from .losses import LossConfig, combined_loss

log = logging.getLogger(__name__)

N_STAGES = 4


@dataclass(frozen=True)
class DistillConfig:
    enable_kd: bool = True
    enable_attention: bool = True


class ZeroNormCounter:
    """Counts attention maps skipped for having zero norm."""

    def __init__(self):
        self.count = 0

    def add(self, k: int):
        if k:
            self.count += k
            log.warning("skipped %d zero-norm attention maps (total %d)", k, self.count)


zero_norm_events = ZeroNormCounter()


def kd_loss(yhat_s, yhat_t) -> torch.Tensor:
    yhat_s = torch.as_tensor(yhat_s, dtype=torch.float64) if not isinstance(yhat_s, torch.Tensor) else yhat_s
    yhat_t = torch.as_tensor(yhat_t, dtype=yhat_s.dtype) if not isinstance(yhat_t, torch.Tensor) else yhat_t
    if yhat_s.shape != yhat_t.shape:
        raise ValueError(f"score shape mismatch {tuple(yhat_s.shape)} vs {tuple(yhat_t.shape)}")
    return (yhat_s - yhat_t).abs().mean()


def attention_map(A: torch.Tensor) -> torch.Tensor:
    """Sum of absolute activations over channels: ``[..., C, H, W] -> [..., H, W]``."""
    if A.dim() < 3 or A.numel() == 0:
        raise ValueError(f"expected a non-empty [C, H, W] tensor, got {tuple(A.shape)}")
    return A.abs().sum(dim=-3)


def attention_loss_batch(A_s: torch.Tensor, A_t: torch.Tensor, stage=None) -> torch.Tensor:
    """Per-frame attention-transfer loss for ``[B, C, H, W]`` stage outputs, shape ``[B]``."""
    if A_s.shape != A_t.shape:
        where = "" if stage is None else f"stage {stage}: "
        raise ValueError(f"{where}student {tuple(A_s.shape)} vs teacher {tuple(A_t.shape)}")
    nodes = A_s[0].numel()
    ms = attention_map(A_s).flatten(1)
    mt = attention_map(A_t).flatten(1)
    ns = torch.linalg.vector_norm(ms, dim=1, keepdim=True)
    nt = torch.linalg.vector_norm(mt, dim=1, keepdim=True)
    ok = ((ns > 0) & (nt > 0)).squeeze(1)
    zero_norm_events.add(int((~ok).sum()))
    # masked denominators keep gradients finite on the skipped frames
    ns = torch.where(ns > 0, ns, torch.ones_like(ns))
    nt = torch.where(nt > 0, nt, torch.ones_like(nt))
    dist = torch.linalg.vector_norm(ms / ns - mt / nt, dim=1)
    return torch.where(ok, dist, torch.zeros_like(dist)) / (2.0 * nodes)


def attention_loss(A_s: torch.Tensor, A_t: torch.Tensor, stage=None) -> torch.Tensor:
    """Loss for one frame's ``[C, H, W]`` pair (or the batch mean for 4-d input)."""
    if A_s.dim() == 3:
        return attention_loss_batch(A_s[None], A_t[None], stage)[0]
    return attention_loss_batch(A_s, A_t, stage).mean()


def total_distill_loss(y, student_scores, student_feats, teacher_scores, teacher_feats,
                       cfg: LossConfig = LossConfig(), dcfg: DistillConfig = DistillConfig(),
                       parts=False):
    """Student objective. Teacher tensors are detached here regardless of caller."""
    if len(student_feats) != N_STAGES or len(teacher_feats) != N_STAGES:
        raise ValueError(f"expected {N_STAGES} stage maps per network")
    for i, (a, b) in enumerate(zip(student_feats, teacher_feats), start=1):
        if a.shape != b.shape:
            raise ValueError(f"stage {i}: student {tuple(a.shape)} vs teacher {tuple(b.shape)}")
    teacher_scores = teacher_scores.detach()
    org, terms = combined_loss(y, student_scores, cfg, parts=True)
    total = org
    kd = student_scores.new_zeros(())
    stage_terms = [student_scores.new_zeros(()) for _ in range(N_STAGES)]
    if dcfg.enable_kd:
        kd = kd_loss(student_scores, teacher_scores)
        total = total + kd
    if dcfg.enable_attention:
        stage_terms = [attention_loss(a, b.detach(), i)
                       for i, (a, b) in enumerate(zip(student_feats, teacher_feats), start=1)]
        total = total + sum(stage_terms) / N_STAGES
    if parts:
        terms = dict(terms, kd=kd.detach(),
                     **{f"at{i}": t.detach() for i, t in enumerate(stage_terms, start=1)})
        return total, terms
    return total
