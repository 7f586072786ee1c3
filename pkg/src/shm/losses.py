"""Training objectives: alpha prediction, compositional, trimap cross entropy.

All functions take N x C x H x W tensors.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 0.5
    lambda_t: float = 0.01
    charbonnier_eps: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.lambda_t < 0 or self.charbonnier_eps < 0:
            raise ValueError("lambda_t and charbonnier_eps must be non-negative")


@dataclass
class LossBreakdown:
    alpha_term: torch.Tensor
    comp_term: torch.Tensor
    trimap_term: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in ("alpha_term", "comp_term", "trimap_term", "total")}


def _charbonnier(diff: torch.Tensor, eps: float) -> torch.Tensor:
    if eps == 0:
        return diff.abs()
    return torch.sqrt(diff * diff + eps * eps)


def prediction_loss(alpha_p, alpha_g, fg, bg, weights: LossWeights = LossWeights(),
                    region_mask=None) -> tuple[torch.Tensor, torch.Tensor]:
    """(alpha term, compositional term), each averaged over the masked pixels.

    ``alpha_*`` are N x 1 x H x W, ``fg``/``bg`` N x 3 x H x W. ``region_mask``
    (N x 1 x H x W, 0/1) restricts both terms, e.g. to the unknown band.
    """
    if alpha_p.shape != alpha_g.shape:
        raise ValueError(f"alpha_p {tuple(alpha_p.shape)} vs alpha_g {tuple(alpha_g.shape)}")
    if fg.shape != bg.shape or fg.shape[-2:] != alpha_p.shape[-2:]:
        raise ValueError(f"fg {tuple(fg.shape)} / bg {tuple(bg.shape)} do not match alpha")
    eps = weights.charbonnier_eps
    if region_mask is None:
        mask = torch.ones_like(alpha_g)
    else:
        mask = region_mask.to(alpha_g.dtype)
    count = mask.sum()
    if float(count) == 0:
        raise ValueError("region_mask selects no pixels")
    alpha_term = (_charbonnier(alpha_p - alpha_g, eps) * mask).sum() / count
    # c_p - c_g = (alpha_p - alpha_g) * (fg - bg)
    comp_p = alpha_p * fg + (1 - alpha_p) * bg
    comp_g = alpha_g * fg + (1 - alpha_g) * bg
    comp_term = (_charbonnier(comp_p - comp_g, eps) * mask).sum() / (count * fg.shape[1])
    return alpha_term, comp_term


def trimap_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel cross entropy; ``labels`` N x H x W in {0, 1, 2}."""
    if logits.shape[0] != labels.shape[0] or logits.shape[-2:] != labels.shape[-2:]:
        raise ValueError(f"logits {tuple(logits.shape)} vs labels {tuple(labels.shape)}")
    if not bool(torch.isfinite(logits).all()):
        raise ValueError("non-finite trimap logits")
    return F.cross_entropy(logits, labels.long())


def total_loss(alpha_term, comp_term, trimap_term, weights: LossWeights = LossWeights()) -> LossBreakdown:
    zero = torch.zeros((), dtype=torch.float64)
    a = alpha_term if alpha_term is not None else zero
    c = comp_term if comp_term is not None else zero
    t = trimap_term if trimap_term is not None else zero
    total = weights.gamma * a + (1 - weights.gamma) * c + weights.lambda_t * t
    return LossBreakdown(alpha_term=a, comp_term=c, trimap_term=t, total=total)
