"""Probabilistic fusion of trimap probabilities and the raw matte."""
from __future__ import annotations

import torch


def _validate(probs: torch.Tensor, alpha_raw: torch.Tensor, tol: float = 1e-5) -> None:
    if probs.dim() != 4 or probs.shape[1] != 3:
        raise ValueError(f"probs must be N x 3 x H x W, got {tuple(probs.shape)}")
    if alpha_raw.dim() != 4 or alpha_raw.shape[1] != 1:
        raise ValueError(f"alpha_raw must be N x 1 x H x W, got {tuple(alpha_raw.shape)}")
    if probs.shape[0] != alpha_raw.shape[0] or probs.shape[-2:] != alpha_raw.shape[-2:]:
        raise ValueError(f"probs {tuple(probs.shape)} and alpha_raw {tuple(alpha_raw.shape)} disagree")
    with torch.no_grad():
        if float((probs.sum(1) - 1).abs().max()) > tol or float(probs.min()) < -tol:
            raise ValueError("probs are not per-pixel distributions")
        if float(alpha_raw.min()) < -tol or float(alpha_raw.max()) > 1 + tol:
            raise ValueError("alpha_raw outside [0, 1]")


def fuse(probs: torch.Tensor, alpha_raw: torch.Tensor, check: bool = True) -> torch.Tensor:
    """alpha_p = Fs + Us * alpha_r.

    ``probs`` holds (Fs, Bs, Us) on dim 1. Differentiable in both inputs.
    """
    if check:
        _validate(probs, alpha_raw)
    fs = probs[:, 0:1]
    us = probs[:, 2:3]
    return fs + us * alpha_raw


def fuse_conditional(probs: torch.Tensor, alpha_raw: torch.Tensor) -> torch.Tensor:
    """Unsimplified form: (1 - Us) * Fs / (Fs + Bs) + Us * alpha_r.

    Undefined where Fs + Bs == 0; kept to check the simplified rule.
    """
    fs, bs, us = probs[:, 0:1], probs[:, 1:2], probs[:, 2:3]
    return (1 - us) * fs / (fs + bs) + us * alpha_raw
