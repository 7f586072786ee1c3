"""Trimap labels, one-hot encodings and the 3-class softmax.

Channel / label order everywhere is (foreground, background, unknown).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .imaging import as_matte, erode, load_png, save_png

FG, BG, UNK = 0, 1, 2
PURE_TOL = 1.0 / 255.0

# PNG rendering codes
_PNG_CODES = {FG: 255, BG: 0, UNK: 128}


def make_trimap(alpha: np.ndarray, radius: int, tol: float = PURE_TOL) -> np.ndarray:
    """Label map from a matte by eroding its pure-foreground and pure-background sets.

    Any pixel whose alpha is strictly fractional (beyond ``tol`` from 0 and 1)
    is always unknown.
    """
    if int(radius) != radius or radius < 1:
        raise ValueError(f"trimap radius must be an integer >= 1, got {radius!r}")
    alpha = as_matte(alpha)
    fg = erode(alpha >= 1.0 - tol, radius)
    bg = erode(alpha <= tol, radius)
    labels = np.full(alpha.shape, UNK, dtype=np.uint8)
    labels[fg] = FG
    labels[bg] = BG
    return labels


def check_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"trimap labels must be H x W, got shape {labels.shape}")
    bad = ~np.isin(labels, (FG, BG, UNK))
    if bad.any():
        raise ValueError(f"trimap labels must be in {{0,1,2}}, found {np.unique(labels[bad])}")
    return labels.astype(np.uint8)


def encode_onehot(labels: np.ndarray) -> np.ndarray:
    """(H, W) labels -> (H, W, 3) probabilities."""
    labels = check_labels(labels)
    return np.eye(3, dtype=np.float64)[labels]


def decode(probs: np.ndarray) -> np.ndarray:
    return np.argmax(probs, axis=-1).astype(np.uint8)


def softmax3(logits, axis: int = -1):
    """Numerically stable softmax over the 3-class axis.

    Accepts numpy arrays (default axis -1, i.e. H x W x 3) or torch tensors
    (pass ``axis=1`` for N x 3 x H x W). Non-finite logits are rejected.
    """
    if isinstance(logits, torch.Tensor):
        if logits.shape[axis] != 3:
            raise ValueError(f"expected 3 channels on axis {axis}, got shape {tuple(logits.shape)}")
        if not bool(torch.isfinite(logits).all()):
            raise ValueError("non-finite trimap logits")
        return torch.softmax(logits, dim=axis)
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[axis] != 3:
        raise ValueError(f"expected 3 channels on axis {axis}, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite trimap logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def save_trimap_png(path: str | Path, labels: np.ndarray) -> None:
    labels = check_labels(labels)
    codes = np.zeros(labels.shape, dtype=np.float64)
    for lab, code in _PNG_CODES.items():
        codes[labels == lab] = code / 255.0
    save_png(path, codes, bits=8)


def load_trimap_png(path: str | Path) -> np.ndarray:
    codes = np.rint(load_png(path) * 255.0).astype(np.int64)
    if codes.ndim != 2:
        raise ValueError(f"{path}: trimap PNG must be single-channel")
    if not np.isin(codes, (0, 128, 255)).all():
        raise ValueError(f"{path}: trimap codes must be 0, 128 or 255")
    labels = np.full(codes.shape, UNK, dtype=np.uint8)
    labels[codes == 255] = FG
    labels[codes == 0] = BG
    return labels
