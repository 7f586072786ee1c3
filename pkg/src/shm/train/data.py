"""In-memory sample bank and per-stage augmentation.

Every random draw for step ``s`` comes from ``rng_for(seed, s)``, so a batch
depends only on (seed, step) and never on worker count or resume point.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .. import imaging
from ..synthdata import DatasetManifest
from ..trimap import UNK, make_trimap

# channel layout of the stacked raster: composite, fg, bg, alpha
IMG, FGC, BGC, ALPHA = slice(0, 3), slice(3, 6), slice(6, 9), 9


def rng_for(seed: int, step: int, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(step), int(salt)])


@dataclass
class SampleBank:
    """Decoded rasters of one split, stacked as H x W x 10 float32 per record."""
    stacks: list[np.ndarray]
    fg_ids: list[str]
    sample_ids: list[str]
    unknown: list[np.ndarray]   # native-resolution unknown band, for crop centring

    def __len__(self):
        return len(self.stacks)

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, split: str, radius: int = 4,
                      exclude_fg: set[str] | None = None, only_fg: set[str] | None = None) -> "SampleBank":
        stacks, fg_ids, sids, unk = [], [], [], []
        alpha_cache: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        for rec in manifest.split(split):
            if exclude_fg and rec.foreground_id in exclude_fg:
                continue
            if only_fg is not None and rec.foreground_id not in only_fg:
                continue
            if rec.foreground_id not in alpha_cache:
                a = imaging.load_png(manifest.resolve(rec.alpha_path))
                f = imaging.load_png(manifest.resolve(rec.fg_path))
                alpha_cache[rec.foreground_id] = (f, a, make_trimap(a, radius) == UNK)
            f, a, u = alpha_cache[rec.foreground_id]
            comp = imaging.load_png(manifest.resolve(rec.composite_path))
            bg = imaging.load_png(manifest.resolve(rec.bg_path))
            stacks.append(np.concatenate([comp, f, bg, a[..., None]], axis=2).astype(np.float32))
            fg_ids.append(rec.foreground_id)
            sids.append(rec.sample_id)
            unk.append(u)
        if not stacks:
            raise ValueError(f"no {split} records selected from manifest")
        return cls(stacks, fg_ids, sids, unk)

    def subset(self, n: int) -> "SampleBank":
        return SampleBank(self.stacks[:n], self.fg_ids[:n], self.sample_ids[:n], self.unknown[:n])


def _square_window(rng, h, w, side, unknown=None, tries=10):
    side = min(side, h, w)
    for _ in range(tries):
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        if unknown is None or unknown[top:top + side, left:left + side].any():
            break
    return top, left, side


def _geometric(stack, rng, out_size, side, flip_prob, rotation_deg, unknown=None, fixed=False):
    h, w = stack.shape[:2]
    if fixed:
        side = min(side, h, w)
        top, left = (h - side) // 2, (w - side) // 2
    else:
        top, left, side = _square_window(rng, h, w, side, unknown)
    x = imaging.crop(stack, top, left, side, side).astype(np.float64)
    x = imaging.resize(x, out_size, out_size)
    if not fixed:
        if rotation_deg > 0:
            x = imaging.rotate_small(x, float(rng.uniform(-rotation_deg, rotation_deg)))
        if rng.random() < flip_prob:
            x = imaging.hflip(x)
    return x


def to_chw(batch: list[np.ndarray]) -> torch.Tensor:
    return torch.from_numpy(np.stack(batch).transpose(0, 3, 1, 2).astype(np.float32))


def pick(rng, bank: SampleBank, batch: int, overfit: bool) -> list[int]:
    if overfit:
        return list(range(len(bank)))
    return [int(i) for i in rng.integers(0, len(bank), size=batch)]


def segmentation_batch(bank, cfg, step, overfit=False):
    """Patches for T-Net style training: random square patch, resize, rotate, flip.

    Returns image (N,3,S,S), alpha (N,1,S,S), trimap labels (N,S,S).
    """
    rng = rng_for(cfg.seed, step)
    imgs, alphas, labels = [], [], []
    for i in pick(rng, bank, cfg.batch_size, overfit):
        side = int(round(cfg.crop_size * rng.uniform(*cfg.scale_range)))
        x = _geometric(bank.stacks[i], rng, cfg.crop_size, side, cfg.flip_prob,
                       cfg.rotation_deg, fixed=overfit)
        imgs.append(x[..., IMG])
        alphas.append(x[..., ALPHA:ALPHA + 1])
        labels.append(make_trimap(np.clip(x[..., ALPHA], 0, 1), cfg.trimap_radius))
    return (to_chw(imgs), to_chw(alphas),
            torch.from_numpy(np.stack(labels).astype(np.int64)))


def matting_batch(bank, cfg, step, overfit=False):
    """M-Net pre-training patches with a trimap of randomly sampled radius.

    Returns image, fg, bg, alpha, one-hot trimap (N,3,S,S) and unknown mask (N,1,S,S).
    """
    rng = rng_for(cfg.seed, step)
    out = {k: [] for k in ("image", "fg", "bg", "alpha", "trimap", "unknown")}
    for i in pick(rng, bank, cfg.batch_size, overfit):
        side = int(rng.choice(cfg.inner_crops)) if not overfit else cfg.inner_crops[0]
        x = _geometric(bank.stacks[i], rng, cfg.inner_size, side, cfg.flip_prob, 0.0,
                       unknown=bank.unknown[i] if cfg.unknown_centering else None, fixed=overfit)
        radius = int(rng.integers(cfg.radius_range[0], cfg.radius_range[1] + 1))
        if overfit:
            radius = cfg.radius_range[0]
        lab = make_trimap(np.clip(x[..., ALPHA], 0, 1), radius)
        out["image"].append(x[..., IMG])
        out["fg"].append(x[..., FGC])
        out["bg"].append(x[..., BGC])
        out["alpha"].append(x[..., ALPHA:ALPHA + 1])
        out["trimap"].append(np.eye(3)[lab])
        out["unknown"].append((lab == UNK)[..., None].astype(np.float64))
    return {k: to_chw(v) for k, v in out.items()}


@dataclass
class E2EBatch:
    image: torch.Tensor      # outer crops
    fg: torch.Tensor
    bg: torch.Tensor
    alpha: torch.Tensor
    labels: torch.Tensor     # GT trimap of the outer crops
    windows: list[tuple[int, int, int]]   # inner (top, left, side) per sample


def e2e_batch(bank, cfg, step, overfit=False) -> E2EBatch:
    rng = rng_for(cfg.seed, step)
    stacks, labels, windows = [], [], []
    for i in pick(rng, bank, cfg.batch_size, overfit):
        st = bank.stacks[i]
        h, w = st.shape[:2]
        if overfit:
            side = min(cfg.outer_crop, h, w)
            top, left = (h - side) // 2, (w - side) // 2
        else:
            top, left, side = _square_window(rng, h, w, cfg.outer_crop)
        x = imaging.crop(st, top, left, side, side).astype(np.float64)
        if side != cfg.outer_crop:
            x = imaging.resize(x, cfg.outer_crop, cfg.outer_crop)
        if not overfit and rng.random() < cfg.flip_prob:
            x = imaging.hflip(x)
        lab = make_trimap(np.clip(x[..., ALPHA], 0, 1), cfg.trimap_radius)
        inner = int(rng.choice(cfg.inner_crops)) if not overfit else cfg.inner_crops[0]
        if overfit:
            o = (cfg.outer_crop - inner) // 2
            win = (o, o, inner)
        else:
            unk = (lab == UNK) if cfg.unknown_centering else None
            win = _square_window(rng, cfg.outer_crop, cfg.outer_crop, inner, unk)
        stacks.append(x)
        labels.append(lab)
        windows.append(win)
    t = to_chw(stacks)
    return E2EBatch(image=t[:, IMG], fg=t[:, FGC], bg=t[:, BGC], alpha=t[:, ALPHA:ALPHA + 1],
                    labels=torch.from_numpy(np.stack(labels).astype(np.int64)), windows=windows)


def crop_resize(t: torch.Tensor, windows, size: int) -> torch.Tensor:
    """Crop window i from sample i of an N x C x H x W tensor and resize to ``size``.

    The single code path for both the image and the T-Net output, so the two
    always cover the same pixels.
    """
    out = []
    for k, (top, left, side) in enumerate(windows):
        patch = t[k:k + 1, :, top:top + side, left:left + side]
        if side != size:
            patch = F.interpolate(patch, size=(size, size), mode="bilinear", align_corners=False)
        out.append(patch)
    return torch.cat(out, 0)
