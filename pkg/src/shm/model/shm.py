"""Full model, the segmentation baselines, and full-image inference."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .. import imaging
from ..trimap import softmax3
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint
from .fusion import fuse
from .networks import MNet, MNetConfig, TNet, TNetConfig, check_finite

INFERENCE_LIMIT = 1500


class SemanticMatting(nn.Module):
    """T-Net -> softmax -> M-Net -> fusion.

    ``use_fusion=False`` is the ablation that returns the raw M-Net matte.
    """

    def __init__(self, tnet_cfg: TNetConfig = TNetConfig(), mnet_cfg: MNetConfig = MNetConfig(),
                 use_fusion: bool = True, tnet: TNet | None = None, mnet: MNet | None = None):
        super().__init__()
        self.tnet = tnet if tnet is not None else TNet(tnet_cfg)
        self.mnet = mnet if mnet is not None else MNet(mnet_cfg)
        if self.tnet.cfg.out_channels != 3:
            raise ValueError("T-Net must emit exactly 3 trimap channels")
        if self.mnet.cfg.in_channels != 6:
            raise ValueError("the end-to-end model feeds 3 trimap channels to M-Net")
        self.use_fusion = use_fusion

    def forward(self, image: torch.Tensor) -> dict[str, torch.Tensor]:
        logits = self.tnet(image)
        probs = softmax3(logits, axis=1)
        alpha_raw = self.mnet(image, probs)
        alpha = fuse(probs, alpha_raw, check=False) if self.use_fusion else alpha_raw
        return {"logits": logits, "probs": probs, "alpha_raw": alpha_raw, "alpha": alpha}

    def matte(self, image: torch.Tensor) -> torch.Tensor:
        return self.forward(image)["alpha"]

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint | str, use_fusion: bool | None = None) -> "SemanticMatting":
        if not isinstance(ckpt, Checkpoint):
            ckpt = load_checkpoint(ckpt)
        tcfg, mcfg = ckpt.config("tnet"), ckpt.config("mnet")
        if tcfg is None or mcfg is None:
            raise CheckpointError(f"{ckpt.path}: needs both tnet and mnet weights, stage {ckpt.stage!r}")
        if use_fusion is None:
            use_fusion = ckpt.meta.get("use_fusion", "True") == "True"
        model = cls(TNetConfig(**tcfg), MNetConfig(**mcfg), use_fusion=use_fusion)
        model.tnet.load_state_dict(ckpt.weights("tnet", model.tnet.cfg))
        model.mnet.load_state_dict(ckpt.weights("mnet", model.mnet.cfg))
        return model


class SegBaseline(nn.Module):
    """Backbone trained as binary fg/bg segmentation; its hard mask is the matte."""

    def __init__(self, cfg: TNetConfig = TNetConfig()):
        super().__init__()
        cfg = TNetConfig(cfg.backbone, cfg.base_channels, cfg.depth, out_channels=2)
        self.net = TNet(cfg)
        self.cfg = cfg

    def forward(self, image):
        return self.net(image)

    def matte(self, image):
        # channel 0 = foreground
        return (self.net(image).argmax(1, keepdim=True) == 0).to(image.dtype)


class RegBaseline(nn.Module):
    """Backbone regressing alpha directly."""

    def __init__(self, cfg: TNetConfig = TNetConfig()):
        super().__init__()
        cfg = TNetConfig(cfg.backbone, cfg.base_channels, cfg.depth, out_channels=1)
        self.net = TNet(cfg)
        self.cfg = cfg

    def forward(self, image):
        return torch.sigmoid(self.net(image))

    def matte(self, image):
        return self.forward(image)


def inference_size(h: int, w: int, limit: int = INFERENCE_LIMIT) -> tuple[int, int]:
    """Network input size: longer edge capped at ``limit``, aspect preserved."""
    longest = max(h, w)
    if longest <= limit:
        return h, w
    s = limit / longest
    return max(1, int(round(h * s))), max(1, int(round(w * s)))


def to_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float()[None]


@torch.no_grad()
def infer_full(image: np.ndarray, model: nn.Module, limit: int = INFERENCE_LIMIT) -> np.ndarray:
    """Predict an (H, W) matte for an (H, W, 3) image.

    Images whose longer edge exceeds ``limit`` are downscaled for the forward
    pass and the matte is rescaled back to the original size.
    """
    image = imaging.as_image(image)
    h, w = image.shape[:2]
    nh, nw = inference_size(h, w, limit)
    x = imaging.resize(image, nh, nw) if (nh, nw) != (h, w) else image
    was_training = model.training
    model.eval()
    try:
        alpha = model.matte(to_tensor(x))
    finally:
        model.train(was_training)
    check_finite(alpha, "predicted matte")
    out = alpha[0, 0].double().clamp(0, 1).numpy()
    if (nh, nw) != (h, w):
        out = imaging.resize(out, h, w)
    return out
