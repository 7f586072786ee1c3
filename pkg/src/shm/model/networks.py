"""T-Net and M-Net.

T-Net maps an image to 3-channel trimap logits at input resolution; any
segmentation backbone honouring that contract will do, two small ones are
provided. M-Net is the VGG16-style encoder-decoder with index unpooling that
turns image + trimap probabilities into a raw alpha matte.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class TNetConfig:
    backbone: str = "small_encdec"   # or "pyramid_pool"
    base_channels: int = 16
    depth: int = 3
    out_channels: int = 3

    def __post_init__(self):
        if self.backbone not in ("small_encdec", "pyramid_pool"):
            raise ValueError(f"unknown T-Net backbone {self.backbone!r}")
        if self.depth < 1 or self.base_channels < 1 or self.out_channels < 1:
            raise ValueError(f"invalid T-Net config {self}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MNetConfig:
    width_multiplier: float = 0.25
    use_batchnorm: bool = True
    in_channels: int = 6

    def __post_init__(self):
        if not 0 < self.width_multiplier <= 1:
            raise ValueError(f"width_multiplier must be in (0, 1], got {self.width_multiplier}")
        if self.in_channels not in (4, 6):
            raise ValueError("M-Net takes 6 (image + trimap probabilities) or 4 input channels")

    def to_dict(self) -> dict:
        return asdict(self)


def _init_conv(m: nn.Module) -> None:
    # fan-in scaled Gaussian
    if isinstance(m, nn.Conv2d):
        nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
        if m.bias is not None:
            nn.init.zeros_(m.bias)


def conv_bn_relu(cin: int, cout: int, k: int = 3, bn: bool = True) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(cin, cout, k, padding=k // 2, bias=not bn)]
    if bn:
        layers.append(nn.BatchNorm2d(cout))
    layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


def pad_to_multiple(x: torch.Tensor, multiple: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflect-pad bottom/right so H and W are multiples of ``multiple``."""
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode), (h, w)


def unpool(x: torch.Tensor, indices: torch.Tensor, size) -> torch.Tensor:
    """Place each value at its recorded max-pool position; zeros elsewhere.

    Same result as ``F.max_unpool2d``, written as a scatter so it also runs when
    deterministic algorithms are enforced (pool windows never overlap).
    """
    n, c = x.shape[:2]
    out = x.new_zeros(n, c, size[0] * size[1])
    return out.scatter(2, indices.flatten(2), x.flatten(2)).view(n, c, *size)


class PyramidPooling(nn.Module):
    def __init__(self, cin: int, bins=(1, 2, 3, 6)):
        super().__init__()
        branch = max(cin // len(bins), 1)
        self.stages = nn.ModuleList(
            nn.Sequential(nn.AdaptiveAvgPool2d(b), nn.Conv2d(cin, branch, 1, bias=False),
                          nn.BatchNorm2d(branch), nn.ReLU(inplace=True))
            for b in bins
        )
        self.out_channels = cin + branch * len(bins)

    def forward(self, x):
        size = x.shape[-2:]
        feats = [x] + [F.interpolate(s(x), size, mode="bilinear", align_corners=False)
                       for s in self.stages]
        return torch.cat(feats, 1)


class TNet(nn.Module):
    """Segmentation backbone emitting ``out_channels`` maps at input resolution.

    With the default ``out_channels=3`` the maps are (F, B, U) trimap logits;
    the segmentation and regression baselines reuse the backbone with 2 and 1 outputs.
    """

    def __init__(self, cfg: TNetConfig = TNetConfig()):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        chans = [c * 2 ** i for i in range(cfg.depth + 1)]
        self.enc = nn.ModuleList()
        cin = 3
        for i, ch in enumerate(chans):
            self.enc.append(nn.Sequential(conv_bn_relu(cin, ch), conv_bn_relu(ch, ch)))
            cin = ch
        if cfg.backbone == "pyramid_pool":
            self.ppm = PyramidPooling(chans[-1])
            self.bottleneck = conv_bn_relu(self.ppm.out_channels, chans[-1], 3)
            # PSP-style head: one low-level skip at 1/2 resolution
            skip = chans[1] if cfg.depth >= 1 else chans[0]
            self.head = nn.Sequential(conv_bn_relu(chans[-1] + skip, chans[1]),
                                      conv_bn_relu(chans[1], chans[0]))
        else:
            self.dec = nn.ModuleList()
            for i in range(cfg.depth, 0, -1):
                self.dec.append(nn.Sequential(conv_bn_relu(chans[i] + chans[i - 1], chans[i - 1]),
                                              conv_bn_relu(chans[i - 1], chans[i - 1])))
        self.classifier = nn.Conv2d(chans[0], cfg.out_channels, 1)
        self.apply(_init_conv)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x, (h, w) = pad_to_multiple(x, 2 ** self.cfg.depth)
        skips = []
        for i, block in enumerate(self.enc):
            if i > 0:
                x = F.max_pool2d(x, 2)
            x = block(x)
            skips.append(x)
        if self.cfg.backbone == "pyramid_pool":
            x = self.bottleneck(self.ppm(x))
            low = skips[1] if len(skips) > 1 else skips[0]
            x = F.interpolate(x, low.shape[-2:], mode="bilinear", align_corners=False)
            x = self.head(torch.cat([x, low], 1))
            x = F.interpolate(x, skips[0].shape[-2:], mode="bilinear", align_corners=False)
        else:
            for j, block in enumerate(self.dec):
                skip = skips[-2 - j]
                x = F.interpolate(x, skip.shape[-2:], mode="bilinear", align_corners=False)
                x = block(torch.cat([x, skip], 1))
        return self.classifier(x)[..., :h, :w]


# VGG16 convolutional topology: (convs per block, channels)
VGG16_BLOCKS = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))
DECODER_CHANNELS = (512, 256, 128, 64, 64)


class MNet(nn.Module):
    """Encoder-decoder matting network.

    Encoder: the 13 VGG16 convolutions, first layer widened to the 6-channel
    input, 4 max-pooling stages that keep their argmax indices (no pool after
    the last block). Decoder: 5 convolutions interleaved with 4 index
    unpooling stages, then a 1-channel prediction conv and a sigmoid.
    """

    def __init__(self, cfg: MNetConfig = MNetConfig()):
        super().__init__()
        self.cfg = cfg
        bn = cfg.use_batchnorm

        def width(ch: int) -> int:
            return max(1, int(round(ch * cfg.width_multiplier)))

        self.encoder = nn.ModuleList()
        cin = cfg.in_channels
        enc_out = []
        for n_conv, ch in VGG16_BLOCKS:
            layers = []
            for _ in range(n_conv):
                layers.append(conv_bn_relu(cin, width(ch), 3, bn))
                cin = width(ch)
            self.encoder.append(nn.Sequential(*layers))
            enc_out.append(cin)
        # decoder convs at 1/16, 1/8, 1/4, 1/2, 1 resolution
        self.decoder = nn.ModuleList()
        for ch in DECODER_CHANNELS:
            self.decoder.append(conv_bn_relu(cin, width(ch), 5, bn))
            cin = width(ch)
        self.predict = nn.Conv2d(cin, 1, 5, padding=2)
        self.apply(_init_conv)
        # unpooling targets must match the channel count at each pooled stage
        for i in range(4):
            expected = enc_out[3 - i]
            got = width(DECODER_CHANNELS[i])
            assert got == expected, (got, expected)

    def num_convs(self) -> int:
        return sum(isinstance(m, nn.Conv2d) for m in self.modules())

    def forward(self, image: torch.Tensor, trimap: torch.Tensor) -> torch.Tensor:
        if image.shape[-2:] != trimap.shape[-2:] or image.shape[0] != trimap.shape[0]:
            raise ValueError(
                f"image {tuple(image.shape)} and trimap {tuple(trimap.shape)} sizes differ"
            )
        x = torch.cat([image, trimap], 1)
        if x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"M-Net expects {self.cfg.in_channels} input channels, got {x.shape[1]}")
        x, (h, w) = pad_to_multiple(x, 16)
        indices, sizes = [], []
        for i, block in enumerate(self.encoder):
            x = block(x)
            if i < 4:
                sizes.append(x.shape[-2:])
                x, idx = F.max_pool2d(x, 2, return_indices=True)
                indices.append(idx)
        x = self.decoder[0](x)
        for i in range(4):
            x = unpool(x, indices[3 - i], sizes[3 - i])
            x = self.decoder[i + 1](x)
        return torch.sigmoid(self.predict(x))[..., :h, :w]


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def check_finite(t: torch.Tensor, what: str) -> None:
    finite = torch.isfinite(t)
    if not bool(finite.all()):
        raise FloatingPointError(f"{what}: {int((~finite).sum())} of {t.numel()} values non-finite")
