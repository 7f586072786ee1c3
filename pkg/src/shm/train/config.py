"""Stage configurations and presets."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from ..losses import LossWeights
from ..model import MNetConfig, TNetConfig

STAGES = ("pretrain_t", "pretrain_m", "e2e", "seg", "reg")


@dataclass
class StageConfig:
    stage: str
    crop_size: int = 80              # pretrain_t / seg / reg network input; pretrain_m input
    scale_range: tuple[float, float] = (1.0, 2.0)  # patch side / crop_size before resizing
    batch_size: int = 8
    learning_rate: float = 1e-3
    max_steps: int = 1000
    seed: int = 0
    flip_prob: float = 0.5
    rotation_deg: float = 10.0
    trimap_radius: int = 4                      # fixed radius for T-Net targets
    radius_range: tuple[int, int] = (1, 6)      # M-Net pre-training trimap augmentation
    outer_crop: int = 160
    inner_crops: tuple[int, ...] = (64, 96, 128)
    inner_size: int = 64
    unknown_centering: bool = True
    use_fusion: bool = True
    val_every: int = 200
    val_foregrounds: int = 0
    checkpoint_every: int = 500
    overfit_samples: int = 0
    tnet: TNetConfig = field(default_factory=lambda: TNetConfig(base_channels=8, depth=3))
    mnet: MNetConfig = field(default_factory=MNetConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        if isinstance(self.tnet, dict):
            self.tnet = TNetConfig(**self.tnet)
        if isinstance(self.mnet, dict):
            self.mnet = MNetConfig(**self.mnet)
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        self.scale_range = tuple(self.scale_range)
        self.radius_range = tuple(int(r) for r in self.radius_range)
        self.inner_crops = tuple(int(c) for c in self.inner_crops)
        if self.radius_range[0] < 1 or self.radius_range[0] > self.radius_range[1]:
            raise ValueError(f"bad radius_range {self.radius_range}")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("batch_size must be >= 1 and max_steps >= 0")
        if max(self.inner_crops) > self.outer_crop:
            raise ValueError("inner crops must fit inside the outer crop")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def replace(self, **kw) -> "StageConfig":
        return dataclasses.replace(self, **kw)


def paper_defaults(stage: str, **kw) -> StageConfig:
    """Settings as published: 400 / 320 / 800 with {320, 480, 640} -> 320, lr 1e-5, batch 10."""
    base = dict(
        stage=stage, batch_size=10, flip_prob=0.5, rotation_deg=10.0,
        crop_size=400 if stage in ("pretrain_t", "seg", "reg") else 320,
        outer_crop=800, inner_crops=(320, 480, 640), inner_size=320,
        learning_rate=1e-5 if stage == "e2e" else 1e-4,
        trimap_radius=10, radius_range=(2, 10),
        tnet=TNetConfig(backbone="pyramid_pool", base_channels=32, depth=4),
        mnet=MNetConfig(width_multiplier=1.0),
    )
    base.update(kw)
    return StageConfig(**base)


# Desk step budgets. The trimap network is the bottleneck at this scale, so it gets most of
# the pipeline's steps; the baselines get the pipeline total.
DESK_STEPS = {"pretrain_t": 1400, "pretrain_m": 300, "e2e": 300}
DESK_STEPS["seg"] = DESK_STEPS["reg"] = sum(DESK_STEPS.values())


def desk_scale(stage: str, **kw) -> StageConfig:
    """Crops shrunk by 5 (outer 160, inner {64, 96, 128} -> 64) for CPU budgets."""
    base = dict(
        stage=stage, batch_size=10, flip_prob=0.5, rotation_deg=10.0,
        crop_size=80 if stage in ("pretrain_t", "seg", "reg") else 64,
        outer_crop=160, inner_crops=(64, 96, 128), inner_size=64,
        learning_rate=1e-3, max_steps=DESK_STEPS.get(stage, 1000),
        val_foregrounds=0,
    )
    base.update(kw)
    return StageConfig(**base)
