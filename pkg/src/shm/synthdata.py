"""Procedural human-matting-style dataset.

Foregrounds are a Fourier-perturbed ellipse with a Gaussian-feathered edge
and thin hair-like filaments; backgrounds are procedural textures (or images
from a user directory). Each foreground is composited onto N unique
backgrounds and the result is recorded in a line-delimited JSON manifest.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import ndimage, special

from . import imaging

log = logging.getLogger(__name__)

GENERATOR_VERSION = "shm-synth-1"
MIN_SIZE = 32

_TAGS = {"fg": 1, "bg": 2}


def derive_seed(master: int, kind: str, index: int) -> int:
    """Independent per-item seed mixed from (master seed, item kind, index)."""
    ss = np.random.SeedSequence([int(master), _TAGS[kind], int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass
class ForegroundAsset:
    color: np.ndarray
    alpha: np.ndarray
    id: str
    source_tag: str = "procedural"

    def __post_init__(self):
        if self.color.shape[:2] != self.alpha.shape:
            raise imaging.ShapeError(
                f"foreground {self.id}: color {self.color.shape[:2]} vs alpha {self.alpha.shape}"
            )


@dataclass(frozen=True)
class ForegroundStyle:
    body_height: float = 0.5        # body extent as a fraction of image height
    body_aspect: tuple[float, float] = (0.45, 0.65)
    harmonics: int = 5
    harmonic_amp: float = 0.12
    feather_sigma: tuple[float, float] = (0.6, 1.6)   # pixels
    filaments: tuple[int, int] = (5, 50)
    filament_length: tuple[float, float] = (0.04, 0.1)  # fraction of min(H, W)
    filament_width: tuple[float, float] = (0.35, 0.8)    # half-width, pixels
    filament_opacity: tuple[float, float] = (0.45, 0.95)


def _octave_noise(rng: np.random.Generator, h: int, w: int, channels: int,
                  octaves: int = 4, base: int = 4) -> np.ndarray:
    out = np.zeros((h, w, channels))
    amp, total = 1.0, 0.0
    for o in range(octaves):
        gh = min(h, base * 2 ** o + 1)
        gw = min(w, base * 2 ** o + 1)
        grid = rng.random((gh, gw, channels))
        out += amp * imaging.resize(grid, h, w)
        total += amp
        amp *= 0.5
    return out / total


def _signed_distance(mask: np.ndarray) -> np.ndarray:
    inside = ndimage.distance_transform_edt(mask) - 0.5
    outside = ndimage.distance_transform_edt(~mask) - 0.5
    return np.where(mask, inside, -outside)


def _feather(d: np.ndarray, sigma: float) -> np.ndarray:
    # Gaussian CDF rescaled so that it reaches exactly 0 / 1 at +/-2.5 sigma
    lo = special.ndtr(-2.5)
    return np.clip((special.ndtr(d / sigma) - lo) / (1.0 - 2.0 * lo), 0.0, 1.0)


def _segment_distance(yy, xx, p0, p1) -> np.ndarray:
    d = p1 - p0
    L2 = float(d @ d)
    if L2 == 0.0:
        return np.hypot(yy - p0[0], xx - p0[1])
    t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / L2, 0.0, 1.0)
    return np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))


def gen_foreground(seed: int, height: int, width: int,
                   style: ForegroundStyle | None = None, fg_id: str | None = None) -> ForegroundAsset:
    """Deterministic procedural foreground: soft-edged body plus filament strokes."""
    style = style or ForegroundStyle()
    if height < MIN_SIZE or width < MIN_SIZE:
        raise ValueError(f"foreground must be at least {MIN_SIZE}x{MIN_SIZE}, got {height}x{width}")
    rng = np.random.default_rng(seed)
    h, w = height, width

    max_amp = style.harmonic_amp * sum(1.0 / k for k in range(2, style.harmonics + 2))
    semi_a = 0.5 * style.body_height * h * rng.uniform(0.9, 1.05)
    semi_b = semi_a * rng.uniform(*style.body_aspect)
    reach = style.filament_length[1] * min(h, w) + 2.5 * style.feather_sigma[1] + 3
    ext_a = semi_a * (1 + max_amp) + reach
    ext_b = semi_b * (1 + max_amp) + reach
    if semi_b * (1 - max_amp) < 4 or 2 * ext_a >= h or 2 * ext_b >= w:
        raise ValueError(f"{height}x{width} is too small to contain the body region")
    cy = rng.uniform(ext_a, h - ext_a)
    cx = rng.uniform(ext_b, w - ext_b)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u, v = (yy - cy) / semi_a, (xx - cx) / semi_b
    theta = np.arctan2(u, v)
    radius = np.ones_like(theta)
    for k in range(2, style.harmonics + 2):
        amp = style.harmonic_amp * rng.uniform(0.0, 1.0) / k
        radius += amp * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    body = np.hypot(u, v) < radius
    sdist = _signed_distance(body)
    sigma = rng.uniform(*style.feather_sigma)
    alpha = _feather(sdist, sigma)

    # filaments rooted on the silhouette, biased toward the top of the body
    n_fil = int(rng.integers(style.filaments[0], style.filaments[1] + 1))
    strands = np.zeros((h, w))
    edge = np.argwhere((np.abs(sdist) < 1.0) & body)
    top_bias = np.exp(-((edge[:, 0] - (cy - semi_a)) / (0.6 * semi_a)) ** 2) + 0.15
    roots = edge[rng.choice(len(edge), size=n_fil, p=top_bias / top_bias.sum())]
    gy, gx = np.gradient(-sdist)   # points outward
    for ry, rx in roots:
        length = rng.uniform(*style.filament_length) * min(h, w)
        half_w = rng.uniform(*style.filament_width)
        opacity = rng.uniform(*style.filament_opacity)
        heading = np.arctan2(gy[ry, rx], gx[ry, rx]) + rng.normal(0.0, 0.35)
        n_seg = 6
        pts = [np.array([ry - 2.0 * np.sin(heading), rx - 2.0 * np.cos(heading)])]
        for _ in range(n_seg):
            heading += rng.normal(0.0, 0.25)
            step = (length + 2.0) / n_seg
            nxt = pts[-1] + step * np.array([np.sin(heading), np.cos(heading)])
            pts.append(np.clip(nxt, 3.0, [h - 4.0, w - 4.0]))
        for j in range(n_seg):
            p0, p1 = pts[j], pts[j + 1]
            y0 = int(max(0, np.floor(min(p0[0], p1[0]) - 3)))
            y1 = int(min(h, np.ceil(max(p0[0], p1[0]) + 4)))
            x0 = int(max(0, np.floor(min(p0[1], p1[1]) - 3)))
            x1 = int(min(w, np.ceil(max(p0[1], p1[1]) + 4)))
            dist = _segment_distance(yy[y0:y1, x0:x1], xx[y0:y1, x0:x1], p0, p1)
            taper = 1.0 - 0.6 * (j + 0.5) / n_seg
            cover = opacity * taper * np.clip(half_w + 0.5 - dist, 0.0, 1.0)
            np.maximum(strands[y0:y1, x0:x1], cover, out=strands[y0:y1, x0:x1])
    alpha = 1.0 - (1.0 - alpha) * (1.0 - strands)
    alpha = imaging.quantize(alpha, 16)

    # textured fill: saturated base colour, stripes, low-frequency noise
    base = rng.uniform(0.15, 0.95, size=3)
    base[rng.integers(3)] *= 0.3
    ang = rng.uniform(0, np.pi)
    freq = rng.uniform(0.15, 0.5)
    stripes = 0.5 + 0.5 * np.sin(freq * (np.cos(ang) * yy + np.sin(ang) * xx))
    color = base + 0.12 * (stripes[..., None] - 0.5) + 0.2 * (_octave_noise(rng, h, w, 3) - 0.5)
    hair = rng.uniform(0.02, 0.5) * np.array([1.0, rng.uniform(0.6, 0.9), rng.uniform(0.3, 0.7)])
    mix = np.where(alpha > 0, strands / np.maximum(alpha, 1e-9), 0.0)[..., None]
    color = (1.0 - mix) * color + mix * hair
    color = imaging.quantize(np.clip(color, 0.0, 1.0), 8)
    return ForegroundAsset(color=color, alpha=alpha, id=fg_id or f"fg-{seed}")


BACKGROUND_MODES = ("mixed", "gradient", "noise", "clutter", "constant")


def gen_background(seed: int, height: int, width: int, mode: str = "mixed") -> np.ndarray:
    """Deterministic procedural background texture (8-bit quantized)."""
    if height < MIN_SIZE or width < MIN_SIZE:
        raise ValueError(f"background must be at least {MIN_SIZE}x{MIN_SIZE}, got {height}x{width}")
    if mode not in BACKGROUND_MODES:
        raise ValueError(f"unknown background mode {mode!r}; expected one of {BACKGROUND_MODES}")
    rng = np.random.default_rng(seed)
    h, w = height, width
    if mode == "constant":
        return imaging.quantize(np.broadcast_to(rng.random(3), (h, w, 3)).copy(), 8)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    def gradient():
        c0, c1 = rng.random(3), rng.random(3)
        ang = rng.uniform(0, 2 * np.pi)
        t = np.cos(ang) * yy / h + np.sin(ang) * xx / w
        t = (t - t.min()) / max(np.ptp(t), 1e-9)
        return c0 + t[..., None] * (c1 - c0)

    def noise():
        tint = rng.random(3)
        n = _octave_noise(rng, h, w, 3, octaves=5, base=int(rng.integers(2, 8)))
        return 0.5 * tint + (n - 0.5) * rng.uniform(0.6, 1.4) + 0.25

    def clutter(img):
        for _ in range(int(rng.integers(3, 15))):
            col = rng.random(3)
            ry, rx = rng.uniform(0.03, 0.25) * h, rng.uniform(0.03, 0.25) * w
            py, px = rng.uniform(0, h), rng.uniform(0, w)
            if rng.random() < 0.5:
                m = (np.abs(yy - py) < ry) & (np.abs(xx - px) < rx)
            else:
                m = ((yy - py) / ry) ** 2 + ((xx - px) / rx) ** 2 < 1
            img = np.where(m[..., None], 0.6 * col + 0.4 * img, img)
        return img

    if mode == "gradient":
        img = gradient()
    elif mode == "noise":
        img = noise()
    elif mode == "clutter":
        img = clutter(gradient())
    else:
        w_grad = rng.uniform(0.2, 0.8)
        img = w_grad * gradient() + (1 - w_grad) * noise()
        if rng.random() < 0.7:
            img = clutter(img)
    return imaging.quantize(np.clip(img, 0.0, 1.0), 8)


# --- dataset ------------------------------------------------------------

@dataclass
class DatasetConfig:
    train_foregrounds: int = 40
    test_foregrounds: int = 10
    train_backgrounds_per_fg: int = 4
    test_backgrounds_per_fg: int = 2
    height: int = 320
    width: int = 320
    seed: int = 0
    background_mode: str = "mixed"
    background_dir: str | None = None
    foreground_dir: str | None = None

    @classmethod
    def desk_scale(cls, **kw) -> "DatasetConfig":
        return cls(**kw)

    @classmethod
    def paper_dim(cls, **kw) -> "DatasetConfig":
        """Full-size counts: 182 foregrounds x 100 backgrounds train, 20 x 20 test."""
        base = dict(train_foregrounds=182, test_foregrounds=20,
                    train_backgrounds_per_fg=100, test_backgrounds_per_fg=20)
        base.update(kw)
        return cls(**base)

    def planned_counts(self) -> dict[str, int]:
        return {
            "train": self.train_foregrounds * self.train_backgrounds_per_fg,
            "test": self.test_foregrounds * self.test_backgrounds_per_fg,
        }


@dataclass
class SampleRecord:
    sample_id: str
    foreground_id: str
    background_id: str
    composite_path: str
    alpha_path: str
    fg_path: str
    bg_path: str
    split: str


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    seed: int
    generator_version: str = GENERATOR_VERSION
    counts: dict[str, int] = field(default_factory=dict)
    root: Path | None = None

    def split(self, name: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == name]

    def resolve(self, rel: str) -> Path:
        return (self.root or Path(".")) / rel

    def tally(self) -> dict[str, int]:
        return {s: sum(1 for r in self.records if r.split == s) for s in ("train", "test")}

    def validate(self, check_files: bool = True) -> None:
        if self.counts != self.tally():
            raise ValueError(f"manifest counts {self.counts} disagree with records {self.tally()}")
        train_fg = {r.foreground_id for r in self.split("train")}
        test_fg = {r.foreground_id for r in self.split("test")}
        if train_fg & test_fg:
            raise ValueError(f"foregrounds shared across splits: {sorted(train_fg & test_fg)[:5]}")
        pairs = [(r.foreground_id, r.background_id) for r in self.records]
        if len(set(pairs)) != len(pairs):
            raise ValueError("duplicate (foreground, background) pairs in manifest")
        bgs = [r.background_id for r in self.records]
        if len(set(bgs)) != len(bgs):
            raise ValueError("background reused across records")
        if check_files:
            for r in self.records:
                shapes = set()
                for rel in (r.composite_path, r.alpha_path, r.fg_path, r.bg_path):
                    p = self.resolve(rel)
                    if not p.is_file():
                        raise FileNotFoundError(f"{r.sample_id}: missing {p}")
                    shapes.add(imaging.load_png(p).shape[:2])
                if len(shapes) != 1:
                    raise imaging.ShapeError(f"{r.sample_id}: raster sizes disagree {shapes}")

    def header(self) -> dict:
        return {"type": "header", "seed": self.seed,
                "generator_version": self.generator_version, "counts": self.counts}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        if not rows or rows[0].get("type") != "header":
            raise ValueError(f"{path}: first line must be the manifest header")
        head = rows[0]
        records = [SampleRecord(**row) for row in rows[1:]]
        return cls(records=records, seed=head["seed"], generator_version=head["generator_version"],
                   counts=dict(head["counts"]), root=path.parent)


def manifest_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fit_background(img: np.ndarray, h: int, w: int) -> np.ndarray:
    # scale so it covers (h, w), then centre-crop
    ih, iw = img.shape[:2]
    s = max(h / ih, w / iw)
    nh, nw = max(h, int(np.ceil(ih * s))), max(w, int(np.ceil(iw * s)))
    img = imaging.resize(img, nh, nw)
    top, left = (nh - h) // 2, (nw - w) // 2
    return imaging.crop(img, top, left, h, w)


def _external_images(directory: str | Path) -> list[Path]:
    exts = {".png", ".jpg", ".jpeg", ".bmp"}
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in exts)


def _load_external_foreground(cfg: DatasetConfig, index: int) -> ForegroundAsset:
    root = Path(cfg.foreground_dir)
    colors = _external_images(root / "fg")
    path = colors[index]
    color = imaging.load_png(path)
    alpha = imaging.load_png(root / "alpha" / path.name)
    if alpha.ndim == 3:
        alpha = alpha.mean(axis=2)
    color = imaging.quantize(imaging.resize(color, cfg.height, cfg.width), 8)
    alpha = imaging.quantize(imaging.resize(alpha, cfg.height, cfg.width), 16)
    return ForegroundAsset(color=color, alpha=alpha, id=f"fg-{index:05d}", source_tag="external")


def _plan(cfg: DatasetConfig) -> Iterator[tuple[str, int, int]]:
    """Yield (split, foreground index, record index) for every record."""
    rec = 0
    for i in range(cfg.train_foregrounds):
        for _ in range(cfg.train_backgrounds_per_fg):
            yield "train", i, rec
            rec += 1
    for i in range(cfg.train_foregrounds, cfg.train_foregrounds + cfg.test_foregrounds):
        for _ in range(cfg.test_backgrounds_per_fg):
            yield "test", i, rec
            rec += 1


def build_dataset(cfg: DatasetConfig, out_dir: str | Path) -> DatasetManifest:
    """Generate, composite and persist every record; returns the saved manifest."""
    out = Path(out_dir)
    plan = list(_plan(cfg))
    needed = len(plan)
    n_fg = cfg.train_foregrounds + cfg.test_foregrounds
    if cfg.foreground_dir is not None:
        avail = len(_external_images(Path(cfg.foreground_dir) / "fg"))
        if avail < n_fg:
            raise ValueError(f"need {n_fg} foregrounds, only {avail} in {cfg.foreground_dir}")
    bg_files = None
    if cfg.background_dir is not None:
        bg_files = _external_images(cfg.background_dir)
        if len(bg_files) < needed:
            raise ValueError(
                f"insufficient unique backgrounds: {needed} required, {len(bg_files)} available"
            )
        order = np.random.default_rng(derive_seed(cfg.seed, "bg", 0)).permutation(len(bg_files))
        bg_files = [bg_files[k] for k in order[:needed]]

    for sub in ("fg", "alpha", "bg", "composite"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    records: list[SampleRecord] = []
    fg_cache: dict[int, ForegroundAsset] = {}
    for split, fi, ri in plan:
        if fi not in fg_cache:
            fg_cache.clear()
            if cfg.foreground_dir is not None:
                asset = _load_external_foreground(cfg, fi)
            else:
                asset = gen_foreground(derive_seed(cfg.seed, "fg", fi), cfg.height, cfg.width,
                                       fg_id=f"fg-{fi:05d}")
            fg_cache[fi] = asset
            imaging.save_png(out / "fg" / f"{asset.id}.png", asset.color, bits=8)
            imaging.save_png(out / "alpha" / f"{asset.id}.png", asset.alpha, bits=16)
        asset = fg_cache[fi]
        bg_id = f"bg-{ri:06d}"
        if bg_files is not None:
            bg = imaging.quantize(_fit_background(imaging.load_png(bg_files[ri]),
                                                  cfg.height, cfg.width), 8)
        else:
            bg = gen_background(derive_seed(cfg.seed, "bg", ri), cfg.height, cfg.width,
                                cfg.background_mode)
        comp = imaging.composite(asset.color, bg, asset.alpha)
        sid = f"s{ri:06d}"
        imaging.save_png(out / "bg" / f"{bg_id}.png", bg, bits=8)
        imaging.save_png(out / "composite" / f"{sid}.png", comp, bits=8)
        records.append(SampleRecord(
            sample_id=sid, foreground_id=asset.id, background_id=bg_id,
            composite_path=f"composite/{sid}.png", alpha_path=f"alpha/{asset.id}.png",
            fg_path=f"fg/{asset.id}.png", bg_path=f"bg/{bg_id}.png", split=split,
        ))
    manifest = DatasetManifest(records=records, seed=cfg.seed, root=out)
    manifest.counts = manifest.tally()
    manifest.validate(check_files=False)
    manifest.save(out / "manifest.jsonl")
    log.info("wrote %d records to %s", len(records), out)
    return manifest
