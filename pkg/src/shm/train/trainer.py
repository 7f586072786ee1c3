"""Stage loops: T-Net pre-training, M-Net pre-training, end-to-end, baselines."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from ..losses import prediction_loss, total_loss, trimap_loss
from ..metrics import sad
from ..model import (MNet, MNetConfig, RegBaseline, SegBaseline, SemanticMatting, TNet,
                     TNetConfig, infer_full, load_checkpoint, save_checkpoint, to_tensor)
from ..model.checkpoint import CheckpointError
from ..model.fusion import fuse
from ..synthdata import DatasetManifest, manifest_hash
from ..trimap import encode_onehot, make_trimap, softmax3
from . import data
from .config import StageConfig

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "stage", "alpha_term", "comp_term", "trimap_term", "total", "val_SAD")


class TrainingDiverged(RuntimeError):
    """Loss or activations became non-finite."""


def set_deterministic(flag: bool = True) -> None:
    torch.use_deterministic_algorithms(flag)
    if flag:
        torch.set_num_threads(1)


@dataclass
class TrainState:
    cfg: StageConfig
    nets: dict[str, nn.Module]
    optimizer: torch.optim.Optimizer
    step: int = 0
    best_val: float = math.inf

    @property
    def stage(self) -> str:
        return self.cfg.stage


def _build_nets(cfg: StageConfig) -> dict[str, nn.Module]:
    torch.manual_seed(cfg.seed)
    if cfg.stage == "pretrain_t":
        return {"tnet": TNet(cfg.tnet)}
    if cfg.stage == "pretrain_m":
        return {"mnet": MNet(cfg.mnet)}
    if cfg.stage == "e2e":
        model = SemanticMatting(cfg.tnet, cfg.mnet, use_fusion=cfg.use_fusion)
        return {"tnet": model.tnet, "mnet": model.mnet}
    if cfg.stage == "seg":
        return {"seg": SegBaseline(cfg.tnet)}
    return {"reg": RegBaseline(cfg.tnet)}


def new_state(cfg: StageConfig) -> TrainState:
    nets = _build_nets(cfg)
    params = [p for n in nets.values() for p in n.parameters()]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    return TrainState(cfg=cfg, nets=nets, optimizer=opt)


def save_state(path: str | Path, state: TrainState, manifest_digest: str = "") -> Path:
    extra = {"optimizer": state.optimizer.state_dict(), "torch_rng": torch.get_rng_state()}
    meta = {"stage_config": state.cfg.to_json(), "best_val": repr(state.best_val),
            "manifest_hash": manifest_digest, "use_fusion": state.cfg.use_fusion,
            "variant": state.cfg.stage}
    return save_checkpoint(path, stage=state.stage, step=state.step, nets=state.nets,
                           extra_state=extra, extra_meta=meta)


def resume_state(path: str | Path, cfg: StageConfig) -> TrainState:
    """Rebuild a TrainState from a checkpoint written by :func:`save_state`."""
    ckpt = load_checkpoint(path)
    if ckpt.stage != cfg.stage:
        raise CheckpointError(f"{path}: stage {ckpt.stage!r} cannot resume as {cfg.stage!r}")
    state = new_state(cfg)
    for name, net in state.nets.items():
        net.load_state_dict(ckpt.weights(name, net.cfg))
    if "optimizer" not in ckpt.state:
        raise CheckpointError(f"{path}: no optimizer state, cannot resume exactly")
    state.optimizer.load_state_dict(ckpt.state["optimizer"])
    if "torch_rng" in ckpt.state:
        torch.set_rng_state(ckpt.state["torch_rng"])
    state.step = ckpt.step
    state.best_val = float(ckpt.meta.get("best_val", "inf"))
    return state


def _fmt(v) -> str:
    return "" if v is None else repr(float(v.detach() if torch.is_tensor(v) else v))


class MetricsLog:
    """Append-only CSV with one row per optimisation step."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(LOG_COLUMNS)

    def write(self, step, stage, alpha=None, comp=None, trimap=None, total=None, val=None):
        with self.path.open("a", newline="") as fh:
            csv.writer(fh).writerow([step, stage, _fmt(alpha), _fmt(comp), _fmt(trimap),
                                     _fmt(total), _fmt(val)])


def read_log(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


# --- per-stage steps --------------------------------------------------------

def _step_pretrain_t(state, bank, step, overfit):
    tnet = state.nets["tnet"]
    img, _, labels = data.segmentation_batch(bank, state.cfg, step, overfit)
    logits = tnet(img)
    lt = trimap_loss(logits, labels)
    return lt, dict(trimap=lt, total=lt)


def _step_pretrain_m(state, bank, step, overfit):
    cfg = state.cfg
    mnet = state.nets["mnet"]
    b = data.matting_batch(bank, cfg, step, overfit)
    alpha_r = mnet(b["image"], b["trimap"])
    mask = b["unknown"] if float(b["unknown"].sum()) > 0 else None
    a, c = prediction_loss(alpha_r, b["alpha"], b["fg"], b["bg"], cfg.loss, region_mask=mask)
    br = total_loss(a, c, None, cfg.loss)
    return br.total, dict(alpha=a, comp=c, total=br.total)


def e2e_forward(tnet, mnet, batch: data.E2EBatch, cfg: StageConfig):
    """Outer crop through T-Net, aligned inner crop through M-Net, fusion, total loss."""
    logits = tnet(batch.image)
    probs = softmax3(logits, axis=1)
    lt = trimap_loss(logits, batch.labels)
    size = cfg.inner_size
    img_i = data.crop_resize(batch.image, batch.windows, size)
    probs_i = data.crop_resize(probs, batch.windows, size)
    with torch.no_grad():
        alpha_i = data.crop_resize(batch.alpha, batch.windows, size)
        fg_i = data.crop_resize(batch.fg, batch.windows, size)
        bg_i = data.crop_resize(batch.bg, batch.windows, size)
    alpha_r = mnet(img_i, probs_i)
    alpha_p = fuse(probs_i, alpha_r, check=False) if cfg.use_fusion else alpha_r
    a, c = prediction_loss(alpha_p, alpha_i, fg_i, bg_i, cfg.loss)
    return total_loss(a, c, lt, cfg.loss)


def _step_e2e(state, bank, step, overfit):
    b = data.e2e_batch(bank, state.cfg, step, overfit)
    br = e2e_forward(state.nets["tnet"], state.nets["mnet"], b, state.cfg)
    return br.total, dict(alpha=br.alpha_term, comp=br.comp_term, trimap=br.trimap_term,
                          total=br.total)


def _step_seg(state, bank, step, overfit):
    img, alpha, _ = data.segmentation_batch(bank, state.cfg, step, overfit)
    # alpha binarised at 0; class 0 = foreground
    target = (alpha[:, 0] <= 0).long()
    loss = torch.nn.functional.cross_entropy(state.nets["seg"](img), target)
    return loss, dict(trimap=loss, total=loss)


def _step_reg(state, bank, step, overfit):
    img, alpha, _ = data.segmentation_batch(bank, state.cfg, step, overfit)
    loss = (state.nets["reg"](img) - alpha).abs().mean()
    return loss, dict(alpha=loss, total=loss)


_STEPS = {"pretrain_t": _step_pretrain_t, "pretrain_m": _step_pretrain_m, "e2e": _step_e2e,
          "seg": _step_seg, "reg": _step_reg}


# --- validation ---------------------------------------------------------------

@torch.no_grad()
def validation_sad(state: TrainState, bank: data.SampleBank) -> float | None:
    cfg = state.cfg
    if cfg.stage == "pretrain_t" or len(bank) == 0:
        return None
    for n in state.nets.values():
        n.eval()
    try:
        errs = []
        for st in bank.stacks:
            img = st[..., data.IMG].astype(np.float64)
            gt = st[..., data.ALPHA].astype(np.float64)
            if cfg.stage == "pretrain_m":
                tri = to_tensor(encode_onehot(make_trimap(gt, cfg.trimap_radius)))
                alpha_r = state.nets["mnet"](to_tensor(img), tri)
                pred = fuse(tri, alpha_r)[0, 0].double().numpy()
            elif cfg.stage == "e2e":
                pred = infer_full(img, predictor(state))
            else:
                pred = infer_full(img, state.nets[cfg.stage])
            errs.append(sad(np.clip(pred, 0, 1), gt))
        return float(np.mean(errs))
    finally:
        for n in state.nets.values():
            n.train()


# --- driver -------------------------------------------------------------------

def predictor(state: TrainState) -> nn.Module:
    """The trained object exposing ``matte``, sharing parameters with ``state``."""
    if state.stage == "e2e":
        return SemanticMatting(use_fusion=state.cfg.use_fusion, tnet=state.nets["tnet"],
                               mnet=state.nets["mnet"])
    if state.stage in ("seg", "reg"):
        return state.nets[state.stage]
    raise ValueError(f"stage {state.stage!r} does not produce a matte on its own")


def _split_banks(manifest: DatasetManifest, cfg: StageConfig):
    train_fg = sorted({r.foreground_id for r in manifest.split("train")})
    held = set(train_fg[len(train_fg) - cfg.val_foregrounds:]) if cfg.val_foregrounds else set()
    bank = data.SampleBank.from_manifest(manifest, "train", radius=cfg.trimap_radius,
                                         exclude_fg=held)
    val = (data.SampleBank.from_manifest(manifest, "train", radius=cfg.trimap_radius, only_fg=held)
           if held else None)
    if cfg.overfit_samples:
        bank = bank.subset(cfg.overfit_samples)
    return bank, val


def run(state: TrainState, manifest: DatasetManifest, out_dir: str | Path,
        bank: data.SampleBank | None = None, val_bank: data.SampleBank | None = None) -> TrainState:
    """Advance ``state`` to ``cfg.max_steps``, logging and checkpointing under ``out_dir``."""
    cfg = state.cfg
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if bank is None:
        bank, val_bank = _split_banks(manifest, cfg)
    digest = manifest_hash(manifest.root / "manifest.jsonl") if manifest.root else ""
    metrics_log = MetricsLog(out / "metrics.csv")
    ckpt_dir = out / "checkpoint"
    overfit = cfg.overfit_samples > 0
    step_fn = _STEPS[cfg.stage]
    for n in state.nets.values():
        n.train()
    while state.step < cfg.max_steps:
        step = state.step
        state.optimizer.zero_grad(set_to_none=True)
        loss, terms = step_fn(state, bank, step, overfit)
        if not torch.isfinite(loss):
            raise TrainingDiverged(
                f"{cfg.stage} step {step}: non-finite loss; last good checkpoint kept at {ckpt_dir}"
            )
        loss.backward()
        state.optimizer.step()
        state.step += 1
        val = None
        if val_bank is not None and cfg.val_every and state.step % cfg.val_every == 0:
            val = validation_sad(state, val_bank)
            if val is not None and val < state.best_val:
                state.best_val = val
        metrics_log.write(step, cfg.stage, terms.get("alpha"), terms.get("comp"),
                          terms.get("trimap"), terms.get("total"), val)
        if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            save_state(ckpt_dir, state, digest)
    save_state(ckpt_dir, state, digest)
    log.info("%s finished at step %d -> %s", cfg.stage, state.step, ckpt_dir)
    return state


def pretrain_tnet(manifest: DatasetManifest, cfg: StageConfig, out_dir) -> Path:
    if cfg.stage != "pretrain_t":
        raise ValueError(f"expected a pretrain_t config, got {cfg.stage!r}")
    run(new_state(cfg), manifest, out_dir)
    return Path(out_dir) / "checkpoint"


def pretrain_mnet(manifest: DatasetManifest, cfg: StageConfig, out_dir) -> Path:
    if cfg.stage != "pretrain_m":
        raise ValueError(f"expected a pretrain_m config, got {cfg.stage!r}")
    run(new_state(cfg), manifest, out_dir)
    return Path(out_dir) / "checkpoint"


def init_e2e(cfg: StageConfig, init_t, init_m) -> TrainState:
    """Fresh e2e state whose sub-networks come from pre-trained checkpoints."""
    if cfg.stage != "e2e":
        raise ValueError(f"expected an e2e config, got {cfg.stage!r}")
    state = new_state(cfg)
    tck = load_checkpoint(init_t)
    mck = load_checkpoint(init_m)
    state.nets["tnet"].load_state_dict(tck.weights("tnet", cfg.tnet))
    state.nets["mnet"].load_state_dict(mck.weights("mnet", cfg.mnet))
    return state


def train_e2e(manifest: DatasetManifest, cfg: StageConfig, init_t, init_m, out_dir) -> Path:
    run(init_e2e(cfg, init_t, init_m), manifest, out_dir)
    return Path(out_dir) / "checkpoint"


def train_baseline(manifest: DatasetManifest, cfg: StageConfig, out_dir) -> Path:
    if cfg.stage not in ("seg", "reg"):
        raise ValueError(f"baseline stage must be 'seg' or 'reg', got {cfg.stage!r}")
    run(new_state(cfg), manifest, out_dir)
    return Path(out_dir) / "checkpoint"


def assemble(init_t, init_m, use_fusion: bool = True) -> SemanticMatting:
    """Full model straight from the two pre-trained checkpoints (no end-to-end stage)."""
    tck, mck = load_checkpoint(init_t), load_checkpoint(init_m)
    model = SemanticMatting(TNetConfig(**tck.config("tnet")), MNetConfig(**mck.config("mnet")),
                            use_fusion=use_fusion)
    model.tnet.load_state_dict(tck.weights("tnet", model.tnet.cfg))
    model.mnet.load_state_dict(mck.weights("mnet", model.mnet.cfg))
    return model


def load_predictor(path) -> nn.Module:
    """Model with a ``matte`` method from any end-to-end or baseline checkpoint."""
    ckpt = load_checkpoint(path)
    if ckpt.stage == "e2e":
        return SemanticMatting.from_checkpoint(ckpt)
    if ckpt.stage in ("seg", "reg"):
        cls = SegBaseline if ckpt.stage == "seg" else RegBaseline
        cfg = TNetConfig(**ckpt.config(ckpt.stage))
        net = cls(cfg)
        net.load_state_dict(ckpt.weights(ckpt.stage, net.cfg))
        return net
    raise CheckpointError(f"{path}: stage {ckpt.stage!r} is not a complete predictor")


def trimap_accuracy(tnet: TNet, bank: data.SampleBank, radius: int) -> float:
    """Pixel accuracy of argmax T-Net labels against GT trimaps on full images."""
    tnet.eval()
    correct = total = 0
    with torch.no_grad():
        for st in bank.stacks:
            gt = make_trimap(st[..., data.ALPHA].astype(np.float64), radius)
            pred = tnet(to_tensor(st[..., data.IMG].astype(np.float64))).argmax(1)[0].numpy()
            correct += int((pred == gt).sum())
            total += gt.size
    tnet.train()
    return correct / total
