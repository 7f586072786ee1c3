"""``shm`` command line: one entry point, one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 training failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from . import imaging
from .metrics import evaluate, read_report_means, render_table
from .model import CheckpointError, infer_full, load_checkpoint
from .synthdata import DatasetConfig, DatasetManifest, build_dataset, manifest_hash
from .train import StageConfig, desk_scale, paper_defaults, trainer

log = logging.getLogger("shm")

OUT_ROOT_ENV = "SHM_OUT_ROOT"
CONFIG_FILE = "config.json"

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_TRAINING = 0, 1, 2, 3

VARIANTS = {
    "shm": ("e2e", {}),
    "no-fusion": ("e2e", {"use_fusion": False}),
    "no-lt": ("e2e", {"loss": {"lambda_t": 0.0}}),
    "seg": ("seg", {}),
    "reg": ("reg", {}),
}
BASELINE_STAGE = {"shm": "e2e", "seg": "seg", "reg": "reg"}


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- configuration ----------------------------------------------------------

def parse_value(text: str):
    return yaml.safe_load(text)


def merge_strict(base: dict, update: dict, where: str = "") -> dict:
    """Recursively overlay ``update`` on ``base``; keys absent from ``base`` are errors."""
    for key, val in update.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            known = ", ".join(sorted(base))
            raise ValidationError(f"unknown config key {path!r} (known here: {known})")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ValidationError(f"config key {path!r} expects a mapping, got {val!r}")
            merge_strict(base[key], val, path)
        else:
            base[key] = val
    return base


def dotted(assignments: list[str]) -> dict:
    out: dict = {}
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        node = out
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = parse_value(raw)
    return out


def read_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {p}")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise ValidationError(f"{p}: top level must be a mapping")
    return data


def _layers(args) -> list[dict]:
    return [read_config_file(args.config), dotted(args.set or [])]


def dataset_config(args) -> DatasetConfig:
    base = DatasetConfig.paper_dim() if args.paper_defaults else DatasetConfig.desk_scale()
    merged = dataclasses.asdict(base)
    for layer in _layers(args):
        merge_strict(merged, layer)
    if args.seed is not None:
        merged["seed"] = args.seed
    return DatasetConfig(**merged)


def stage_config(args, stage: str, fixed: dict | None = None) -> StageConfig:
    preset = paper_defaults if args.paper_defaults else desk_scale
    merged = preset(stage).to_dict()
    for layer in [fixed or {}] + _layers(args):
        merge_strict(merged, layer)
    if args.seed is not None:
        merged["seed"] = args.seed
    try:
        return StageConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid {stage} config: {exc}") from exc


def prepare_out(args, default_name: str) -> Path:
    """Create the (append-only) output directory for this run."""
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUT_ROOT_ENV, "runs")) / default_name
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"output directory {out} is not empty; choose a new --out or pass --force")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_effective(out: Path, command: str, config: dict, **extra) -> None:
    doc = {"command": command, "config": config, **extra}
    (out / CONFIG_FILE).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str) -> DatasetManifest:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.jsonl"
    if not p.is_file():
        raise ValidationError(f"manifest not found: {p}")
    manifest = DatasetManifest.load(p)
    manifest.validate(check_files=False)
    return manifest


def _need_dir(path: str | None, flag: str) -> str:
    if not path:
        raise UsageError(f"{flag} is required")
    if not Path(path).is_dir():
        raise ValidationError(f"{flag}: checkpoint directory not found: {path}")
    return path


# --- subcommands --------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = dataset_config(args)
    out = prepare_out(args, "synth")
    write_effective(out, "synth", dataclasses.asdict(cfg))
    manifest = build_dataset(cfg, out)
    manifest.validate(check_files=True)
    counts = manifest.tally()
    print(f"wrote {counts.get('train', 0)} train / {counts.get('test', 0)} test samples to {out}")
    print(f"manifest sha256 {manifest_hash(out / 'manifest.jsonl')}")
    return EXIT_OK


def _train_stage(args, stage: str, fixed: dict | None = None, name: str | None = None) -> int:
    cfg = stage_config(args, stage, fixed)
    manifest = load_manifest(args.manifest)
    out = prepare_out(args, name or stage)
    write_effective(out, args.command, cfg.to_dict(), variant=name or stage,
                    manifest=str(Path(args.manifest).resolve()),
                    manifest_hash=manifest_hash(manifest.root / "manifest.jsonl"))
    if args.resume:
        state = trainer.resume_state(_need_dir(args.resume, "--resume"), cfg)
    elif stage == "e2e":
        state = trainer.init_e2e(cfg, _need_dir(args.init_t, "--init-t"),
                                 _need_dir(args.init_m, "--init-m"))
    else:
        state = trainer.new_state(cfg)
    trainer.run(state, manifest, out)
    print(f"{name or stage}: {state.step} steps, checkpoint {out / 'checkpoint'}")
    return EXIT_OK


def cmd_pretrain_tnet(args) -> int:
    return _train_stage(args, "pretrain_t")


def cmd_pretrain_mnet(args) -> int:
    return _train_stage(args, "pretrain_m")


def cmd_train(args) -> int:
    stage, fixed = VARIANTS[args.variant]
    return _train_stage(args, stage, fixed, name=args.variant)


def _predictor_for(args):
    if args.init_t or args.init_m:
        # the pre-trained parts without the end-to-end stage
        if args.checkpoint:
            raise UsageError("give either --checkpoint or --init-t/--init-m, not both")
        return trainer.assemble(_need_dir(args.init_t, "--init-t"), _need_dir(args.init_m, "--init-m"))
    path = _need_dir(args.checkpoint, "--checkpoint")
    stage = load_checkpoint(path).stage
    want = BASELINE_STAGE[args.baseline]
    if stage != want:
        raise ValidationError(f"{path} holds a {stage!r} checkpoint but --baseline {args.baseline} "
                              f"needs {want!r}")
    return trainer.load_predictor(path)


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    model = _predictor_for(args)
    out = prepare_out(args, "eval")
    write_effective(out, "eval", {"baseline": args.baseline, "checkpoint": args.checkpoint,
                                  "init_t": args.init_t, "init_m": args.init_m,
                                  "limit": args.limit},
                    manifest_hash=manifest_hash(manifest.root / "manifest.jsonl"))
    report = evaluate(manifest, lambda img: infer_full(img, model, args.limit))
    report.write_csv(out / "metrics.csv")
    summary = report.summary(args.baseline)
    (out / "summary.txt").write_text(summary + "\n")
    print(summary)
    if report.failures:
        for row in report.failures:
            print(f"FAILED {row['sample_id']}: {row['error']}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def checkerboard(h: int, w: int, cell: int = 16) -> np.ndarray:
    yy, xx = np.mgrid[:h, :w]
    board = np.where(((yy // cell) + (xx // cell)) % 2 == 0, 0.8, 0.55)
    return np.repeat(board[..., None], 3, axis=2)


def cmd_infer(args) -> int:
    img_path = Path(args.image)
    if not img_path.is_file():
        raise ValidationError(f"image not found: {img_path}")
    model = trainer.load_predictor(_need_dir(args.checkpoint, "--checkpoint"))
    image = imaging.load_png(img_path)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    alpha = infer_full(image[..., :3], model, args.limit)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    imaging.save_png(args.out, alpha, bits=16 if args.bits16 else 8)
    if args.composite:
        vis = imaging.composite(image[..., :3], checkerboard(*alpha.shape), alpha)
        imaging.save_png(args.composite, vis)
    print(f"matte {alpha.shape[1]}x{alpha.shape[0]} -> {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    entries = []
    for item in args.reports:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).parent.name or item, item
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"metrics CSV not found: {p}")
        entries.append((name, read_report_means(p)))
    table = render_table(entries)
    if args.out:
        Path(args.out).write_text(table + "\n")
    print(table)
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, *, presets=True, out=True):
    if presets:
        p.add_argument("--config", help="YAML or JSON file with config overrides")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dot-keyed override, e.g. --set mnet.width_multiplier=0.5")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--paper-defaults", action="store_true", help="published sizes and rates")
        g.add_argument("--desk-scale", action="store_true", help="small CPU preset (default)")
        p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true",
                   help="deterministic kernels, one thread")
    if out:
        p.add_argument("--out", help=f"output directory (default under ${OUT_ROOT_ENV} or ./runs)")
        p.add_argument("--force", action="store_true", help="allow writing into a non-empty --out")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shm", description="Automatic human matting: data, training, evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic compositing dataset")
    _common(p)
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (("pretrain-tnet", cmd_pretrain_tnet, "pre-train the trimap network"),
                                 ("pretrain-mnet", cmd_pretrain_mnet, "pre-train the matting network")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--manifest", required=True)
        p.add_argument("--resume", help="checkpoint directory to continue from")
        p.set_defaults(func=func)

    p = sub.add_parser("train", help="end-to-end training, its ablations, or a baseline")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", choices=sorted(VARIANTS), default="shm")
    p.add_argument("--init-t", help="pre-trained T-Net checkpoint (end-to-end variants)")
    p.add_argument("--init-m", help="pre-trained M-Net checkpoint (end-to-end variants)")
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model on the test split")
    _common(p, presets=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=sorted(BASELINE_STAGE), default="shm")
    p.add_argument("--init-t", help="evaluate pre-trained parts without end-to-end training")
    p.add_argument("--init-m")
    p.add_argument("--limit", type=int, default=1500, help="longest edge fed to the network")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict the matte of one image")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--image", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output matte PNG")
    p.add_argument("--composite", help="also write the image over a checkerboard")
    p.add_argument("--bits16", action="store_true", help="16-bit matte PNG")
    p.add_argument("--limit", type=int, default=1500)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("report", help="render metrics CSVs as a table")
    p.add_argument("reports", nargs="+", metavar="[NAME=]CSV")
    p.add_argument("--out", help="also write the table to this file")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:   # --help or a usage error
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    saved = (torch.are_deterministic_algorithms_enabled(), torch.get_num_threads())
    if getattr(args, "deterministic", False):
        trainer.set_deterministic(True)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"shm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except trainer.TrainingDiverged as exc:
        print(f"shm {args.command}: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ValidationError, CheckpointError, ValueError, FileNotFoundError) as exc:
        print(f"shm {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        torch.use_deterministic_algorithms(saved[0])
        torch.set_num_threads(saved[1])


if __name__ == "__main__":
    sys.exit(main())
