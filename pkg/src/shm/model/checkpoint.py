"""Checkpoint directories: ``weights.pt`` plus a ``meta.txt`` key=value sidecar."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

FORMAT_VERSION = "1"
WEIGHTS = "weights.pt"
META = "meta.txt"


class CheckpointError(ValueError):
    """Missing, incompatible or version-mismatched checkpoint."""


def fingerprint(cfg) -> str:
    """Stable short hash of an architecture config (dataclass or dict)."""
    d = cfg.to_dict() if hasattr(cfg, "to_dict") else dict(cfg)
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def write_meta(path: Path, meta: dict[str, str]) -> None:
    lines = [f"{k}={meta[k]}" for k in sorted(meta)]
    path.write_text("\n".join(lines) + "\n")


def read_meta(path: Path) -> dict[str, str]:
    meta = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"{path}: malformed line {line!r}")
        meta[key.strip()] = value.strip()
    return meta


@dataclass
class Checkpoint:
    meta: dict[str, str]
    state: dict = field(default_factory=dict)
    path: Path | None = None

    @property
    def stage(self) -> str:
        return self.meta.get("stage", "")

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))

    def config(self, net: str) -> dict | None:
        raw = self.meta.get(f"{net}_config")
        return json.loads(raw) if raw else None

    def weights(self, net: str, expected_cfg=None) -> dict:
        """State dict for ``net`` ('tnet' or 'mnet'), checked against ``expected_cfg``."""
        if net not in self.state:
            raise CheckpointError(f"{self.path}: no {net} weights (stage {self.stage!r})")
        if expected_cfg is not None:
            want = fingerprint(expected_cfg)
            have = self.meta.get(f"{net}_fingerprint", "")
            if want != have:
                raise CheckpointError(
                    f"{self.path}: {net} config fingerprint mismatch: checkpoint {have} "
                    f"{self.meta.get(f'{net}_config')} vs requested {want} "
                    f"{json.dumps(expected_cfg.to_dict(), sort_keys=True)}"
                )
        return self.state[net]


def save_checkpoint(path: str | Path, *, stage: str, step: int, nets: dict[str, torch.nn.Module],
                    extra_state: dict | None = None, extra_meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    state = {name: net.state_dict() for name, net in nets.items()}
    if extra_state:
        state.update(extra_state)
    meta = {"format_version": FORMAT_VERSION, "stage": stage, "step": str(step)}
    for name, net in nets.items():
        meta[f"{name}_config"] = json.dumps(net.cfg.to_dict(), sort_keys=True)
        meta[f"{name}_fingerprint"] = fingerprint(net.cfg)
    meta["config_fingerprint"] = hashlib.sha256(
        "|".join(meta[f"{n}_fingerprint"] for n in sorted(nets)).encode()).hexdigest()[:16]
    meta.update({k: str(v) for k, v in (extra_meta or {}).items()})
    torch.save(state, path / WEIGHTS)
    write_meta(path / META, meta)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not (path / META).is_file() or not (path / WEIGHTS).is_file():
        raise CheckpointError(f"{path}: not a checkpoint directory (need {META} and {WEIGHTS})")
    meta = read_meta(path / META)
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format {meta.get('format_version')!r}, expected {FORMAT_VERSION!r}"
        )
    state = torch.load(path / WEIGHTS, map_location="cpu", weights_only=False)
    return Checkpoint(meta=meta, state=state, path=path)
