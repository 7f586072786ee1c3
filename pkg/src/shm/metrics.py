"""Matte quality metrics and the test-set evaluation harness.

All metrics take [0, 1] mattes, cover the whole image and are averaged over
the pixel count K. Gradient and connectivity follow the usual
alpha-matting benchmark conventions; their parameters are arguments so that
reported numbers can name the parameter set they used.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from . import imaging
from .synthdata import DatasetManifest

log = logging.getLogger(__name__)

GRAD_SIGMA = 1.4
GRAD_TRUNCATE = 4.0
CONN_STEP = 0.1
CONN_CUTOFF = 0.15
PURE_TOL = 1.0 / 255.0
METRIC_NAMES = ("sad", "mse", "grad_err", "conn_err")


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = imaging.as_matte(pred, "pred")
    gt = imaging.as_matte(gt, "gt")
    if pred.shape != gt.shape:
        raise imaging.ShapeError(f"pred {pred.shape} and gt {gt.shape} differ")
    return pred, gt


def sad(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.abs(pred - gt).mean())


def mse(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(((pred - gt) ** 2).mean())


def gaussian_kernels(sigma: float = GRAD_SIGMA, truncate: float = GRAD_TRUNCATE):
    """Normalised 1-D Gaussian and its first derivative, radius ceil(truncate * sigma)."""
    radius = int(math.ceil(truncate * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    dg = -x / sigma ** 2 * g
    return g, dg


def gradient_magnitude(alpha: np.ndarray, sigma: float = GRAD_SIGMA,
                       truncate: float = GRAD_TRUNCATE) -> np.ndarray:
    g, dg = gaussian_kernels(sigma, truncate)
    gx = ndimage.correlate1d(ndimage.correlate1d(alpha, dg, axis=1, mode="reflect"),
                             g, axis=0, mode="reflect")
    gy = ndimage.correlate1d(ndimage.correlate1d(alpha, dg, axis=0, mode="reflect"),
                             g, axis=1, mode="reflect")
    return np.hypot(gx, gy)


def gradient_error(pred, gt, sigma: float = GRAD_SIGMA, truncate: float = GRAD_TRUNCATE) -> float:
    pred, gt = _pair(pred, gt)
    d = gradient_magnitude(pred, sigma, truncate) - gradient_magnitude(gt, sigma, truncate)
    return float((d ** 2).mean())


_FOUR = ndimage.generate_binary_structure(2, 1)


def _largest_component(mask: np.ndarray) -> np.ndarray:
    lab, n = ndimage.label(mask, structure=_FOUR)
    if n == 0:
        return np.zeros_like(mask, dtype=bool)
    sizes = np.bincount(lab.ravel())[1:]
    return lab == (int(np.argmax(sizes)) + 1)


def source_region(gt: np.ndarray, tol: float = PURE_TOL) -> np.ndarray:
    """Largest 4-connected opaque component of the GT (falls back to gt >= 0.5)."""
    omega = _largest_component(gt >= 1.0 - tol)
    if not omega.any():
        omega = _largest_component(gt >= 0.5)
    return omega


def connectivity_levels(alpha: np.ndarray, omega: np.ndarray, step: float = CONN_STEP) -> np.ndarray:
    """Highest threshold at which each pixel is still 4-connected to ``omega``."""
    level = np.zeros(alpha.shape)
    n = int(round(1.0 / step))
    for theta in np.arange(n) / n:
        lab, _ = ndimage.label(alpha >= theta, structure=_FOUR)
        ids = np.unique(lab[omega & (lab > 0)])
        connected = np.isin(lab, ids[ids > 0])
        level[connected] = theta
    return level


def connectivity_phi(alpha, omega, step=CONN_STEP, cutoff=CONN_CUTOFF) -> np.ndarray:
    d = alpha - connectivity_levels(alpha, omega, step)
    return 1.0 - d * (d >= cutoff)


def connectivity_error(pred, gt, step: float = CONN_STEP, cutoff: float = CONN_CUTOFF) -> float:
    """Not symmetric: the source region always comes from ``gt``."""
    pred, gt = _pair(pred, gt)
    omega = source_region(gt)
    diff = connectivity_phi(pred, omega, step, cutoff) - connectivity_phi(gt, omega, step, cutoff)
    return float(np.abs(diff).mean())


def all_metrics(pred, gt) -> dict[str, float]:
    return {"sad": sad(pred, gt), "mse": mse(pred, gt),
            "grad_err": gradient_error(pred, gt), "conn_err": connectivity_error(pred, gt)}


# --- evaluation ------------------------------------------------------------

@dataclass
class MetricsReport:
    rows: list[dict] = field(default_factory=list)
    params: str = f"grad(sigma={GRAD_SIGMA},trunc={GRAD_TRUNCATE}) conn(step={CONN_STEP},cut={CONN_CUTOFF})"

    @property
    def ok_rows(self) -> list[dict]:
        return [r for r in self.rows if not r.get("error")]

    @property
    def failures(self) -> list[dict]:
        return [r for r in self.rows if r.get("error")]

    @property
    def pixel_count(self) -> int:
        return sum(r["pixels"] for r in self.ok_rows)

    def mean(self, name: str) -> float:
        vals = [r[name] for r in self.ok_rows]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def sad(self):
        return self.mean("sad")

    @property
    def mse(self):
        return self.mean("mse")

    @property
    def grad_err(self):
        return self.mean("grad_err")

    @property
    def conn_err(self):
        return self.mean("conn_err")

    def means(self) -> dict[str, float]:
        return {m: self.mean(m) for m in METRIC_NAMES}

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("sample_id",) + METRIC_NAMES + ("pixels", "error"))
            for r in self.rows:
                w.writerow([r["sample_id"]] + [repr(r.get(m, "")) if not r.get("error") else ""
                                               for m in METRIC_NAMES]
                           + [r.get("pixels", ""), r.get("error", "")])
            w.writerow(["mean"] + [repr(self.mean(m)) for m in METRIC_NAMES]
                       + [self.pixel_count, ""])
        return path

    def summary(self, title: str = "") -> str:
        return render_table([(title or "model", self.means())]) + f"\n[{self.params}]"


def evaluate(manifest: DatasetManifest, predictor: Callable[[np.ndarray], np.ndarray],
             split: str = "test") -> MetricsReport:
    """Run ``predictor`` on every record of ``split`` and score it against the GT alpha."""
    records = manifest.split(split)
    if not records:
        raise ValueError(f"manifest has no {split!r} records")
    report = MetricsReport()
    for rec in records:
        row = {"sample_id": rec.sample_id}
        try:
            image = imaging.load_png(manifest.resolve(rec.composite_path))
            gt = imaging.load_png(manifest.resolve(rec.alpha_path))
            pred = predictor(image)
            row.update(all_metrics(pred, gt))
            row["pixels"] = int(gt.size)
        except Exception as exc:  # per-row failure is recorded, not fatal
            log.warning("prediction failed for %s: %s", rec.sample_id, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
        report.rows.append(row)
    return report


# column order and display scale match the usual matting result tables
TABLE_COLUMNS = (("sad", "SAD (x1e-3)", 1e3), ("mse", "MSE (x1e-3)", 1e3),
                 ("grad_err", "Gradient (x1e-5)", 1e5), ("conn_err", "Connectivity (x1e-5)", 1e5))


def render_table(entries: list[tuple[str, dict[str, float]]]) -> str:
    name_w = max([len("Method")] + [len(n) for n, _ in entries])
    head = f"{'Method':<{name_w}}  " + "  ".join(f"{c[1]:>20}" for c in TABLE_COLUMNS)
    lines = [head, "-" * len(head)]
    for name, vals in entries:
        cells = "  ".join(f"{vals[k] * s:>20.3f}" for k, _, s in TABLE_COLUMNS)
        lines.append(f"{name:<{name_w}}  {cells}")
    return "\n".join(lines)


def read_report_means(path: str | Path) -> dict[str, float]:
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            if row["sample_id"] == "mean":
                return {m: float(row[m]) for m in METRIC_NAMES}
    raise ValueError(f"{path}: no mean row")
