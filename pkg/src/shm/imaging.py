"""Raster primitives shared by the whole pipeline.

Images are float64 arrays of shape (H, W, 3), mattes are (H, W), both with
values in [0, 1]. Binary masks are bool arrays of shape (H, W). Every
function here is pure: inputs are never modified in place.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage


class ShapeError(ValueError):
    """Raised when rasters that must agree in size do not."""


def _hw(arr: np.ndarray) -> tuple[int, int]:
    return int(arr.shape[0]), int(arr.shape[1])


def check_range(arr: np.ndarray, name: str = "raster") -> None:
    if arr.size == 0:
        raise ShapeError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got [{lo:g}, {hi:g}]")


def as_image(data, name: str = "image") -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"{name} must be H x W x 3, got shape {arr.shape}")
    check_range(arr, name)
    return arr


def as_matte(data, name: str = "alpha") -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be H x W, got shape {arr.shape}")
    check_range(arr, name)
    return arr


def composite(fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Blend ``fg`` over ``bg`` with per-pixel opacity ``alpha``."""
    fg = as_image(fg, "fg")
    bg = as_image(bg, "bg")
    alpha = as_matte(alpha, "alpha")
    if bg.shape != fg.shape:
        raise ShapeError(f"bg shape {bg.shape[:2]} does not match fg shape {fg.shape[:2]}")
    if alpha.shape != fg.shape[:2]:
        raise ShapeError(f"alpha shape {alpha.shape} does not match fg shape {fg.shape[:2]}")
    a = alpha[..., None]
    return np.clip(a * fg + (1.0 - a) * bg, 0.0, 1.0)


def _check_radius(radius: int) -> int:
    if int(radius) != radius or radius < 0:
        raise ValueError(f"radius must be a non-negative integer, got {radius!r}")
    return int(radius)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Square-element dilation; pixels outside the raster count as 0."""
    radius = _check_radius(radius)
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    size = 2 * radius + 1
    return ndimage.maximum_filter(mask, size=size, mode="constant", cval=False)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Square-element erosion, defined as the dual of :func:`dilate`.

    Consequently pixels outside the raster count as 1, so a full mask is a
    fixed point.
    """
    radius = _check_radius(radius)
    mask = np.asarray(mask, dtype=bool)
    return ~dilate(~mask, radius)


def _bilinear_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres, edge-clamped
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize(img: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resize of an (H, W) or (H, W, C) raster."""
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target size must be positive, got {new_h}x{new_w}")
    img = np.asarray(img, dtype=np.float64)
    h, w = _hw(img)
    if (h, w) == (new_h, new_w):
        return img.copy()
    y0, y1, fy = _bilinear_axis(h, new_h)
    x0, x1, fx = _bilinear_axis(w, new_w)
    if img.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = img[y0][:, x0] * (1.0 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1.0 - fx) + img[y1][:, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    return np.clip(out, 0.0, 1.0)


def crop(img: np.ndarray, top: int, left: int, h: int, w: int) -> np.ndarray:
    H, W = _hw(img)
    if h < 1 or w < 1 or top < 0 or left < 0 or top + h > H or left + w > W:
        raise ValueError(
            f"crop window (top={top}, left={left}, h={h}, w={w}) outside raster {H}x{W}"
        )
    return np.array(img[top:top + h, left:left + w], copy=True)


def hflip(img: np.ndarray) -> np.ndarray:
    return np.array(img[:, ::-1], copy=True)


def rotate_small(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the raster centre by at most 45 degrees.

    Bilinear resampling, edge-replicate padding.
    """
    if abs(degrees) > 45:
        raise ValueError(f"rotation limited to +/-45 degrees, got {degrees}")
    img = np.asarray(img, dtype=np.float64)
    if degrees == 0:
        return img.copy()
    h, w = _hw(img)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = np.deg2rad(degrees)
    c, s = np.cos(t), np.sin(t)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    # inverse map: output pixel -> source coordinate
    sy = cy + c * dy - s * dx
    sx = cx + s * dy + c * dx
    coords = np.stack([sy, sx])
    if img.ndim == 2:
        out = ndimage.map_coordinates(img, coords, order=1, mode="nearest")
    else:
        out = np.stack(
            [ndimage.map_coordinates(img[..., k], coords, order=1, mode="nearest")
             for k in range(img.shape[2])],
            axis=-1,
        )
    return np.clip(out, 0.0, 1.0)


# --- PNG I/O -------------------------------------------------------------

def quantize(arr: np.ndarray, bits: int = 8) -> np.ndarray:
    """Round [0,1] values to the nearest code of the given bit depth, as floats."""
    scale = float((1 << bits) - 1)
    return np.rint(np.clip(arr, 0.0, 1.0) * scale) / scale


def save_png(path: str | Path, arr: np.ndarray, bits: int = 8) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    scale = (1 << bits) - 1
    codes = np.rint(np.clip(arr, 0.0, 1.0) * scale)
    if bits == 16:
        if arr.ndim != 2:
            raise ShapeError("16-bit PNG output is single-channel only")
        pil = PILImage.fromarray(codes.astype(np.uint16))
    else:
        pil = PILImage.fromarray(codes.astype(np.uint8))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    """Load a PNG as floats in [0,1]; (H,W) for gray, (H,W,3) for colour."""
    with PILImage.open(path) as pil:
        mode = pil.mode
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(pil, dtype=np.float64)
            return arr / 65535.0
        if mode == "L":
            return np.asarray(pil, dtype=np.float64) / 255.0
        return np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0
