"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports from the package under test.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np


def sad_loops(pred, gt):
    h, w = gt.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            total += abs(pred[y, x] - gt[y, x])
    return total / (h * w)


def mse_loops(pred, gt):
    h, w = gt.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            total += (pred[y, x] - gt[y, x]) ** 2
    return total / (h * w)


def _reflect(i, n):
    # half-sample symmetric: d c b a | a b c d | d c b a
    i = i % (2 * n)
    return 2 * n - 1 - i if i >= n else i


def gauss_deriv_2d(sigma=1.4, truncate=4.0):
    r = int(math.ceil(truncate * sigma))
    taps = [math.exp(-0.5 * (k / sigma) ** 2) for k in range(-r, r + 1)]
    norm = sum(taps)
    g = [t / norm for t in taps]
    dg = [-(k - r) / sigma ** 2 * g[k] for k in range(2 * r + 1)]
    # kx[i][j]: offset (i - r) along rows, (j - r) along columns
    kx = [[g[i] * dg[j] for j in range(2 * r + 1)] for i in range(2 * r + 1)]
    ky = [[dg[i] * g[j] for j in range(2 * r + 1)] for i in range(2 * r + 1)]
    return r, kx, ky


def grad_mag_naive(a, sigma=1.4, truncate=4.0):
    h, w = a.shape
    r, kx, ky = gauss_deriv_2d(sigma, truncate)
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            sx = sy = 0.0
            for i in range(2 * r + 1):
                yy = _reflect(y + i - r, h)
                for j in range(2 * r + 1):
                    v = a[yy, _reflect(x + j - r, w)]
                    sx += kx[i][j] * v
                    sy += ky[i][j] * v
            out[y, x] = math.sqrt(sx * sx + sy * sy)
    return out


def grad_err_naive(pred, gt):
    d = grad_mag_naive(pred) - grad_mag_naive(gt)
    return float((d ** 2).sum() / d.size)


def _components(mask):
    """4-connected components in raster discovery order."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not seen[y, x]:
                comp, q = [], deque([(y, x)])
                seen[y, x] = True
                while q:
                    cy, cx = q.popleft()
                    comp.append((cy, cx))
                    for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            q.append((ny, nx))
                comps.append(comp)
    return comps


def _largest(mask):
    best = []
    for c in _components(mask):
        if len(c) > len(best):
            best = c
    out = np.zeros(mask.shape, dtype=bool)
    for p in best:
        out[p] = True
    return out


def phi_naive(alpha, omega):
    h, w = alpha.shape
    level = np.zeros((h, w))
    for k in range(10):
        theta = k / 10
        mask = alpha >= theta
        # BFS outward from every source pixel present in this binarisation
        reached = np.zeros((h, w), dtype=bool)
        q = deque()
        for y in range(h):
            for x in range(w):
                if omega[y, x] and mask[y, x]:
                    reached[y, x] = True
                    q.append((y, x))
        while q:
            cy, cx = q.popleft()
            for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not reached[ny, nx]:
                    reached[ny, nx] = True
                    q.append((ny, nx))
        level[reached] = theta
    d = alpha - level
    return 1.0 - d * (d >= 0.15)


def omega_naive(gt):
    omega = _largest(gt >= 1.0 - 1.0 / 255.0)
    if not omega.any():
        omega = _largest(gt >= 0.5)
    return omega


def conn_naive(pred, gt):
    omega = omega_naive(gt)
    return phi_naive(pred, omega), phi_naive(gt, omega)


def bilinear_naive(img, nh, nw):
    """Half-pixel-centre bilinear resize with edge clamping, one output pixel at a time."""
    h, w = img.shape[:2]
    out = np.zeros((nh, nw) + img.shape[2:])
    for i in range(nh):
        sy = min(max((i + 0.5) * h / nh - 0.5, 0.0), h - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(nw):
            sx = min(max((j + 0.5) * w / nw - 0.5, 0.0), w - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[i, j] = ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
                         + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return out


def blobby(rng, h=16, w=16, sat=True):
    """Smooth random matte with saturated plateaus, quantised to 8 bits."""
    field = rng.normal(size=(h // 4 + 2, w // 4 + 2))
    ys = np.linspace(0, field.shape[0] - 1.001, h)
    xs = np.linspace(0, field.shape[1] - 1.001, w)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    f = ((1 - fy) * (1 - fx) * field[y0][:, x0] + (1 - fy) * fx * field[y0][:, x0 + 1]
         + fy * (1 - fx) * field[y0 + 1][:, x0] + fy * fx * field[y0 + 1][:, x0 + 1])
    a = np.clip(f * 1.5 + 0.5, 0, 1) if sat else 1 / (1 + np.exp(-2 * f))
    return np.round(a * 255) / 255
