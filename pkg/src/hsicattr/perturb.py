"""Patch masks at pixel resolution and the inpainting operator.

``inpaint(x, m, mu) = x * m + (1 - m) * mu``: a kept pixel (``m = 1``) keeps
its value, a masked pixel drifts to the baseline ``mu``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

NEAREST = "nearest"
BILINEAR = "bilinear"

Baseline = Union[float, tuple]


@dataclass(frozen=True)
class PerturbConfig:
    grid: tuple = (7, 7)  # (gridW, gridH)
    baseline: Baseline = 0.0
    upsampling: str = NEAREST

    def __post_init__(self):
        gw, gh = self.grid
        if int(gw) < 1 or int(gh) < 1:
            raise ValueError(f"grid dims must be positive, got {self.grid}")
        if self.upsampling not in (NEAREST, BILINEAR):
            raise ValueError(f"unknown upsampling {self.upsampling!r}")

    @property
    def d(self) -> int:
        return int(self.grid[0]) * int(self.grid[1])


def as_image(x) -> np.ndarray:
    """Validate an ``H x W x C`` float image (a 2-D array gets one channel)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[2] not in (1, 3):
        raise ValueError(f"input must be H x W x C with C in {{1, 3}}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains NaN or Inf")
    return x


def cell_index_map(grid: tuple, out_w: int, out_h: int) -> np.ndarray:
    """``(out_h, out_w)`` array of cell indices (row-major over the grid) under floor mapping."""
    gw, gh = int(grid[0]), int(grid[1])
    cols = (np.arange(out_w) * gw) // out_w
    rows = (np.arange(out_h) * gh) // out_h
    return rows[:, None] * gw + cols[None, :]


def _interp_axis(n_out: int, n_cells: int):
    # pixel centres expressed in cell-centre coordinates, clamped to the grid
    u = (np.arange(n_out) + 0.5) * n_cells / n_out - 0.5
    u = np.clip(u, 0.0, n_cells - 1)
    lo = np.floor(u).astype(int)
    hi = np.minimum(lo + 1, n_cells - 1)
    return lo, hi, u - lo


def upsample_mask(mask, grid: tuple, out_w: int, out_h: int, mode: str = NEAREST) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64).reshape(-1)
    gw, gh = int(grid[0]), int(grid[1])
    if mask.size != gw * gh:
        raise ValueError(f"mask has {mask.size} cells, grid {gw}x{gh} needs {gw * gh}")
    if mode == NEAREST:
        return mask[cell_index_map(grid, out_w, out_h)]
    if mode != BILINEAR:
        raise ValueError(f"unknown upsampling {mode!r}")
    cells = mask.reshape(gh, gw)
    x0, x1, fx = _interp_axis(out_w, gw)
    y0, y1, fy = _interp_axis(out_h, gh)
    top = cells[y0][:, x0] * (1 - fx) + cells[y0][:, x1] * fx
    bottom = cells[y1][:, x0] * (1 - fx) + cells[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    return np.clip(out, 0.0, 1.0)


def _baseline(mu, channels: int) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    if mu.size not in (1, channels):
        raise ValueError(f"baseline has {mu.size} values for {channels} channels")
    return mu


def inpaint(x, pixel_mask, mu: Baseline = 0.0) -> np.ndarray:
    x = as_image(x)
    m = np.asarray(pixel_mask, dtype=np.float64)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[:, :, 0]
    if m.shape != x.shape[:2]:
        raise ValueError(f"pixel mask shape {m.shape} does not match image {x.shape[:2]}")
    m = m[:, :, None]
    return x * m + (1.0 - m) * _baseline(mu, x.shape[2])


def perturb_batch(x, masks, config: PerturbConfig) -> np.ndarray:
    """Apply each grid mask row to ``x``; returns ``(n, H, W, C)``."""
    x = as_image(x)
    masks = np.atleast_2d(np.asarray(masks))
    h, w = x.shape[:2]
    out = np.empty((masks.shape[0],) + x.shape)
    for a, row in enumerate(masks):
        pm = upsample_mask(row, config.grid, w, h, config.upsampling)
        out[a] = inpaint(x, pm, config.baseline)
    return out


def cell_means(x, grid: tuple) -> np.ndarray:
    """Mean intensity (over pixels and channels) of each grid cell."""
    x = as_image(x)
    h, w = x.shape[:2]
    labels = cell_index_map(grid, w, h).reshape(-1)
    d = int(grid[0]) * int(grid[1])
    sums = np.bincount(labels, weights=x.mean(axis=2).reshape(-1), minlength=d)
    counts = np.bincount(labels, minlength=d)
    if np.any(counts == 0):
        raise ValueError(f"image {w}x{h} is smaller than grid {grid}")
    return sums / counts


def cell_inputs(masks, cell_values, baseline: Baseline = 0.0) -> np.ndarray:
    """Grid-pooled perturbed input ``m * xbar + (1 - m) * mean(mu)`` for mask-level models."""
    masks = np.atleast_2d(np.asarray(masks, dtype=np.float64))
    mu = float(np.mean(np.asarray(baseline, dtype=np.float64)))
    return masks * np.asarray(cell_values, dtype=np.float64)[None, :] + (1.0 - masks) * mu
