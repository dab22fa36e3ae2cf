"""LIIF-style coordinate system: normalized centers, nearest-latent lookup.

Both the latent grid and the output grid are center-aligned in [-1, 1]:
cell i of N has its center at -1 + (2i + 1) / N. Queries carry (x, y)
positions with x along width, plus a cell size c = (1/S_x, 1/S_y).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuerySpec:
    """One query pixel: normalized position and relative pixel size."""

    x_q: tuple  # (x, y) in [-1, 1]
    cell: tuple  # (c_x, c_y) in (0, 1]


@dataclass(frozen=True)
class LocalQuery:
    """A query resolved against the latent grid."""

    latent_index: tuple  # (i, j) = (row, col)
    v_star: tuple  # center of that latent cell, (x, y)
    delta: tuple  # x_q - v_star, (dx, dy)


def axis_centers(n: int) -> np.ndarray:
    """Normalized center coordinates -1 + (2i+1)/n for i in 0..n-1."""
    return -1.0 + (2.0 * np.arange(n) + 1.0) / n


def hr_pixel_centers(out_h: int, out_w: int) -> np.ndarray:
    """(out_h*out_w, 2) array of (x, y) query centers in row-major order."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"grid must be positive, got {out_h}x{out_w}")
    ys = axis_centers(out_h)
    xs = axis_centers(out_w)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)


def _nearest_axis(coord: np.ndarray, n: int) -> np.ndarray:
    """Index of the nearest center along one axis; exact ties go to the
    smaller index."""
    idx = np.floor((coord + 1.0) * n / 2.0).astype(np.intp)
    np.clip(idx, 0, n - 1, out=idx)
    # a coordinate exactly on the boundary -1 + 2i/n is equidistant from
    # centers i-1 and i; floor lands on i, the tie rule wants i-1
    boundary = -1.0 + 2.0 * idx / n
    tie = (idx > 0) & (coord == boundary)
    idx[tie] -= 1
    return idx


def nearest_latent_grid(x_q: np.ndarray, grid_h: int, grid_w: int):
    """Vectorized nearest-center lookup.

    x_q: (N, 2) of (x, y). Returns (rows, cols, v_star, delta) with
    v_star/delta of shape (N, 2).
    """
    x_q = np.asarray(x_q, dtype=np.float64)
    cols = _nearest_axis(x_q[:, 0], grid_w)
    rows = _nearest_axis(x_q[:, 1], grid_h)
    v_star = np.stack(
        [-1.0 + (2.0 * cols + 1.0) / grid_w, -1.0 + (2.0 * rows + 1.0) / grid_h],
        axis=1,
    )
    return rows, cols, v_star, x_q - v_star


def nearest_latent(x_q, grid_h: int, grid_w: int) -> LocalQuery:
    rows, cols, v_star, delta = nearest_latent_grid(
        np.asarray(x_q, dtype=np.float64)[None, :], grid_h, grid_w
    )
    return LocalQuery(
        latent_index=(int(rows[0]), int(cols[0])),
        v_star=(float(v_star[0, 0]), float(v_star[0, 1])),
        delta=(float(delta[0, 0]), float(delta[0, 1])),
    )


def make_cell(s_x: float, s_y: float) -> tuple:
    """Cell size (1/S_x, 1/S_y); the pixel-size ratio of latent grid to output."""
    if s_x <= 0 or s_y <= 0:
        raise ValueError(f"scale factors must be positive, got ({s_x}, {s_y})")
    return (1.0 / s_x, 1.0 / s_y)
