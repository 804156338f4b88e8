"""Affine transforms on pixel coordinates and bilinear image warping.

A transform is a 2x3 matrix M mapping points p -> M[:, :2] @ p + M[:, 2]
in (x right, y down) pixel coordinates. ``warp_affine`` takes the forward
(source -> output) transform and pulls pixels through its inverse with
bilinear sampling and a constant fill. The in-plane rotation direction is
the one under which rotating image content by rho corresponds to adding
rho to the tilt label.
"""

from __future__ import annotations

import math

import numpy as np


def affine_identity() -> np.ndarray:
    return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def affine_translate(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty]])


def affine_scale_about(k: float, cx: float, cy: float) -> np.ndarray:
    return np.array([[k, 0.0, cx - k * cx], [0.0, k, cy - k * cy]])


def affine_rotate_about(deg: float, cx: float, cy: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array(
        [[c, -s, cx - c * cx + s * cy], [s, c, cy - s * cx - c * cy]]
    )


def affine_flip_h_about(cx: float) -> np.ndarray:
    return np.array([[-1.0, 0.0, 2.0 * cx], [0.0, 1.0, 0.0]])


def compose(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """Transform applying ``inner`` first, then ``outer``."""
    m = np.empty((2, 3))
    m[:, :2] = outer[:, :2] @ inner[:, :2]
    m[:, 2] = outer[:, :2] @ inner[:, 2] + outer[:, 2]
    return m


def invert_affine(m: np.ndarray) -> np.ndarray:
    a = np.linalg.inv(m[:, :2])
    out = np.empty((2, 3))
    out[:, :2] = a
    out[:, 2] = -a @ m[:, 2]
    return out


def apply_affine(m: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Transform (N, 2) points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return pts @ m[:, :2].T + m[:, 2]


def warp_affine(image: np.ndarray, m: np.ndarray, out_size: tuple[int, int], fill: float = 0.0) -> np.ndarray:
    """Warp an (H, W) or (H, W, C) image by the forward transform ``m``.

    ``out_size`` is (width, height). Output pixels that pull from outside
    the source get the constant fill value.
    """
    img = np.asarray(image, dtype=float)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w = img.shape[:2]
    ow, oh = out_size
    inv = invert_affine(np.asarray(m, dtype=float))
    xs, ys = np.meshgrid(np.arange(ow, dtype=float), np.arange(oh, dtype=float))
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]

    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = sx - x0
    fy = sy - y0
    valid = (sx >= -0.5) & (sx <= w - 0.5) & (sy >= -0.5) & (sy <= h - 0.5)

    def gather(yy, xx):
        yc = np.clip(yy, 0, h - 1)
        xc = np.clip(xx, 0, w - 1)
        return img[yc, xc]

    wx = fx[..., None]
    wy = fy[..., None]
    out = (
        gather(y0, x0) * (1 - wx) * (1 - wy)
        + gather(y0, x0 + 1) * wx * (1 - wy)
        + gather(y0 + 1, x0) * (1 - wx) * wy
        + gather(y0 + 1, x0 + 1) * wx * wy
    )
    out = np.where(valid[..., None], out, fill)
    return out[:, :, 0] if squeeze else out
