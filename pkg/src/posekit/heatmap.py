"""Ground-truth heatmap rendering, decoding, and the per-stage L2 keypoint loss.

Heatmaps live on their own pixel grid; callers map between crop and
heatmap coordinates. Invisible keypoints get all-zero target maps and
still count in the 1/K average of the stage loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Keypoint2D:
    """A 2D keypoint in pixel coordinates with a visibility flag."""

    x: float
    y: float
    visible: bool = True


def render_gt_heatmap(kp: Keypoint2D, size: tuple[int, int], sigma: float) -> np.ndarray:
    """Gaussian bump exp(-||w - kp||^2 / (2 sigma^2)) over a (width, height) grid.

    Peak value 1 at the keypoint; an invisible keypoint yields an all-zero map.
    """
    w, h = size
    if w <= 0 or h <= 0:
        raise ValueError(f"heatmap size must be positive, got {size}")
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not kp.visible:
        return np.zeros((h, w))
    xs = np.arange(w, dtype=float)
    ys = np.arange(h, dtype=float)
    d2 = (xs[None, :] - kp.x) ** 2 + (ys[:, None] - kp.y) ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def render_gt_heatmaps(keypoints, size: tuple[int, int], sigma: float) -> np.ndarray:
    """Stack of ground-truth maps, one per keypoint, shape (K, height, width)."""
    return np.stack([render_gt_heatmap(kp, size, sigma) for kp in keypoints])


def decode(heatmap: np.ndarray) -> tuple[float, float, float]:
    """Pixel argmax of a heatmap as (x, y, confidence); ties go row-major-first."""
    hm = np.asarray(heatmap)
    flat = int(np.argmax(hm))
    y, x = np.unravel_index(flat, hm.shape)
    return (float(x), float(y), float(hm[y, x]))


def stage_keypoint_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """(1/K) sum_k sum_pixels (gt - pred)^2 over one class's K heatmaps."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 3:
        raise ValueError(f"heatmap stacks must share a (K, h, w) shape, got {pred.shape} vs {gt.shape}")
    k = pred.shape[0]
    return float(np.sum((gt - pred) ** 2) / k)
