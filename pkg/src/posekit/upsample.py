"""Cubic-convolution upsampling of per-bin probabilities to 1-degree resolution.

The per-bin probability vector of one angle is interpolated with the Keys
cubic kernel (a = -0.5) onto an integer-degree grid; the fine-angle
prediction is the argmax of that curve. Azimuth and tilt are convolved as
circular arrays; elevation replicates its edge samples beyond the boundary
bins. Curves are not renormalized: the kernel is interpolating, so the
value at every bin center equals that bin's probability exactly, and only
the argmax is consumed downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .binning import BinningScheme

PROB_SUM_TOL = 1e-6


@dataclass(frozen=True)
class ProbVector:
    """Per-bin probabilities for one angle under one binning scheme."""

    scheme: BinningScheme
    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (self.scheme.count,):
            raise ValueError(f"expected {self.scheme.count} probabilities, got shape {p.shape}")
        if np.any(p < 0.0):
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()}, expected 1")
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True)
class FineCurve:
    """Interpolated values on the integer-degree grid of one angle kind."""

    kind: str
    grid: np.ndarray
    values: np.ndarray


def keys_kernel(x, a: float = -0.5):
    """Keys cubic convolution kernel W(x).

    (a+2)|x|^3 - (a+3)|x|^2 + 1 for |x| <= 1,
    a|x|^3 - 5a|x|^2 + 8a|x| - 4a for 1 < |x| < 2, 0 otherwise.
    """
    ax = np.abs(np.asarray(x, dtype=float))
    near = ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0
    far = ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a
    out = np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))
    return float(out) if np.isscalar(x) else out


def fine_grid(kind: str) -> np.ndarray:
    """Integer-degree grid covering an angle kind's full range."""
    if kind == "azimuth":
        return np.arange(360.0)
    if kind == "elevation":
        return np.arange(-90.0, 91.0)
    if kind == "tilt":
        return np.arange(-180.0, 180.0)
    raise ValueError(f"unknown angle kind {kind!r}")


@lru_cache(maxsize=None)
def _kernel_matrix(scheme: BinningScheme) -> np.ndarray:
    """Dense (grid x bins) interpolation matrix so upsample is one matvec."""
    grid = fine_grid(scheme.kind)
    centers = np.asarray(scheme.centers)
    b = float(scheme.bin_size)
    if scheme.circular:
        delta = (grid[:, None] - centers[None, :] + 180.0) % 360.0 - 180.0
        return keys_kernel(delta / b)
    # Bounded: replicate the outer samples twice beyond each boundary so the
    # 4-tap kernel always sees a full neighborhood.
    ext_centers = np.concatenate(
        [centers[0] - b * np.array([2.0, 1.0]), centers, centers[-1] + b * np.array([1.0, 2.0])]
    )
    src = np.concatenate([[0, 0], np.arange(scheme.count), [scheme.count - 1] * 2])
    w_ext = keys_kernel((grid[:, None] - ext_centers[None, :]) / b)
    mat = np.zeros((grid.size, scheme.count))
    for j, i in enumerate(src):
        mat[:, i] += w_ext[:, j]
    return mat


def upsample(pv: ProbVector) -> FineCurve:
    """Interpolate bin probabilities to the 1-degree grid."""
    grid = fine_grid(pv.scheme.kind)
    values = _kernel_matrix(pv.scheme) @ pv.probs
    return FineCurve(pv.scheme.kind, grid, values)


def predict_angle(pv: ProbVector) -> float:
    """Fine-angle prediction: argmax of the upsampled curve, ties to the smaller angle."""
    curve = upsample(pv)
    return float(curve.grid[int(np.argmax(curve.values))])


def coarse_angle(pv: ProbVector) -> float:
    """Bin-center argmax without upsampling (ties to the lower index)."""
    return float(pv.scheme.centers[int(np.argmax(pv.probs))])
