"""Multi-granularity discretization of the three viewpoint angles.

Azimuth and tilt are circular (360/b bins); elevation is bounded with
180/b + 1 bins whose two outer bins span only b/2 degrees. Supported bin
sizes are 15, 30, and 60 degrees.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import normalize_azimuth, normalize_tilt

SUPPORTED_BIN_SIZES = (15, 30, 60)
ANGLE_KINDS = ("azimuth", "elevation", "tilt")


@dataclass(frozen=True)
class BinningScheme:
    """One angle's discretization at one granularity."""

    kind: str
    bin_size: int
    centers: tuple[float, ...]
    circular: bool

    @property
    def count(self) -> int:
        return len(self.centers)


@lru_cache(maxsize=None)
def make_scheme(kind: str, bin_size: int) -> BinningScheme:
    """Build the binning layout for one angle kind and bin size."""
    if kind not in ANGLE_KINDS:
        raise ValueError(f"unknown angle kind {kind!r}")
    if bin_size not in SUPPORTED_BIN_SIZES:
        raise ValueError(f"unsupported bin size {bin_size}; expected one of {SUPPORTED_BIN_SIZES}")
    b = int(bin_size)
    if kind == "azimuth":
        centers = tuple(float(i * b) for i in range(360 // b))
        return BinningScheme(kind, b, centers, circular=True)
    if kind == "tilt":
        # b divides 180 for all supported sizes, so 0 degrees is a center.
        centers = tuple(float(-180 + i * b) for i in range(360 // b))
        return BinningScheme(kind, b, centers, circular=True)
    centers = tuple(float(-90 + i * b) for i in range(180 // b + 1))
    return BinningScheme(kind, b, centers, circular=False)


def bin_of(scheme: BinningScheme, angle: float) -> int:
    """Index of the bin whose center is nearest to the angle.

    Circular kinds measure wrap-around distance; ties resolve to the lower
    index. Elevation boundaries at +-(90 - b/2) belong to the outer bins,
    which span only b/2 degrees.
    """
    centers = np.asarray(scheme.centers)
    if scheme.circular:
        a = normalize_azimuth(angle) if scheme.kind == "azimuth" else normalize_tilt(angle)
        diff = np.abs((a - centers + 180.0) % 360.0 - 180.0)
    else:
        if not (-90.0 <= angle <= 90.0):
            raise ValueError(f"elevation {angle} outside [-90, 90]")
        half = scheme.bin_size / 2.0
        if angle >= 90.0 - half:
            return scheme.count - 1
        if angle <= -90.0 + half:
            return 0
        diff = np.abs(angle - centers)
    return int(np.argmin(diff))


def center_of(scheme: BinningScheme, index: int) -> float:
    """Center angle of one bin, in degrees."""
    if not 0 <= index < scheme.count:
        raise IndexError(f"bin index {index} out of range for {scheme.count} bins")
    return scheme.centers[index]


def viewpoint_bins(azimuth: float, elevation: float, tilt: float, bin_size: int) -> tuple[int, int, int]:
    """Ground-truth bin triple (azimuth, elevation, tilt) at one granularity."""
    return (
        bin_of(make_scheme("azimuth", bin_size), azimuth),
        bin_of(make_scheme("elevation", bin_size), elevation),
        bin_of(make_scheme("tilt", bin_size), tilt),
    )


def bin_counts(bin_size: int) -> tuple[int, int, int]:
    """Bin counts (azimuth, elevation, tilt) for one granularity."""
    return (
        make_scheme("azimuth", bin_size).count,
        make_scheme("elevation", bin_size).count,
        make_scheme("tilt", bin_size).count,
    )
