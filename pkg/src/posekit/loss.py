"""Viewpoint cross-entropy, multi-task combination, and annotation masking.

Training samples may carry viewpoint labels, keypoint labels, or both.
Keypoint L2 terms are summed over samples with keypoints and over all
stages; viewpoint cross-entropy terms are summed over samples with
viewpoints and over all granularities. Terms masked out by a sample's
annotations are exactly zero, not approximately. Losses are plain sums;
any batch-level averaging happens once at the optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heatmap import stage_keypoint_loss

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class AnnotationMask:
    """Which annotations a training sample carries.

    (True, True) is the fully annotated set, (True, False) viewpoint-only,
    (False, True) keypoint-only. A sample with neither is rejected.
    """

    has_viewpoint: bool
    has_keypoints: bool

    def __post_init__(self) -> None:
        if not (self.has_viewpoint or self.has_keypoints):
            raise ValueError("a training sample needs a viewpoint or keypoints (or both)")


def viewpoint_loss(class_probs, class_id: int, gt_bins: tuple[int, int, int]) -> float:
    """Cross-entropy over the three angles at one granularity.

    ``class_probs`` holds, per class, the (azimuth, elevation, tilt)
    probability arrays; only ``class_id``'s distributions are read.
    Probabilities are floored at 1e-12 before the log so degenerate
    softmax outputs stay finite.
    """
    probs = class_probs[class_id]
    total = 0.0
    for angle_probs, gt_bin in zip(probs, gt_bins):
        p = float(np.asarray(angle_probs)[gt_bin])
        total += -np.log(max(p, LOG_FLOOR))
    return float(total)


@dataclass(frozen=True)
class SampleLabels:
    """Per-sample ground truth as the loss consumes it."""

    class_id: int
    mask: AnnotationMask
    gt_heatmaps: np.ndarray | None = None
    gt_bins: dict | None = None

    def __post_init__(self) -> None:
        if self.mask.has_keypoints and self.gt_heatmaps is None:
            raise ValueError("mask declares keypoints but gt_heatmaps is missing")
        if self.mask.has_viewpoint and self.gt_bins is None:
            raise ValueError("mask declares a viewpoint but gt_bins is missing")


def class_channel_slice(keypoint_counts, class_id: int) -> slice:
    """Channel range of one class inside the stacked heatmap tensor."""
    start = int(sum(keypoint_counts[:class_id]))
    return slice(start, start + int(keypoint_counts[class_id]))


def total_loss(stage_heatmaps, vp_probs, labels, keypoint_counts) -> float:
    """Multi-task loss: stage keypoint sums plus per-granularity viewpoint sums.

    ``stage_heatmaps`` is a list over stages of (B, sum_K, h, w) predictions;
    ``vp_probs`` maps each granularity to three (B, C, bins) probability
    arrays ordered (azimuth, elevation, tilt); ``labels`` is the per-sample
    ground truth. Only the heatmap channels of a sample's own class enter
    its L2 terms.
    """
    if len(labels) == 0:
        raise ValueError("empty batch")
    total = 0.0
    for i, lab in enumerate(labels):
        if lab.mask.has_keypoints:
            ch = class_channel_slice(keypoint_counts, lab.class_id)
            for stage in stage_heatmaps:
                total += stage_keypoint_loss(stage[i, ch], lab.gt_heatmaps)
        if lab.mask.has_viewpoint:
            for b, angle_arrays in vp_probs.items():
                class_probs = [
                    [angle_arrays[a][i, c] for a in range(3)]
                    for c in range(len(keypoint_counts))
                ]
                total += viewpoint_loss(class_probs, lab.class_id, lab.gt_bins[b])
    return float(total)
