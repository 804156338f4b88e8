"""Dataset ingestion, source mixing, cropping, and augmentation.

Dataset directory layout::

    manifest.json          classes (name, keypoint_count, flip_pairs) + sample list
    images/NNNNNN.png      full renders
    annot/NNNNNN.json      {class, bbox:[x,y,w,h], viewpoint:{az,el,ti}|null,
                            keypoints:[{x,y,visible}]|null}

All annotation coordinates are full-image pixels. A source can be loaded
with ``use`` set to "both", "viewpoint", or "keypoints" to emulate
datasets that carry only one kind of annotation.

Augmentation applies flip / in-plane rotation / scale / translation about
the bounding-box center in full-image space, remaps keypoints and the
viewpoint label (flip: azimuth -> 360 - azimuth, tilt -> -tilt, keypoints
swapped by the class flip-pair table; rotation by rho: tilt += rho), and
rejects the transform when the IoU of the transformed bounding-box polygon
against the original box is not above 0.8.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Viewpoint, normalize_tilt
from .heatmap import Keypoint2D
from .imageops import (
    affine_flip_h_about,
    affine_identity,
    affine_rotate_about,
    affine_scale_about,
    affine_translate,
    apply_affine,
    compose,
    warp_affine,
)
from .loss import AnnotationMask

DATASET_USES = ("both", "viewpoint", "keypoints")
IOU_ACCEPT_THRESHOLD = 0.8
_SAMPLER_STREAM = 1013904223


@dataclass(frozen=True)
class ClassInfo:
    name: str
    keypoint_count: int
    flip_pairs: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class TrainingSample:
    """One annotated object instance on its full image."""

    image: np.ndarray
    class_id: int
    bbox: tuple[float, float, float, float]
    viewpoint: Viewpoint | None
    keypoints: tuple[Keypoint2D, ...] | None
    source: str = ""

    @property
    def mask(self) -> AnnotationMask:
        return AnnotationMask(self.viewpoint is not None, self.keypoints is not None)


@dataclass
class Dataset:
    root: str
    classes: list[ClassInfo]
    samples: list[TrainingSample]
    use: str = "both"

    def __len__(self) -> int:
        return len(self.samples)


def load_dataset(root, use: str = "both") -> Dataset:
    """Load a dataset directory, optionally keeping one annotation kind."""
    if use not in DATASET_USES:
        raise ValueError(f"use must be one of {DATASET_USES}, got {use!r}")
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    classes = [
        ClassInfo(
            name=c["name"],
            keypoint_count=int(c["keypoint_count"]),
            flip_pairs=tuple((int(a), int(b)) for a, b in c.get("flip_pairs", [])),
        )
        for c in manifest["classes"]
    ]
    name_to_id = {c.name: i for i, c in enumerate(classes)}
    if not manifest["samples"]:
        raise ValueError(f"dataset {root} lists no samples")

    samples = []
    for entry in manifest["samples"]:
        annot = json.loads((root / entry["annot"]).read_text())
        image = np.asarray(Image.open(root / entry["image"]).convert("RGB"))
        class_id = name_to_id[annot["class"]]
        viewpoint = None
        if use != "keypoints" and annot["viewpoint"] is not None:
            v = annot["viewpoint"]
            viewpoint = Viewpoint(v["az"], v["el"], v["ti"])
        keypoints = None
        if use != "viewpoint" and annot["keypoints"] is not None:
            keypoints = tuple(
                Keypoint2D(float(k["x"]), float(k["y"]), bool(k["visible"]))
                for k in annot["keypoints"]
            )
            if len(keypoints) != classes[class_id].keypoint_count:
                raise ValueError(
                    f"{entry['annot']}: {len(keypoints)} keypoints, class "
                    f"{annot['class']} declares {classes[class_id].keypoint_count}"
                )
        sample = TrainingSample(
            image=image,
            class_id=class_id,
            bbox=tuple(float(v) for v in annot["bbox"]),
            viewpoint=viewpoint,
            keypoints=keypoints,
            source=str(root),
        )
        sample.mask  # rejects samples with neither annotation
        samples.append(sample)
    return Dataset(root=str(root), classes=classes, samples=samples, use=use)


# --- cropping ---------------------------------------------------------------


@dataclass(frozen=True)
class CropTransform:
    """Affine map between full-image and crop pixel coordinates."""

    scale: float
    offset: tuple[float, float]

    def to_crop(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts * self.scale + np.asarray(self.offset)

    def to_image(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (pts - np.asarray(self.offset)) / self.scale


def crop_sample(image: np.ndarray, bbox, target_size: int, fill: float = 127.0):
    """Aspect-preserving square crop of a bbox, padded symmetrically.

    Returns (crop, CropTransform); the transform maps full-image pixels to
    crop pixels.
    """
    bx, by, bw, bh = (float(v) for v in bbox)
    if bw <= 0.0 or bh <= 0.0:
        raise ValueError(f"degenerate bbox {bbox}")
    scale = target_size / max(bw, bh)
    off_x = (target_size - bw * scale) / 2.0 - bx * scale
    off_y = (target_size - bh * scale) / 2.0 - by * scale
    m = np.array([[scale, 0.0, off_x], [0.0, scale, off_y]])
    crop = warp_affine(image, m, (target_size, target_size), fill=fill)
    return crop, CropTransform(scale=scale, offset=(off_x, off_y))


# --- augmentation -----------------------------------------------------------


@dataclass(frozen=True)
class AugmentParams:
    flip: bool = False
    rotation: float = 0.0
    scale: float = 1.0
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if not -45.0 <= self.rotation <= 45.0:
            raise ValueError(f"rotation {self.rotation} outside [-45, 45]")
        if not 0.4 <= self.scale <= 1.0:
            raise ValueError(f"scale {self.scale} outside [0.4, 1.0]")


@dataclass(frozen=True)
class AugmentRanges:
    """Sampling ranges for random augmentation draws."""

    flip_prob: float = 0.5
    rotation: tuple[float, float] = (-45.0, 45.0)
    scale: tuple[float, float] = (0.4, 1.0)
    translation_frac: float = 0.1

    def draw(self, rng: np.random.Generator, bbox) -> AugmentParams:
        t = self.translation_frac * max(bbox[2], bbox[3])
        return AugmentParams(
            flip=bool(rng.random() < self.flip_prob),
            rotation=float(rng.uniform(*self.rotation)),
            scale=float(rng.uniform(*self.scale)),
            translation=(float(rng.uniform(-t, t)), float(rng.uniform(-t, t))),
        )


def polygon_area(points: np.ndarray) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))) / 2.0

def clip_polygon_halfplane(points, a, b, c):
    """Keep the side a*x + b*y <= c (Sutherland-Hodgman step)."""
    out = []
    n = len(points)
    for i in range(n):
        p, q = points[i], points[(i + 1) % n]
        p_in = a * p[0] + b * p[1] <= c
        q_in = a * q[0] + b * q[1] <= c
        if p_in:
            out.append(p)
        if p_in != q_in:
            denom = a * (q[0] - p[0]) + b * (q[1] - p[1])
            t = (c - a * p[0] - b * p[1]) / denom
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def rect_polygon_iou(polygon: np.ndarray, rect) -> float:
    """Exact IoU between a convex polygon and an axis-aligned rectangle."""
    x, y, w, h = (float(v) for v in rect)
    pts = [tuple(p) for p in np.asarray(polygon, dtype=float)]
    for a, b, c in ((-1, 0, -x), (1, 0, x + w), (0, -1, -y), (0, 1, y + h)):
        pts = clip_polygon_halfplane(pts, a, b, c)
        if not pts:
            break
    inter = polygon_area(np.asarray(pts)) if pts else 0.0
    union = polygon_area(np.asarray(polygon)) + w * h - inter
    return inter / union if union > 0.0 else 0.0


def augment_transform(params: AugmentParams, bbox) -> np.ndarray:
    """Full-image affine for the augmentation: flip, then rotation, then
    scale, then translation, all about the bbox center."""
    cx = bbox[0] + bbox[2] / 2.0
    cy = bbox[1] + bbox[3] / 2.0
    m = affine_flip_h_about(cx) if params.flip else affine_identity()
    m = compose(affine_rotate_about(params.rotation, cx, cy), m)
    m = compose(affine_scale_about(params.scale, cx, cy), m)
    return compose(affine_translate(*params.translation), m)


def bbox_corners(bbox) -> np.ndarray:
    x, y, w, h = (float(v) for v in bbox)
    return np.array([[x, y], [x + w, y], [x + w, y + h], [x, y + h]])


def augment(sample: TrainingSample, params: AugmentParams,
            flip_pairs=(), fill: float = 127.0) -> TrainingSample | None:
    """Apply an augmentation; returns None when the transformed bounding
    box overlaps the original with IoU <= 0.8 (a normal rejection)."""
    m = augment_transform(params, sample.bbox)
    poly = apply_affine(m, bbox_corners(sample.bbox))
    if rect_polygon_iou(poly, sample.bbox) <= IOU_ACCEPT_THRESHOLD:
        return None

    h, w = sample.image.shape[:2]
    image = warp_affine(sample.image, m, (w, h), fill=fill)
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)

    x0, y0 = poly.min(axis=0)
    x1, y1 = poly.max(axis=0)
    x0, y0 = max(x0, 0.0), max(y0, 0.0)
    x1, y1 = min(x1, float(w)), min(y1, float(h))
    bbox = (x0, y0, x1 - x0, y1 - y0)

    keypoints = None
    if sample.keypoints is not None:
        pts = apply_affine(m, np.array([[k.x, k.y] for k in sample.keypoints]))
        flags = [k.visible for k in sample.keypoints]
        kps = [
            Keypoint2D(
                float(px),
                float(py),
                bool(vis and -0.5 <= px <= w - 0.5 and -0.5 <= py <= h - 0.5),
            )
            for (px, py), vis in zip(pts, flags)
        ]
        if params.flip:
            for a, b in flip_pairs:
                kps[a], kps[b] = kps[b], kps[a]
        keypoints = tuple(kps)

    viewpoint = sample.viewpoint
    if viewpoint is not None:
        az, el, ti = viewpoint.angles()
        if params.flip:
            az = (360.0 - az) % 360.0
            ti = normalize_tilt(-ti)
        ti = normalize_tilt(ti + params.rotation)
        viewpoint = Viewpoint(az, el, ti)

    return replace(sample, image=image, bbox=bbox, viewpoint=viewpoint, keypoints=keypoints)


# --- source mixing ----------------------------------------------------------


def mix_sampler(sources, batch_size: int, seed: int, start_iteration: int = 0):
    """Infinite batch stream: each slot draws a source uniformly, then a
    sample uniformly within it. Batch i depends only on (seed, i), so the
    stream can resume mid-run deterministically."""
    if not sources:
        raise ValueError("no sources to sample from")
    for i, src in enumerate(sources):
        if len(src.samples) == 0:
            raise ValueError(f"source {i} ({src.root}) is empty")
    iteration = start_iteration
    while True:
        rng = np.random.default_rng([seed, _SAMPLER_STREAM, iteration])
        batch = []
        for _ in range(batch_size):
            si = int(rng.integers(len(sources)))
            sj = int(rng.integers(len(sources[si].samples)))
            batch.append((si, sources[si].samples[sj]))
        yield batch
        iteration += 1
