"""Seeded SGD training over mixed-annotation sources.

Determinism contract: iteration i draws its batch and augmentations from
RNG streams keyed on (seed, i) only, so a resumed run reproduces an
uninterrupted one bit-exactly given the checkpointed parameters, momentum
buffers, and iteration counter.

Weight decay and momentum are gradient-gated: a parameter whose gradient
is identically zero for a step (a branch untouched by the batch's
annotations) receives no update at all, keeping unsupervised branches
bit-identical to their initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from ..binning import viewpoint_bins
from ..data import AugmentRanges, augment, crop_sample
from ..heatmap import Keypoint2D, render_gt_heatmaps
from ..loss import AnnotationMask, SampleLabels, class_channel_slice
from .network import STRIDE, ModelBatch, ModelConfig, PoseNet

_AUGMENT_STREAM = 2654435769


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainSettings:
    iterations: int = 1500
    batch_size: int = 20
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 2000
    augment: bool = True
    augment_ranges: AugmentRanges = field(default_factory=AugmentRanges)
    crop_fill: float = 127.0


@dataclass
class PreparedSample:
    """A crop plus labels in crop coordinates, ready for collation."""

    image: np.ndarray  # (3, size, size), zero-centered
    class_id: int
    viewpoint: object = None
    keypoints: tuple | None = None


def crop_to_heatmap(points: np.ndarray) -> np.ndarray:
    """Crop pixel coordinates to heatmap pixel coordinates."""
    return (np.asarray(points, dtype=float) + 0.5) / STRIDE - 0.5


def heatmap_to_crop(points: np.ndarray) -> np.ndarray:
    return (np.asarray(points, dtype=float) + 0.5) * STRIDE - 0.5


def normalize_crop(crop: np.ndarray) -> np.ndarray:
    """(H, W, 3) pixel values to a zero-centered (3, H, W) tensor."""
    return (np.asarray(crop, dtype=float) / 255.0 - 0.5).transpose(2, 0, 1)


def prepare_sample(sample, input_size: int, rng: np.random.Generator | None = None,
                   augment_ranges: AugmentRanges | None = None,
                   flip_pairs=(), fill: float = 127.0) -> PreparedSample:
    """Optionally augment, then crop; rejected augmentations fall back to
    the unaugmented sample so the batch size is preserved."""
    if augment_ranges is not None and rng is not None:
        params = augment_ranges.draw(rng, sample.bbox)
        candidate = augment(sample, params, flip_pairs=flip_pairs, fill=fill)
        if candidate is not None:
            sample = candidate
    crop, transform = crop_sample(sample.image, sample.bbox, input_size, fill=fill)
    keypoints = None
    if sample.keypoints is not None:
        pts = transform.to_crop(np.array([[k.x, k.y] for k in sample.keypoints]))
        keypoints = tuple(
            Keypoint2D(
                float(px),
                float(py),
                bool(k.visible and -0.5 <= px <= input_size - 0.5 and -0.5 <= py <= input_size - 0.5),
            )
            for (px, py), k in zip(pts, sample.keypoints)
        )
    return PreparedSample(
        image=normalize_crop(crop),
        class_id=sample.class_id,
        viewpoint=sample.viewpoint,
        keypoints=keypoints,
    )


def make_model_batch(config: ModelConfig, prepared) -> ModelBatch:
    """Collate prepared samples into tensors plus per-sample labels."""
    if not prepared:
        raise ValueError("empty batch")
    b = len(prepared)
    hm = config.heatmap_size
    images = np.stack([p.image for p in prepared])
    class_ids = np.array([p.class_id for p in prepared], dtype=int)
    teacher = np.zeros((b, config.total_keypoints, hm, hm))
    labels = []
    for i, p in enumerate(prepared):
        gt_heatmaps = None
        gt_bins = None
        if p.keypoints is not None:
            hm_kps = []
            for kp in p.keypoints:
                hx, hy = crop_to_heatmap(np.array([kp.x, kp.y]))
                hm_kps.append(Keypoint2D(float(hx), float(hy), kp.visible))
            gt_heatmaps = render_gt_heatmaps(hm_kps, (hm, hm), config.heatmap_sigma)
            teacher[i, class_channel_slice(config.keypoint_counts, p.class_id)] = gt_heatmaps
        if p.viewpoint is not None:
            az, el, ti = p.viewpoint.angles()
            gt_bins = {g: viewpoint_bins(az, el, ti, g) for g in config.granularities}
        labels.append(
            SampleLabels(
                class_id=p.class_id,
                mask=AnnotationMask(p.viewpoint is not None, p.keypoints is not None),
                gt_heatmaps=gt_heatmaps,
                gt_bins=gt_bins,
            )
        )
    return ModelBatch(images=images, class_ids=class_ids, teacher_heatmaps=teacher, labels=labels)


def check_class_tables(sources):
    """All sources must agree on the class table; returns it."""
    tables = [tuple((c.name, c.keypoint_count) for c in src.classes) for src in sources]
    if any(t != tables[0] for t in tables[1:]):
        raise ValueError("sources disagree on class tables")
    return sources[0].classes


def sgd_step(net: PoseNet, grads: dict, lr: float, settings: TrainSettings,
             momentum_buffers: dict) -> None:
    inv_b = 1.0 / settings.batch_size
    for name, param in net.parameters().items():
        g = grads[name]
        if not g.any():
            continue  # branch received no gradient: no decay, no momentum
        step = g * inv_b + settings.weight_decay * param.value
        if settings.momentum > 0.0:
            buf = momentum_buffers.get(name)
            buf = step if buf is None else settings.momentum * buf + step
            momentum_buffers[name] = buf
            step = buf
        param.value = param.value - lr * step


def train(net: PoseNet, sources, settings: TrainSettings, seed: int,
          start_iteration: int = 0, momentum_buffers: dict | None = None,
          on_iteration=None):
    """Run the training loop; returns (loss trace, momentum buffers).

    The trace holds the batch-mean total loss per iteration, starting at
    ``start_iteration``.
    """
    from ..data import mix_sampler  # local import keeps module load light

    if not sources:
        raise ValueError("no training sources")
    classes = check_class_tables(sources)
    expected = tuple(c.keypoint_count for c in classes)
    if expected != net.config.keypoint_counts:
        raise ValueError(
            f"model keypoint_counts {net.config.keypoint_counts} do not match sources {expected}"
        )
    momentum_buffers = {} if momentum_buffers is None else momentum_buffers
    trace = []
    batches = mix_sampler(sources, settings.batch_size, seed, start_iteration=start_iteration)
    for iteration in range(start_iteration, settings.iterations):
        batch_samples = next(batches)
        rng = np.random.default_rng([seed, _AUGMENT_STREAM, iteration])
        prepared = []
        for _, sample in batch_samples:
            ranges = settings.augment_ranges if settings.augment else None
            flip_pairs = classes[sample.class_id].flip_pairs
            prepared.append(
                prepare_sample(
                    sample,
                    net.config.input_size,
                    rng=rng,
                    augment_ranges=ranges,
                    flip_pairs=flip_pairs,
                    fill=settings.crop_fill,
                )
            )
        batch = make_model_batch(net.config, prepared)
        loss, grads = net.loss_and_gradients(batch)
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became {loss} at iteration {iteration}")
        lr = settings.learning_rate * settings.lr_decay_factor ** (
            iteration // settings.lr_decay_every
        )
        sgd_step(net, grads, lr, settings, momentum_buffers)
        mean_loss = loss / settings.batch_size
        trace.append(mean_loss)
        if on_iteration is not None:
            on_iteration(iteration, mean_loss)
    return trace, momentum_buffers
