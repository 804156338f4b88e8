"""Multi-stage heatmap network with a multi-granularity viewpoint head.

Topology: a small strided backbone produces shared features; stage 1 maps
them to one heatmap per keypoint per class; every later stage consumes the
shared features concatenated with previous-stage heatmaps; the viewpoint
head global-average-pools the final stage's pre-head features through two
fully connected layers into one softmax distribution per (class,
granularity, angle).

Training-time stage chaining is teacher-forced: the heatmaps concatenated
into stage s >= 2 are the ground-truth maps of the sample's class (zeros
for samples without keypoint annotations), held constant in the backward
pass. Inference chains the previous stage's predicted heatmaps, masked to
the requested class. This keeps every heatmap head's gradient sourced
solely from its own stage loss, so parameters of branches that receive no
annotation stay bit-identical, and the analytic gradients match finite
differences of the training loss exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..binning import bin_counts
from ..loss import LOG_FLOOR, SampleLabels, class_channel_slice, total_loss
from .layers import Conv2d, Linear, Param, ReLU, softmax

STRIDE = 8
SUPPORTED = (15, 30, 60)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and data-shape knobs for one network instance."""

    keypoint_counts: tuple[int, ...]
    input_size: int = 64
    backbone_channels: tuple[int, int, int, int] = (16, 32, 48, 48)
    stage_channels: int = 48
    num_stages: int = 3
    granularities: tuple[int, ...] = (15, 30, 60)
    vp_hidden: int = 64
    heatmap_sigma: float = 1.5
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "keypoint_counts", tuple(int(k) for k in self.keypoint_counts))
        object.__setattr__(self, "backbone_channels", tuple(int(c) for c in self.backbone_channels))
        object.__setattr__(self, "granularities", tuple(int(b) for b in self.granularities))
        if len(self.keypoint_counts) == 0 or any(k < 1 for k in self.keypoint_counts):
            raise ValueError("keypoint_counts must be non-empty positive integers")
        if self.num_stages < 2:
            raise ValueError("the stage-refinement mechanism needs at least 2 stages")
        if self.input_size % STRIDE != 0:
            raise ValueError(f"input size {self.input_size} not divisible by stride {STRIDE}")
        if len(self.backbone_channels) != 4:
            raise ValueError("backbone_channels must list 4 block widths")
        if any(b not in SUPPORTED for b in self.granularities):
            raise ValueError(f"granularities must come from {SUPPORTED}")

    @property
    def num_classes(self) -> int:
        return len(self.keypoint_counts)

    @property
    def total_keypoints(self) -> int:
        return int(sum(self.keypoint_counts))

    @property
    def heatmap_size(self) -> int:
        return self.input_size // STRIDE

    def to_dict(self) -> dict:
        return {
            "keypoint_counts": list(self.keypoint_counts),
            "input_size": self.input_size,
            "backbone_channels": list(self.backbone_channels),
            "stage_channels": self.stage_channels,
            "num_stages": self.num_stages,
            "granularities": list(self.granularities),
            "vp_hidden": self.vp_hidden,
            "heatmap_sigma": self.heatmap_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            keypoint_counts=tuple(d["keypoint_counts"]),
            input_size=int(d["input_size"]),
            backbone_channels=tuple(d["backbone_channels"]),
            stage_channels=int(d["stage_channels"]),
            num_stages=int(d["num_stages"]),
            granularities=tuple(d["granularities"]),
            vp_hidden=int(d["vp_hidden"]),
            heatmap_sigma=float(d["heatmap_sigma"]),
            seed=int(d["seed"]),
        )


def vp_group_layout(config: ModelConfig):
    """Flat logit layout: one (class, granularity, angle) softmax group per entry."""
    groups = []
    offset = 0
    for c in range(config.num_classes):
        for b in config.granularities:
            for angle_idx, n in enumerate(bin_counts(b)):
                groups.append((c, b, angle_idx, offset, offset + n))
                offset += n
    return groups, offset


@dataclass
class ModelOutput:
    """Per-stage heatmaps plus per-granularity viewpoint distributions.

    ``stage_heatmaps[s]`` has shape (B, sum_K, h, w); ``vp_probs[b]`` is a
    list over (azimuth, elevation, tilt) of (B, C, bins) arrays, each row
    summing to 1.
    """

    stage_heatmaps: list
    vp_probs: dict


@dataclass
class ModelBatch:
    """A collated training batch.

    ``teacher_heatmaps`` carries the ground-truth maps in each sample's own
    class channels (zeros elsewhere and for samples without keypoints); it
    feeds the stage chaining as a constant.
    """

    images: np.ndarray
    class_ids: np.ndarray
    teacher_heatmaps: np.ndarray
    labels: list = field(default_factory=list)


class PoseNet:
    """The trainable network. Parameters live in named float64 buffers."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        c1, c2, c3, c4 = config.backbone_channels
        sc = config.stage_channels
        sum_k = config.total_keypoints

        self.backbone = []
        for i, (cin, cout, stride) in enumerate(
            [(3, c1, 2), (c1, c2, 2), (c2, c3, 2), (c3, c4, 1)]
        ):
            self.backbone.append(
                (Conv2d(f"backbone.conv{i + 1}", cin, cout, rng, stride=stride), ReLU())
            )

        self.stages = []
        for s in range(config.num_stages):
            cin = c4 if s == 0 else c4 + sum_k
            self.stages.append(
                {
                    "conv1": Conv2d(f"stage{s + 1}.conv1", cin, sc, rng),
                    "relu1": ReLU(),
                    "conv2": Conv2d(f"stage{s + 1}.conv2", sc, sc, rng),
                    "relu2": ReLU(),
                    "head": Conv2d(f"stage{s + 1}.head", sc, sum_k, rng, ksize=1, pad=0),
                }
            )

        self.vp_groups, self.vp_dim = vp_group_layout(config)
        self.vp_fc1 = Linear("vp.fc1", sc, config.vp_hidden, rng)
        self.vp_relu = ReLU()
        self.vp_fc2 = Linear("vp.fc2", config.vp_hidden, self.vp_dim, rng)

        self._params: dict[str, Param] = {}
        for conv, _ in self.backbone:
            self._register(conv)
        for stage in self.stages:
            for key in ("conv1", "conv2", "head"):
                self._register(stage[key])
        self._register(self.vp_fc1)
        self._register(self.vp_fc2)
        self._fwd = None

    def _register(self, layer) -> None:
        for p in layer.params():
            self._params[p.name] = p

    def parameters(self) -> dict[str, Param]:
        return self._params

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad.fill(0.0)

    def _backbone_forward(self, x: np.ndarray) -> np.ndarray:
        f = x
        for conv, relu in self.backbone:
            f = relu.forward(conv.forward(f))
        return f

    def _mask_to_class(self, maps: np.ndarray, class_ids: np.ndarray) -> np.ndarray:
        out = np.zeros_like(maps)
        counts = self.config.keypoint_counts
        for i, c in enumerate(class_ids):
            ch = class_channel_slice(counts, int(c))
            out[i, ch] = maps[i, ch]
        return out

    def forward(self, images: np.ndarray, class_ids: np.ndarray,
                teacher_heatmaps: Optional[np.ndarray] = None) -> ModelOutput:
        """Run the network. Teacher heatmaps switch the stage chaining to
        ground-truth inputs (training); otherwise predicted heatmaps of the
        previous stage, masked to each sample's class, are chained."""
        images = np.asarray(images, dtype=float)
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2] != images.shape[3] \
                or images.shape[2] != self.config.input_size:
            raise ValueError(
                f"expected images (B, 3, {self.config.input_size}, {self.config.input_size}),"
                f" got {images.shape}"
            )
        feats = self._backbone_forward(images)
        stage_maps = []
        trunk = None
        for s, stage in enumerate(self.stages):
            if s == 0:
                x = feats
            else:
                chain = teacher_heatmaps if teacher_heatmaps is not None \
                    else self._mask_to_class(stage_maps[-1], class_ids)
                x = np.concatenate([feats, chain], axis=1)
            t = stage["relu1"].forward(stage["conv1"].forward(x))
            t = stage["relu2"].forward(stage["conv2"].forward(t))
            stage_maps.append(stage["head"].forward(t))
            trunk = t

        pooled = trunk.mean(axis=(2, 3))
        hidden = self.vp_relu.forward(self.vp_fc1.forward(pooled))
        logits = self.vp_fc2.forward(hidden)
        probs_flat = np.empty_like(logits)
        for _, _, _, lo, hi in self.vp_groups:
            probs_flat[:, lo:hi] = softmax(logits[:, lo:hi], axis=1)

        vp_probs = self._group_probs(probs_flat)
        self._fwd = {
            "feats_shape": feats.shape,
            "trunk_shape": trunk.shape,
            "probs_flat": probs_flat,
            "batch": images.shape[0],
        }
        return ModelOutput(stage_heatmaps=stage_maps, vp_probs=vp_probs)

    def _group_probs(self, probs_flat: np.ndarray) -> dict:
        cfg = self.config
        b_count = probs_flat.shape[0]
        out = {
            b: [np.empty((b_count, cfg.num_classes, n)) for n in bin_counts(b)]
            for b in cfg.granularities
        }
        for c, b, angle_idx, lo, hi in self.vp_groups:
            out[b][angle_idx][:, c, :] = probs_flat[:, lo:hi]
        return out

    def loss_and_gradients(self, batch: ModelBatch) -> tuple[float, dict[str, np.ndarray]]:
        """Total loss over the batch and exact gradients of it.

        Gradients of branches untouched by the batch's annotations are
        identically zero.
        """
        self.zero_grads()
        out = self.forward(batch.images, batch.class_ids, teacher_heatmaps=batch.teacher_heatmaps)
        counts = self.config.keypoint_counts
        loss = total_loss(out.stage_heatmaps, out.vp_probs, batch.labels, counts)

        d_maps = [np.zeros_like(m) for m in out.stage_heatmaps]
        for i, lab in enumerate(batch.labels):
            if lab.mask.has_keypoints:
                ch = class_channel_slice(counts, lab.class_id)
                kc = counts[lab.class_id]
                for s, maps in enumerate(out.stage_heatmaps):
                    d_maps[s][i, ch] = 2.0 * (maps[i, ch] - lab.gt_heatmaps) / kc

        probs_flat = self._fwd["probs_flat"]
        d_logits = np.zeros_like(probs_flat)
        for i, lab in enumerate(batch.labels):
            if not lab.mask.has_viewpoint:
                continue
            for c, b, angle_idx, lo, hi in self.vp_groups:
                if c != lab.class_id:
                    continue
                gt_bin = lab.gt_bins[b][angle_idx]
                p = probs_flat[i, lo:hi]
                if p[gt_bin] > LOG_FLOOR:
                    # d(-log softmax)/dlogits; the log floor makes the loss
                    # locally constant below it.
                    d_logits[i, lo:hi] += p
                    d_logits[i, lo + gt_bin] -= 1.0

        # Viewpoint head back to the final trunk via the global average pool.
        d_hidden = self.vp_fc2.backward(d_logits)
        d_pooled = self.vp_fc1.backward(self.vp_relu.backward(d_hidden))
        _, tc, th, tw = self._fwd["trunk_shape"]
        d_trunk_vp = np.broadcast_to(
            d_pooled[:, :, None, None] / (th * tw), self._fwd["trunk_shape"]
        )

        c4 = self.config.backbone_channels[3]
        d_feats = np.zeros(self._fwd["feats_shape"])
        for s in reversed(range(len(self.stages))):
            stage = self.stages[s]
            d_trunk = stage["head"].backward(d_maps[s])
            if s == len(self.stages) - 1:
                d_trunk = d_trunk + d_trunk_vp
            d = stage["relu2"].backward(d_trunk)
            d = stage["conv2"].backward(d)
            d = stage["relu1"].backward(d)
            d_in = stage["conv1"].backward(d)
            # Chained teacher channels are constants; only the shared
            # feature slice propagates.
            d_feats += d_in[:, :c4] if s > 0 else d_in

        d = d_feats
        for conv, relu in reversed(self.backbone):
            d = conv.backward(relu.backward(d))

        grads = {name: p.grad.copy() for name, p in self._params.items()}
        return float(loss), grads

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in self._params.items():
            arr = np.asarray(arrays[name], dtype=float)
            if arr.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.value.shape}")
            p.value = arr.copy()
