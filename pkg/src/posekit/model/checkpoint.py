"""Versioned model checkpoints: config echo, parameters, optimizer state.

A checkpoint is a single ``.npz`` holding every parameter array under
``param/<name>``, momentum buffers under ``momentum/<name>``, and a JSON
metadata blob (format version, model config, iteration counter). Arrays
round-trip bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .network import ModelConfig, PoseNet

FORMAT_VERSION = 1


def save_checkpoint(path, net: PoseNet, iteration: int = 0,
                    momentum_buffers: dict | None = None) -> None:
    arrays = {f"param/{name}": value for name, value in net.state_arrays().items()}
    for name, buf in (momentum_buffers or {}).items():
        arrays[f"momentum/{name}"] = buf
    meta = {
        "format_version": FORMAT_VERSION,
        "config": net.config.to_dict(),
        "iteration": int(iteration),
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path):
    """Returns (net, iteration, momentum_buffers)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"].tobytes()).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {meta.get('format_version')}")
        config = ModelConfig.from_dict(meta["config"])
        net = PoseNet(config)
        params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        net.load_state_arrays(params)
        momentum = {k[len("momentum/"):]: z[k].copy() for k in z.files if k.startswith("momentum/")}
    return net, int(meta["iteration"]), momentum
