"""Checkpoint directories: one NTF tensor per named layer plus ``manifest.txt``.

NTF stores float32, so parameters round-trip at single precision.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..imaging import read_ntf, write_ntf
from .models import ModelSpec, Parameters, param_layout
from .training import TrainConfig, TrainedClassifier


def save_checkpoint(model: TrainedClassifier, path, config: TrainConfig | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name in model.params.layout:
        write_ntf(model.params[name], path / f"{name}.ntf")
    if model.mean is not None:
        write_ntf(model.mean, path / "_norm_mean.ntf")
        write_ntf(model.std, path / "_norm_std.ntf")
    lines = {
        "family": model.spec.family,
        "input_shape": "x".join(map(str, model.spec.input_shape)),
        "num_classes": model.spec.num_classes,
        "hidden": model.spec.hidden,
        "conv_channels": "x".join(map(str, model.spec.conv_channels)),
        "normalization": model.normalization,
        "eval_crop": "" if model.eval_crop is None else model.eval_crop,
        "layers": ",".join(model.params.layout),
    }
    if config is not None:
        lines["train_config"] = json.dumps(config.to_dict(), sort_keys=True)
    with open(path / "manifest.txt", "w", encoding="utf-8") as fh:
        for key, value in lines.items():
            fh.write(f"{key}={value}\n")


def load_checkpoint(path) -> TrainedClassifier:
    path = Path(path)
    manifest = {}
    with open(path / "manifest.txt", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line and not line.startswith("#"):
                key, _, value = line.partition("=")
                manifest[key] = value
    spec = ModelSpec(
        family=manifest["family"],
        input_shape=tuple(int(s) for s in manifest["input_shape"].split("x")),
        num_classes=int(manifest["num_classes"]),
        hidden=int(manifest["hidden"]),
        conv_channels=tuple(int(s) for s in manifest["conv_channels"].split("x")),
    )
    layout = param_layout(spec)
    vec = np.concatenate([read_ntf(path / f"{name}.ntf").ravel() for name in layout])
    model = TrainedClassifier(spec, Parameters(vec, layout), manifest["normalization"])
    if (path / "_norm_mean.ntf").exists():
        model.mean = read_ntf(path / "_norm_mean.ntf")
        model.std = read_ntf(path / "_norm_std.ntf")
    if manifest.get("eval_crop"):
        model.eval_crop = int(manifest["eval_crop"])
    return model
