"""Run configuration and its key = value file form.

The file grammar (documented in docs/FORMATS.md): one ``key = value``
pair per line, ``#`` starts a comment, blank lines ignored. Values are
ints, floats, booleans (true/false), bare strings, or comma-separated
numeric lists. Field names of RunConfig are the keys; round-tripping a
config through format/parse is lossless.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields

from .errors import ConfigurationError


@dataclass
class RunConfig:
    """One pipeline run. The defaults are the reference desk-scale setup:
    overlapping 8-class blobs with a label-noise floor, a 256-unit MLP
    pretrained to its knee, then 30 coupled fine-tuning epochs."""

    # dataset
    dataset: str = "blobs"  # "blobs" | "images"
    blob_classes: int = 8
    blob_dim: int = 24
    blob_train: int = 12000
    blob_test: int = 2000
    blob_separation: float = 3.9
    blob_label_noise: float = 0.08
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    # architecture
    arch: str = "mlp"  # "mlp" | "cnn"
    hidden: tuple[int, ...] = (256, 256)
    conv_channels: tuple[int, ...] = (8, 16)
    kernel_size: int = 3
    conv_hidden: int = 64
    # pretraining
    pretrain_epochs: int = 20
    pretrain_lr: float = 0.01
    # soft-quantization fine-tuning
    epochs: int = 30
    lr: float = 0.001
    momentum: float = 0.9
    h: float = 0.05
    w: float = 0.3
    alpha: float = 0.66
    n_bins: int = 2**14
    f0: float = 0.1
    epoch_full: int = 0  # 0 -> ceil(5/6 * epochs)
    histogram_stride: int = 1
    # quantization
    precision_bits: int = 7
    n_min: int = 10
    heq_bits: int = 4
    # perturbation study
    perturb_samples: int = 100
    perturb_on_train: bool = False
    # run mechanics
    batch_size: int = 64
    seed: int = 0
    workers: int = 1
    out_dir: str = ""

    def resolved_epoch_full(self) -> int:
        if self.epoch_full > 0:
            return self.epoch_full
        return math.ceil(self.epochs * 5.0 / 6.0)

    def validate(self) -> "RunConfig":
        if self.dataset not in ("blobs", "images"):
            raise ConfigurationError(f"unknown dataset {self.dataset!r}")
        if self.arch not in ("mlp", "cnn"):
            raise ConfigurationError(f"unknown arch {self.arch!r}")
        if self.dataset == "images":
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                if not getattr(self, key):
                    raise ConfigurationError(f"dataset 'images' requires {key}")
        if self.epochs < 1 or self.pretrain_epochs < 0:
            raise ConfigurationError("epoch counts must be positive")
        if self.lr <= 0 or self.pretrain_lr <= 0:
            raise ConfigurationError("learning rates must be positive")
        if not (0 <= self.momentum < 1):
            raise ConfigurationError(f"momentum {self.momentum} outside [0, 1)")
        if self.h < 0 or self.w <= 0:
            raise ConfigurationError("h must be >= 0 and w > 0")
        if self.n_bins < 2:
            raise ConfigurationError("n_bins must be >= 2")
        if not (0 < self.f0 <= 1):
            raise ConfigurationError(f"f0 {self.f0} outside (0, 1]")
        if self.histogram_stride < 1:
            raise ConfigurationError("histogram_stride must be >= 1")
        if self.precision_bits < 1 or self.heq_bits < 1:
            raise ConfigurationError("bit counts must be >= 1")
        if self.n_min < 0:
            raise ConfigurationError("n_min must be >= 0")
        if self.batch_size < 1 or self.workers < 1:
            raise ConfigurationError("batch_size and workers must be >= 1")
        if self.perturb_samples < 10:
            raise ConfigurationError("perturb_samples must be >= 10")
        return self


@dataclass
class SweepSpec:
    h_values: tuple[float, ...]
    w_values: tuple[float, ...]
    repeats: int = 15

    def __post_init__(self):
        if not self.h_values or not self.w_values:
            raise ConfigurationError("sweep grid must be nonempty")
        if self.repeats < 1:
            raise ConfigurationError(f"repeats must be >= 1, got {self.repeats}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def _parse_scalar(text: str, target_type):
    if target_type is bool:
        if text == "true":
            return True
        if text == "false":
            return False
        raise ConfigurationError(f"expected true/false, got {text!r}")
    if target_type is int:
        return int(text)
    if target_type is float:
        return float(text)
    return text


def parse_config(text: str) -> RunConfig:
    by_name = {f.name: f for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in by_name:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        f = by_name[key]
        try:
            if f.type.startswith("tuple"):
                element = int if "int" in f.type else float
                values[key] = (
                    tuple(element(v.strip()) for v in val.split(",") if v.strip())
                    if val
                    else ()
                )
            else:
                values[key] = _parse_scalar(val, {"int": int, "float": float, "bool": bool, "str": str}[f.type])
        except (ValueError, KeyError) as e:
            raise ConfigurationError(f"line {lineno}: bad value for {key!r}: {e}") from e
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def save_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_config(cfg))


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    return dataclasses.replace(cfg, **overrides)
