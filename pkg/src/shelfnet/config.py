"""Experiment configuration: strict JSON schema plus builders.

A config document fully determines an experiment.  Unknown keys anywhere in
the document are rejected so that typos cannot silently change a run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .arch import (BACKBONE_PRESETS, VARIANTS, BackboneSpec, BlockGraph,
                   build_backbone, build_shelf, make_backbone, make_shelf_spec)
from .data import (AugmentPolicy, DirectorySource, SynthConfig, SyntheticSource,
                   synth_batch)
from .errors import ConfigError
from .net import ExecutableNet, instantiate
from .train import LrSchedule

VAL_SEED_OFFSET = 100003  # held-out images come from a shifted stream


@dataclass
class TrainingConfig:
    base_lr: float = 0.05
    total_iter: int = 2000
    power: float = 0.9
    weight_decay: float = 1e-4
    momentum: float = 0.9
    loss: str = "ce"  # ce | ohem
    batch_size: int = 4
    checkpoint_every: int = 500
    eval_every: int = 400
    val_images: int = 24
    augment: bool = False
    flip_prob: float = 0.5
    scale_range: Tuple[float, float] = (0.75, 1.25)
    rotation_deg: float = 10.0


@dataclass
class DatasetConfig:
    kind: str = "synthetic"  # synthetic | directory
    seed: int = 0
    size: int = 64
    dir: Optional[str] = None
    shapes_per_image: Tuple[int, int] = (2, 3)
    area_range: Tuple[float, float] = (0.04, 0.10)


@dataclass
class EvalConfig:
    scales: Tuple[float, ...] = (1.0,)
    flip: bool = False


@dataclass
class ExperimentConfig:
    variant: str = "shelfnet"
    backbone: str = "mini"
    backbone_width: Optional[int] = None
    dilated: bool = False
    channels: Optional[Tuple[int, ...]] = None
    num_classes: int = 4
    input_size: Tuple[int, int] = (64, 64)
    share_weights: bool = True
    dropout_p: float = 0.1
    seed: int = 0
    out_dir: Optional[str] = None
    dtype: str = "float64"
    training: TrainingConfig = field(default_factory=TrainingConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    # -- builders -------------------------------------------------------------

    def backbone_spec(self) -> BackboneSpec:
        return make_backbone(self.backbone, dilated=self.dilated,
                             base_width=self.backbone_width)

    def shelf_spec(self):
        return make_shelf_spec(self.variant, self.backbone_spec(),
                               channels=self.channels, num_classes=self.num_classes,
                               share_weights=self.share_weights,
                               dropout_p=self.dropout_p)

    def graph(self) -> BlockGraph:
        return build_shelf(self.shelf_spec())

    def net(self) -> ExecutableNet:
        return instantiate(self.graph(), seed=self.seed, dtype=np.dtype(self.dtype))

    def lr_schedule(self) -> LrSchedule:
        t = self.training
        return LrSchedule(t.base_lr, t.total_iter, t.power)

    def synth_config(self) -> SynthConfig:
        d = self.dataset
        return SynthConfig(num_classes=self.num_classes, size=d.size,
                           shapes_per_image=d.shapes_per_image,
                           area_range=d.area_range)

    def train_source(self):
        d = self.dataset
        if d.kind == "synthetic":
            return SyntheticSource(self.synth_config(), self.training.batch_size, d.seed)
        if d.kind == "directory":
            if not d.dir:
                raise ConfigError("dataset.kind='directory' requires dataset.dir")
            return DirectorySource(d.dir, self.training.batch_size, d.seed)
        raise ConfigError(f"unknown dataset kind {d.kind!r}")

    def val_batches(self):
        cfg = self.synth_config()
        bs = self.training.batch_size
        n = self.training.val_images
        return [synth_batch(self.dataset.seed + VAL_SEED_OFFSET,
                            range(i, min(i + bs, n)), cfg)
                for i in range(0, n, bs)]

    def augment_policy(self) -> Optional[AugmentPolicy]:
        t = self.training
        if not t.augment:
            return None
        return AugmentPolicy(flip_prob=t.flip_prob, scale_range=tuple(t.scale_range),
                             rotation_deg=t.rotation_deg, crop=None)

    def to_json_dict(self) -> dict:
        def plain(x):
            if isinstance(x, tuple):
                return [plain(v) for v in x]
            return x

        doc = {}
        for name, value in vars(self).items():
            if name in ("training", "dataset", "eval"):
                doc[name] = {k: plain(v) for k, v in vars(value).items()}
            else:
                doc[name] = plain(value)
        return doc


_SCALAR_FIELDS = {
    "": {
        "variant": str, "backbone": str, "backbone_width": (int, type(None)),
        "dilated": bool, "channels": (list, type(None)), "num_classes": int,
        "input_size": (int, list), "share_weights": bool, "dropout_p": (int, float),
        "seed": int, "out_dir": (str, type(None)), "dtype": str,
    },
    "training": {
        "base_lr": (int, float), "total_iter": int, "power": (int, float),
        "weight_decay": (int, float), "momentum": (int, float), "loss": str,
        "batch_size": int, "checkpoint_every": int, "eval_every": int,
        "val_images": int, "augment": bool, "flip_prob": (int, float),
        "scale_range": list, "rotation_deg": (int, float),
    },
    "dataset": {
        "kind": str, "seed": int, "size": int, "dir": (str, type(None)),
        "shapes_per_image": list, "area_range": list,
    },
    "eval": {"scales": list, "flip": bool},
}


def _apply_section(obj, section: str, doc: dict):
    spec = _SCALAR_FIELDS[section]
    for key, value in doc.items():
        where = f"{section}.{key}" if section else key
        if key not in spec:
            raise ConfigError(f"unknown config field {where!r}")
        if not isinstance(value, spec[key]):
            raise ConfigError(f"config field {where!r} has wrong type "
                              f"({type(value).__name__})")
        if isinstance(value, list):
            value = tuple(value)
        setattr(obj, key, value)


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    cfg = ExperimentConfig()
    top = {k: v for k, v in doc.items() if k not in ("training", "dataset", "eval")}
    _apply_section(cfg, "", top)
    for section in ("training", "dataset", "eval"):
        if section in doc:
            if not isinstance(doc[section], dict):
                raise ConfigError(f"config section {section!r} must be an object")
            _apply_section(getattr(cfg, section), section, doc[section])
    if isinstance(cfg.input_size, int):
        cfg.input_size = (cfg.input_size, cfg.input_size)
    if cfg.backbone not in BACKBONE_PRESETS:
        raise ConfigError(f"unknown backbone {cfg.backbone!r}")
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {cfg.variant!r}")
    if np.dtype(cfg.dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"dtype must be float32 or float64, got {cfg.dtype!r}")
    # surface spec-level problems (bad widths, levels, schedule) immediately
    cfg.shelf_spec()
    cfg.lr_schedule()
    if cfg.dataset.kind == "synthetic":
        cfg.synth_config()
    return cfg


def load_config(path: Optional[str], overrides: Optional[dict] = None) -> ExperimentConfig:
    doc = {}
    if path:
        try:
            with open(path) as f:
                doc = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file {path!r} not found")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path!r}: invalid JSON at line {e.lineno}, "
                              f"column {e.colno}: {e.msg}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, leaf = key.partition(".")
        if leaf:
            doc.setdefault(section, {})[leaf] = value
        else:
            doc[key] = value
    return config_from_dict(doc)
