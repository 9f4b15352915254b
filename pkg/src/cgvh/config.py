"""Experiment configuration: JSON file plus command-line overrides.

Every section is validated before any computation starts. Errors carry the
config path and, where the offending key can be located, its line number.

Example::

    {
      "grid_side": 8,
      "wavelength": 0.75,
      "pixel_pitch": 0.4,
      "seed": 1,
      "layers": {"spacings": [30, 30, 30], "init": "random_phase"},
      "regions": {"count": 2},
      "dataset": {"kind": "synthetic", "shapes": ["bar_h", "bar_v"]},
      "train": {"iterations": 50}
    }
"""
from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import LOSSES
from .errors import FormatError
from .optics import EVANESCENT_MODES

__all__ = ["ExperimentConfig", "load_config", "config_from_dict", "substream"]

# fixed ids so each consumer of randomness has its own reproducible stream
STREAMS = {"init": 1, "train": 2, "noise": 3, "data": 4, "verify": 5, "pdp": 6, "input": 7}


def substream(seed, name, *extra):
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name], *extra]))


@dataclass
class LayersConfig:
    spacings: list = field(default_factory=lambda: [30.0, 30.0, 30.0])
    init: str = "random_phase"
    stack: str = None

    def validate(self):
        if not self.spacings:
            return "layers.spacings must list at least one gap"
        if any(not (isinstance(s, (int, float)) and s > 0) for s in self.spacings):
            return "layers.spacings must be positive numbers"
        if self.init not in ("zero", "random_phase"):
            return "layers.init must be 'zero' or 'random_phase'"


@dataclass
class RegionsConfig:
    count: int = 2
    tile: int = None
    indices: list = None

    def validate(self):
        if self.indices is None and (not isinstance(self.count, int) or self.count < 2):
            return "regions.count must be an integer >= 2"


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    shapes: list = field(default_factory=lambda: ["bar_h", "bar_v"])
    samples_per_class: int = 16
    test_per_class: int = 16
    jitter: float = 0.1
    epsilon: float = 0.02
    subspace_dim: int = 6
    path: str = None
    test_path: str = None

    def validate(self):
        from .datasets import SHAPES

        if self.kind not in ("synthetic", "close_pair", "manifest"):
            return "dataset.kind must be synthetic, close_pair or manifest"
        if self.kind == "synthetic" and any(s not in SHAPES for s in self.shapes):
            return f"dataset.shapes must be drawn from {sorted(SHAPES)}"
        if self.kind == "manifest" and not self.path:
            return "dataset.path is required for kind 'manifest'"
        if self.samples_per_class < 1 or self.test_per_class < 1:
            return "dataset sample counts must be >= 1"
        if not self.epsilon > 0:
            return "dataset.epsilon must be positive"


@dataclass
class TrainSection:
    learning_rate: float = 10.0
    iterations: int = 100
    optimize_absorption: bool = False
    loss: str = "softmax_region_energy"
    temperature: float = 1.0
    margin: float = 0.05

    def validate(self):
        if not self.learning_rate > 0:
            return "train.learning_rate must be positive"
        if not isinstance(self.iterations, int) or self.iterations < 0:
            return "train.iterations must be a non-negative integer"
        if self.loss not in LOSSES:
            return f"train.loss must be one of {LOSSES}"
        if not self.temperature > 0:
            return "train.temperature must be positive"


@dataclass
class BaselineConfig:
    kind: str = "diffractive"
    arch: list = field(default_factory=lambda: [16])
    activation: str = "square"
    learning_rate: float = 0.01
    iterations: int = 600
    weight_decay: float = 1e-4
    noise_repeats: int = 20

    def validate(self):
        if self.kind not in ("diffractive", "euclidean", "nonlinear", "linear"):
            return "baseline.kind must be diffractive, euclidean, nonlinear or linear"
        if self.kind == "nonlinear" and (not self.arch or any(a < 1 for a in self.arch)):
            return "baseline.arch needs at least one hidden layer of width >= 1"
        if self.activation not in ("square", "linear"):
            return "baseline.activation must be 'square' or 'linear'"


@dataclass
class VerifyConfig:
    collapse_trials: int = 20
    inputs_per_stack: int = 20
    contraction_trials: int = 20
    bound_trials: int = 200
    depths: list = field(default_factory=lambda: [0, 1, 2, 3, 5])
    collapse_tol: float = 1e-10
    contraction_tol: float = 1e-9
    slack_rtol: float = 1e-12
    inject_gain: float = None  # negative-control hook: adds a panel with absorption -inject_gain

    def validate(self):
        if min(self.collapse_trials, self.inputs_per_stack, self.contraction_trials, self.bound_trials) < 1:
            return "verify trial counts must be >= 1"
        if not self.depths or any(not isinstance(d, int) or d < 0 for d in self.depths):
            return "verify.depths must be non-negative integers"


@dataclass
class PdpConfig:
    epsilons: list = field(default_factory=lambda: [0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5])
    trials: int = 200
    threshold: float = 2.0

    def validate(self):
        if any(not (isinstance(e, (int, float)) and e >= 0) for e in self.epsilons):
            return "pdp.epsilons must be non-negative"
        if self.trials < 1:
            return "pdp.trials must be >= 1"


SECTIONS = {
    "layers": LayersConfig,
    "regions": RegionsConfig,
    "dataset": DatasetConfig,
    "train": TrainSection,
    "baseline": BaselineConfig,
    "verify": VerifyConfig,
    "pdp": PdpConfig,
}


@dataclass
class ExperimentConfig:
    grid_side: int = 8
    wavelength: float = 0.75
    pixel_pitch: float = 0.4
    evanescent_mode: str = "decay"
    pad_factor: int = 2
    seed: int = 0
    noise_sigma: float = 0.0
    output_dir: str = "out"
    assembly_cap: int = 4096
    layers: LayersConfig = field(default_factory=LayersConfig)
    regions: RegionsConfig = field(default_factory=RegionsConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainSection = field(default_factory=TrainSection)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    pdp: PdpConfig = field(default_factory=PdpConfig)
    source: str = field(default=None, repr=False)
    base_dir: str = field(default=".", repr=False)

    def validate(self):
        if not isinstance(self.grid_side, int) or self.grid_side < 1:
            return "grid_side must be a positive integer"
        for name in ("wavelength", "pixel_pitch"):
            if not (isinstance(getattr(self, name), (int, float)) and getattr(self, name) > 0):
                return f"{name} must be positive"
        if self.evanescent_mode not in EVANESCENT_MODES:
            return f"evanescent_mode must be one of {EVANESCENT_MODES}"
        if not isinstance(self.pad_factor, int) or self.pad_factor < 1:
            return "pad_factor must be a positive integer"
        if not isinstance(self.seed, int) or self.seed < 0:
            return "seed must be a non-negative integer"
        if not self.noise_sigma >= 0:
            return "noise_sigma must be >= 0"
        for name in SECTIONS:
            msg = getattr(self, name).validate()
            if msg:
                return msg

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self):
        d = dataclasses.asdict(self)
        d.pop("source")
        d.pop("base_dir")
        return d


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _build(cls, doc, prefix, text, source):
    if not isinstance(doc, dict):
        raise FormatError(f"{prefix or 'config'} must be a JSON object", source, _line_of(text, prefix.rsplit('.', 1)[-1]) if prefix else 1)
    names = {f.name for f in dataclasses.fields(cls)} - {"source", "base_dir"}
    kwargs = {}
    for key, value in doc.items():
        if key not in names:
            raise FormatError(f"unknown key '{prefix}{key}'", source, _line_of(text, key))
        if cls is ExperimentConfig and key in SECTIONS:
            value = _build(SECTIONS[key], value, key + ".", text, source)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(doc, text=None, source=None, base_dir="."):
    cfg = _build(ExperimentConfig, doc, "", text, source)
    cfg.source = str(source) if source else None
    cfg.base_dir = str(base_dir)
    check(cfg, text)
    return cfg


def check(cfg, text=None):
    msg = cfg.validate()
    if msg:
        key = msg.split()[0].split(".")[-1]
        raise FormatError(msg, cfg.source, _line_of(text, key))


def load_config(path):
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg} (column {exc.colno})", path, exc.lineno) from None
    return config_from_dict(doc, text, path, path.parent)
