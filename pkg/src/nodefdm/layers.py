"""Structured layer: input normaliser, shared ReLU backbone, per-task heads."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .data import NormStats

HIDDEN = 24
DEPTH = 2


@dataclass(frozen=True)
class Head:
    name: str
    kind: str = "continuous"  # or "binary" (emits a logit)
    stat: str | None = None  # NormStats key used for denormalisation, defaults to name

    @property
    def stat_key(self) -> str:
        return self.stat or self.name


@dataclass(frozen=True)
class StructuredLayerSpec:
    name: str
    inputs: tuple[str, ...]
    heads: tuple[Head, ...]
    hidden: int = HIDDEN
    depth: int = DEPTH
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "heads", tuple(
            h if isinstance(h, Head) else Head(**h) for h in self.heads))
        if self.activation != "relu":
            raise ValueError("only ReLU backbones are supported")
        if len(set(self.inputs)) != len(self.inputs):
            raise ValueError(f"{self.name}: duplicate input features")
        for h in self.heads:
            if h.kind not in ("continuous", "binary"):
                raise ValueError(f"head {h.name}: unknown kind {h.kind!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inputs"] = list(self.inputs)
        d["heads"] = [asdict(h) for h in self.heads]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StructuredLayerSpec":
        return cls(d["name"], tuple(d["inputs"]), tuple(Head(**h) for h in d["heads"]),
                   d.get("hidden", HIDDEN), d.get("depth", DEPTH), d.get("activation", "relu"))

    def param_shapes(self) -> dict[str, tuple[int, int]]:
        shapes = {}
        fan_in = len(self.inputs)
        for i in range(self.depth):
            shapes[f"backbone.{i}.weight"] = (fan_in, self.hidden)
            shapes[f"backbone.{i}.bias"] = (1, self.hidden)
            fan_in = self.hidden
        for h in self.heads:
            shapes[f"head.{h.name}.weight"] = (fan_in, 1)
            shapes[f"head.{h.name}.bias"] = (1, 1)
        return shapes


def spec_hash(specs) -> str:
    blob = json.dumps([s.to_dict() for s in specs], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def kaiming_uniform(shape, rng: np.random.Generator, gain: float = math.sqrt(2.0)) -> np.ndarray:
    """Uniform weights with variance gain**2 / fan_in (fan_in = shape[0])."""
    bound = gain * math.sqrt(3.0 / shape[0])
    return rng.uniform(-bound, bound, size=shape)


def init_params(spec: StructuredLayerSpec, seed: int | np.random.Generator) -> dict[str, np.ndarray]:
    """Kaiming-uniform backbone weights, unit-gain head weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
        elif name.startswith("backbone."):
            params[name] = kaiming_uniform(shape, rng)
        else:
            params[name] = kaiming_uniform(shape, rng, gain=1.0)
    return params


class LayerInputError(ValueError):
    pass


def structured_forward(spec: StructuredLayerSpec, params: dict, stats: NormStats,
                       inputs: dict) -> dict[str, ad.Tensor]:
    """Run one structured layer.

    ``params`` maps names to tensors (or arrays, treated as constants); ``inputs``
    maps feature names to (batch, 1) tensors or arrays in physical units.
    Continuous heads are denormalised, binary heads return logits.
    """
    cols = []
    for name in spec.inputs:
        if name not in inputs:
            raise LayerInputError(f"{spec.name}: missing input feature {name!r}")
        value = inputs[name]
        arr = value.value if isinstance(value, ad.Tensor) else np.asarray(value)
        if not np.all(np.isfinite(arr)):
            raise LayerInputError(f"{spec.name}: non-finite input {name!r}")
        cols.append(value if isinstance(value, ad.Tensor) else ad.Tensor(value))
    mean, std = stats.vectors(spec.inputs)
    x = ad.affine(ad.concat(cols), 1.0 / std, -mean / std)
    for i in range(spec.depth):
        x = ad.relu(x @ params[f"backbone.{i}.weight"] + params[f"backbone.{i}.bias"])
    out = {}
    for h in spec.heads:
        raw = x @ params[f"head.{h.name}.weight"] + params[f"head.{h.name}.bias"]
        if h.kind == "continuous":
            out[h.name] = ad.affine(raw, stats.std[h.stat_key], stats.mean[h.stat_key])
        else:
            out[h.name] = raw
    return out


class StructuredLayer:
    """Spec + normalisation statistics + trainable parameters."""

    def __init__(self, spec: StructuredLayerSpec, stats: NormStats,
                 params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.spec = spec
        keys = list(spec.inputs) + [h.stat_key for h in spec.heads if h.kind == "continuous"]
        missing = [k for k in keys if k not in stats]
        if missing:
            raise ValueError(f"{spec.name}: no normalisation statistics for {missing}")
        self.stats = NormStats({k: stats.mean[k] for k in keys}, {k: stats.std[k] for k in keys})
        arrays = params if params is not None else init_params(spec, seed)
        shapes = spec.param_shapes()
        if set(arrays) != set(shapes):
            raise ValueError(f"{spec.name}: parameter names do not match the spec")
        self.params = {}
        for name, shape in shapes.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{spec.name}.{name}: shape {arr.shape} != {shape}")
            self.params[name] = ad.parameter(arr, name=f"{spec.name}.{name}")

    def __call__(self, inputs: dict) -> dict[str, ad.Tensor]:
        return structured_forward(self.spec, self.params, self.stats, inputs)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}
