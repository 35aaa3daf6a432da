"""AdamW with bias correction and decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"step": self.step,
                "m": {k: a.tolist() for k, a in self.m.items()},
                "v": {k: a.tolist() for k, a in self.v.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "AdamWState":
        return cls(d["step"], {k: np.array(a) for k, a in d["m"].items()},
                   {k: np.array(a) for k, a in d["v"].items()})


def adamw_step(config: AdamWConfig, params: dict[str, np.ndarray],
               grads: dict[str, np.ndarray], state: AdamWState) -> tuple[dict, AdamWState]:
    """One update. Returns new parameter arrays and the advanced state.

    Decay is applied to the parameter directly (p <- p - lr * wd * p), then the
    bias-corrected Adam step.
    """
    t = state.step + 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name in sorted(params):
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        p = p * (1.0 - config.lr * config.weight_decay)
        p = p - config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
        new_params[name], new_m[name], new_v[name] = p, m, v
    return new_params, AdamWState(t, new_m, new_v)


class AdamW:
    """Stateful wrapper updating :class:`~nodefdm.autodiff.Tensor` parameters in place."""

    def __init__(self, params: dict, config: AdamWConfig = AdamWConfig()):
        self.params = params
        self.config = config
        self.state = AdamWState()

    def step(self, grads: dict[str, np.ndarray]) -> None:
        values = {k: p.value for k, p in self.params.items()}
        new, self.state = adamw_step(self.config, values, grads, self.state)
        for k, p in self.params.items():
            p.value = new[k]
