"""NODE-FDM: analytical trajectory layer, three learned layers, explicit Euler.

The state is (alt, dist, fpa, tas, mass). Altitude and distance rates come from
the trajectory layer (V sin(gamma) and V - headwind), mass rate is minus the
engine layer's fuel flow, and the derivative layer supplies the airspeed and
path-angle rates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import atmosphere as atm
from . import autodiff as ad
from .data import (ANGLES, CONTEXT, CONTROL, DT, ENGINE, STATE, TRAJECTORY, FlightSeries,
                   NormStats)
from .layers import Head, StructuredLayer, StructuredLayerSpec, spec_hash

STATE_INPUTS = ("alt", "fpa", "tas", "mass")
DRIVERS = CONTROL + CONTEXT
LOSS_FEATURES = ("alt", "fpa", "tas", "mass", "aoa", "pitch", "n1", "fuel_flow")
CHECKPOINT_FORMAT = "nodefdm-checkpoint"
CHECKPOINT_VERSION = 1
MIN_ALTITUDE = -100.0


class RolloutError(RuntimeError):
    def __init__(self, step: int, reason: str):
        super().__init__(f"rollout aborted at step {step}: {reason}")
        self.step = step
        self.reason = reason


def default_specs(distance_input: bool = False) -> tuple[StructuredLayerSpec, ...]:
    state = STATE_INPUTS + (("dist",) if distance_input else ())
    base = state + CONTROL + CONTEXT + TRAJECTORY
    return (
        StructuredLayerSpec("angle", base, (Head("aoa"), Head("pitch"))),
        StructuredLayerSpec("engine", base, (Head("n1"), Head("fuel_flow"))),
        StructuredLayerSpec("derivative", base + ANGLES + ENGINE,
                            (Head("d_tas"), Head("d_fpa"))),
    )


@dataclass(frozen=True)
class LossWeights:
    """Per-feature weights of the composite loss."""

    weights: Mapping[str, float]
    convention: str = "inverse_variance"

    @classmethod
    def from_stats(cls, stats: NormStats, convention: str = "inverse_variance",
                   include_distance: bool = False) -> "LossWeights":
        features = LOSS_FEATURES + (("dist",) if include_distance else ())
        if convention == "inverse_variance":
            w = {f: 1.0 / stats.std[f] ** 2 for f in features}
        elif convention == "inverse_std":
            w = {f: 1.0 / stats.std[f] for f in features}
        else:
            raise ValueError(f"unknown weight convention {convention!r}")
        return cls(w, convention)

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(self.weights)

    def vector(self) -> np.ndarray:
        return np.array([[self.weights[f] for f in self.features]])

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights({k: v * factor for k, v in self.weights.items()}, self.convention)

    def to_dict(self) -> dict:
        return {"convention": self.convention, "weights": dict(self.weights)}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls({k: float(v) for k, v in d["weights"].items()}, d["convention"])


def isa_pressure_op(h):
    return ad.elementwise(h, atm._isa_pressure_unchecked, atm.isa_pressure_derivative)


def trajectory_layer(x: Mapping, u: Mapping, e0: Mapping) -> dict:
    """Vertical speed, Mach, CAS, ground speed and target differences.

    ``x`` values may be tensors; ``u`` and ``e0`` are plain arrays.
    """
    h, gamma, v = x["alt"], x["fpa"], x["tas"]
    t_oat = np.asarray(e0["oat"], dtype=float)
    vz = v * ad.sin(gamma) if isinstance(gamma, ad.Tensor) else v * np.sin(gamma)
    a = np.sqrt(atm.GAMMA_AIR * atm.R_AIR * t_oat)
    p = isa_pressure_op(h) if isinstance(h, ad.Tensor) else atm._isa_pressure_unchecked(h)
    cas = atm.cas_from_pressure(v, p, t_oat)
    return {
        "vs": vz,
        "mach": v * (1.0 / a),
        "cas": cas,
        "gs": v - np.asarray(e0["wind_par"], dtype=float),
        "dh_sel": np.asarray(u["sel_alt"], dtype=float) - h,
        "dv_sel": np.asarray(u["sel_spd"], dtype=float) - cas,
    }


@dataclass
class Rollout:
    """States x_0..x_N and the intermediates evaluated at x_0..x_{N-1}."""

    states: dict[str, list]
    intermediates: dict[str, list]

    @property
    def steps(self) -> int:
        return len(next(iter(self.states.values()))) - 1

    def final_state(self) -> dict:
        return {k: v[-1] for k, v in self.states.items()}

    def state_array(self, name: str) -> np.ndarray:
        """(batch, N+1) array of a state channel."""
        return np.concatenate([_value(t) for t in self.states[name]], axis=1)

    def intermediate_array(self, name: str) -> np.ndarray:
        return np.concatenate([_value(t) for t in self.intermediates[name]], axis=1)


def _value(t) -> np.ndarray:
    return t.value if isinstance(t, ad.Tensor) else np.asarray(t, dtype=float)


Field = Callable[[dict, dict, dict], tuple[dict, dict]]


def euler_rollout(field: Field, x0: Mapping, drivers: Mapping[str, np.ndarray], steps: int,
                  dt: float = DT, check_altitude: bool = False) -> Rollout:
    """x_{k+1} = x_k + dt * f(x_k, u_k, e0_k) for k = 0..steps-1.

    ``drivers`` maps control/context names to (batch, >= steps) arrays. ``field``
    returns (dx/dt, intermediates) as dicts keyed by state / intermediate name.
    """
    x = dict(x0)
    states = {k: [v] for k, v in x.items()}
    inter: dict[str, list] = {}
    for k in range(steps):
        drv = {name: arr[:, k:k + 1] for name, arr in drivers.items()}
        dx, extra = field(x, drv, drv)
        for name, value in dx.items():
            if not np.all(np.isfinite(_value(value))):
                raise RolloutError(k, f"non-finite derivative of {name}")
        for name, value in extra.items():
            inter.setdefault(name, []).append(value)
        x = {name: x[name] + dt * dx[name] for name in x}
        for name, value in x.items():
            if not np.all(np.isfinite(_value(value))):
                raise RolloutError(k, f"non-finite {name}")
            states[name].append(value)
        if check_altitude and np.any(_value(x["alt"]) < MIN_ALTITUDE):
            raise RolloutError(k, f"altitude below {MIN_ALTITUDE:g} m")
    return Rollout(states, inter)


class NodeFdm:
    """The assembled model. Parameters live in ``self.layers[...].params``."""

    def __init__(self, stats: NormStats, specs: tuple[StructuredLayerSpec, ...] | None = None,
                 params: Mapping[str, Mapping[str, np.ndarray]] | None = None,
                 seed: int = 0, dt: float = DT):
        self.stats = stats
        self.specs = specs or default_specs()
        self.dt = dt
        rng = np.random.default_rng([seed, 0])
        self.layers = {}
        for spec in self.specs:
            layer_params = None if params is None else params[spec.name]
            layer_seed = int(rng.integers(2**31))
            self.layers[spec.name] = StructuredLayer(spec, stats, layer_params, layer_seed)
        names = {s.name for s in self.specs}
        if names != {"angle", "engine", "derivative"}:
            raise ValueError("model needs exactly the angle, engine and derivative layers")
        # sharpness of the non-negativity map on fuel flow; a sharper map starves
        # the gradient near idle where the recorded flow is small but positive
        self.fuel_beta = 1.0 / stats.std["fuel_flow"]

    # parameters --------------------------------------------------------------
    def parameters(self) -> dict[str, ad.Tensor]:
        return {f"{lname}.{pname}": p
                for lname, layer in self.layers.items()
                for pname, p in layer.params.items()}

    def get_flat(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.parameters().items()}

    def set_flat(self, values: Mapping[str, np.ndarray]) -> None:
        for k, p in self.parameters().items():
            p.value = np.array(values[k], dtype=np.float64)

    # dynamics ----------------------------------------------------------------
    def intermediates(self, x: Mapping, u: Mapping, e0: Mapping) -> tuple[dict, dict, dict]:
        e1 = trajectory_layer(x, u, e0)
        feats = {**x, **u, **e0, **e1}
        e2 = self.layers["angle"](feats)
        raw3 = self.layers["engine"](feats)
        e3 = {"n1": raw3["n1"], "fuel_flow": ad.softplus(raw3["fuel_flow"], self.fuel_beta)}
        return e1, e2, e3

    def field(self, x: Mapping, u: Mapping, e0: Mapping) -> tuple[dict, dict]:
        e1, e2, e3 = self.intermediates(x, u, e0)
        rates = self.layers["derivative"]({**x, **u, **e0, **e1, **e2, **e3})
        dx = {
            "alt": e1["vs"],
            "dist": e1["gs"],
            "fpa": rates["d_fpa"],
            "tas": rates["d_tas"],
            "mass": -e3["fuel_flow"],
        }
        return dx, {**e1, **e2, **e3}

    def step_derivative(self, x: Mapping, u: Mapping, e0: Mapping) -> dict:
        return self.field(x, u, e0)[0]

    def rollout(self, x0: Mapping, drivers: Mapping[str, np.ndarray], steps: int,
                check_altitude: bool = False) -> Rollout:
        return euler_rollout(self.field, x0, drivers, steps, self.dt, check_altitude)

    def predict_flight(self, flight: FlightSeries) -> FlightSeries:
        """Propagate from the first record over the whole recorded horizon."""
        n = len(flight)
        x0 = {name: np.array([[float(flight[name][0])]]) for name in STATE}
        drivers = {name: np.asarray(flight[name], dtype=float)[None, :] for name in DRIVERS}
        roll = self.rollout(x0, drivers, n, check_altitude=True)
        cols = {name: np.asarray(flight[name], dtype=float)
                for name in ("time_s",) + DRIVERS}
        for name in STATE:
            cols[name] = roll.state_array(name)[0, :n]
        for name in ("mach", "cas", "vs", "gs") + ANGLES + ENGINE:
            cols[name] = roll.intermediate_array(name)[0]
        return FlightSeries(flight.tag, cols, flight.dt, flight.airframe, {"model": "node-fdm"})

    # checkpoints -------------------------------------------------------------
    def to_checkpoint(self, loss_weights: LossWeights | None = None, **extra) -> dict:
        layers = {}
        for spec in self.specs:
            layer = self.layers[spec.name]
            layers[spec.name] = {
                "spec": spec.to_dict(),
                "params": {k: {"shape": list(p.value.shape), "data": p.value.ravel().tolist()}
                           for k, p in layer.params.items()},
            }
        ckpt = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "spec_hash": spec_hash(self.specs),
            "dt": self.dt,
            "norm_stats": self.stats.to_dict(),
            "layers": layers,
            "layer_order": [spec.name for spec in self.specs],
        }
        if loss_weights is not None:
            ckpt["loss_weights"] = loss_weights.to_dict()
        ckpt.update(extra)
        return ckpt

    @classmethod
    def from_checkpoint(cls, ckpt: dict) -> "NodeFdm":
        if ckpt.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a NODE-FDM checkpoint")
        if ckpt.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {ckpt.get('version')}")
        order = ckpt.get("layer_order", list(ckpt["layers"]))
        specs = tuple(StructuredLayerSpec.from_dict(ckpt["layers"][name]["spec"])
                      for name in order)
        if spec_hash(specs) != ckpt["spec_hash"]:
            raise ValueError("checkpoint spec hash mismatch")
        params = {
            name: {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                   for k, v in layer["params"].items()}
            for name, layer in ckpt["layers"].items()
        }
        params = {name: params[name] for name in order}
        return cls(NormStats.from_dict(ckpt["norm_stats"]), specs, params, dt=ckpt["dt"])


def save_checkpoint(ckpt: dict, path) -> None:
    Path(path).write_text(json.dumps(ckpt, sort_keys=True) + "\n")


def load_checkpoint(path) -> dict:
    return json.loads(Path(path).read_text())


# loss ------------------------------------------------------------------------

def stack_sequences(seqs) -> dict[str, np.ndarray]:
    """Column name -> (n_sequences, length) array."""
    names = STATE + DRIVERS + ANGLES + ENGINE
    return {name: np.stack([np.asarray(s[name], dtype=float) for s in seqs]) for name in names}


def sequence_loss(model: NodeFdm, batch: Mapping[str, np.ndarray], weights: LossWeights,
                  steps: int | None = None):
    """Composite loss of rollouts started from the first record of each window.

    Sum over features of weight * mean squared error over all steps and windows.
    """
    n = batch["alt"].shape[1] if steps is None else steps
    x0 = {name: batch[name][:, :1] for name in STATE}
    drivers = {name: batch[name][:, :n] for name in DRIVERS}
    roll = model.rollout(x0, drivers, n)
    return composite_loss(roll, batch, weights, n)


def composite_loss(roll: Rollout, truth: Mapping[str, np.ndarray], weights: LossWeights,
                   steps: int | None = None):
    n = roll.steps if steps is None else steps
    feats = weights.features
    for f in feats:
        if truth[f].shape[1] < n:
            raise ValueError(f"truth for {f} has {truth[f].shape[1]} steps, need {n}")
    rows = []
    for k in range(n):
        cols = []
        for f in feats:
            cols.append(roll.states[f][k] if f in roll.states else roll.intermediates[f][k])
        rows.append(ad.concat([ad.as_tensor(c) for c in cols]))
    pred = ad.vstack(rows)
    target = np.concatenate([np.stack([truth[f][:, k] for f in feats], axis=1)
                             for k in range(n)], axis=0)
    err = ad.square(pred - target)
    return ad.total(ad.affine(err, weights.vector() / pred.rows, 0.0))
