"""Generic point-mass performance model (drag polar, thrust, fuel, N1, AoA).

This is a configurable stand-in for a licensed aircraft performance database.
Coefficients default to a medium twin-jet of roughly A320 size.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import atmosphere as atm

N_FLAP = 5


@dataclass(frozen=True)
class PerformanceConfig:
    name: str = "generic-twin"
    reference_mass: float = 64000.0  # kg
    wing_area: float = 122.6  # m^2
    cd0: tuple[float, ...] = (0.024, 0.030, 0.045, 0.060, 0.085)
    k: tuple[float, ...] = (0.0375, 0.0390, 0.0400, 0.0420, 0.0450)
    cd0_gear: float = 0.018
    cd0_speedbrake: float = 0.015
    cl0: tuple[float, ...] = (0.20, 0.45, 0.65, 0.80, 1.00)
    cl_alpha: float = 5.0  # 1/rad
    max_thrust_sls: float = 120000.0  # N, both engines, climb rating
    thrust_lapse: float = 0.7  # exponent on density ratio
    idle_fraction: float = 0.07
    tsfc_base: float = 1.0e-5  # kg/(N s)
    tsfc_mach: float = 0.9e-5  # kg/(N s) per unit Mach
    vcas_min: float = 60.0  # m/s
    vcas_max: float = 180.0  # m/s
    mach_max: float = 0.82
    max_altitude: float = 12000.0  # m
    n1_idle: float = 22.0  # %
    n1_max: float = 97.0  # %
    n1_alt_gain: float = 3.0  # % per 11 km

    def __post_init__(self):
        for name in ("cd0", "k", "cl0"):
            values = getattr(self, name)
            object.__setattr__(self, name, tuple(float(v) for v in values))
            if len(getattr(self, name)) != N_FLAP:
                raise ValueError(f"{name} needs one entry per flap setting ({N_FLAP})")
        if min(self.cd0) <= 0 or min(self.k) <= 0:
            raise ValueError("drag polar coefficients must be positive")
        for name in ("reference_mass", "wing_area", "cl_alpha", "max_thrust_sls",
                     "tsfc_base", "vcas_min", "vcas_max", "mach_max", "max_altitude"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and positive")
        if not 0 < self.idle_fraction < 1:
            raise ValueError("idle_fraction must lie in (0, 1)")

    def scaled(self, drag: float = 1.0, thrust: float = 1.0, tsfc: float = 1.0) -> "PerformanceConfig":
        return dataclasses.replace(
            self,
            cd0=tuple(c * drag for c in self.cd0),
            k=tuple(c * drag for c in self.k),
            cd0_gear=self.cd0_gear * drag,
            cd0_speedbrake=self.cd0_speedbrake * drag,
            max_thrust_sls=self.max_thrust_sls * thrust,
            tsfc_base=self.tsfc_base * tsfc,
            tsfc_mach=self.tsfc_mach * tsfc,
        )

    def perturbed(self, fraction: float) -> "PerformanceConfig":
        """Drag up, thrust and TSFC down by ``fraction`` (a factory-new, optimistic model)."""
        return self.scaled(drag=1.0 + fraction, thrust=1.0 - fraction, tsfc=1.0 - fraction)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("cd0", "k", "cl0"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PerformanceConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown performance config keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "PerformanceConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def air_density(h, T_oat):
    return atm.isa_pressure(h) / (atm.R_AIR * T_oat)


def max_thrust(cfg: PerformanceConfig, h, T_oat):
    return cfg.max_thrust_sls * (air_density(h, T_oat) / atm.RHO0) ** cfg.thrust_lapse


def idle_thrust(cfg: PerformanceConfig, h, T_oat):
    return cfg.idle_fraction * max_thrust(cfg, h, T_oat)


def lift_coefficient(cfg, h, T_oat, v_tas, m, gamma):
    q = 0.5 * air_density(h, T_oat) * v_tas * v_tas
    return m * atm.G0 * math.cos(gamma) / (q * cfg.wing_area)


def drag(cfg: PerformanceConfig, h, T_oat, v_tas, m, gamma, flap=0, gear=0, speed_brake=0):
    """Aerodynamic drag [N] with flap/gear/speed-brake increments."""
    f = int(flap)
    q = 0.5 * air_density(h, T_oat) * v_tas * v_tas
    cl = m * atm.G0 * math.cos(gamma) / (q * cfg.wing_area)
    cd = cfg.cd0[f] + cfg.k[f] * cl * cl + gear * cfg.cd0_gear + speed_brake * cfg.cd0_speedbrake
    return q * cfg.wing_area * cd


def tsfc(cfg: PerformanceConfig, mach):
    return cfg.tsfc_base + cfg.tsfc_mach * mach


def fuel_flow(cfg: PerformanceConfig, thrust, mach, multiplier: float = 1.0):
    return multiplier * tsfc(cfg, mach) * max(thrust, 0.0)


def angle_of_attack(cfg: PerformanceConfig, cl, flap=0):
    return (cl - cfg.cl0[int(flap)]) / cfg.cl_alpha


def n1_from_thrust(cfg: PerformanceConfig, thrust, h, T_oat):
    frac = thrust / max_thrust(cfg, h, T_oat)
    scaled = (frac - cfg.idle_fraction) / (1.0 - cfg.idle_fraction)
    n1 = cfg.n1_idle + (cfg.n1_max - cfg.n1_idle) * scaled + cfg.n1_alt_gain * h / 11000.0
    return float(np.clip(n1, 0.0, 110.0))
