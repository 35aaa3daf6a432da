"""Synthetic recorder-like flights from a scripted profile controller.

A flight-profile controller sets autopilot targets (selected altitude, speed and
vertical speed, flaps, gear, speed brake) from the current state; the point-mass
model in :mod:`nodefdm.baseline` then flies them, with seeded filtered
perturbations on thrust and path angle and a per-airframe fuel-flow multiplier.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import atmosphere as atm
from . import performance as perf
from .baseline import BaselineState, Guidance, advance, record_columns, select_routine
from .data import DT, ContextVector, ControlVector, FlightSeries, write_csv

logger = logging.getLogger(__name__)

KT250 = 250 * atm.KT
FL100 = 10000 * atm.FT


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class FlightScript:
    takeoff_mass: float = 66000.0
    cruise_level: float = 10600.0
    climb_cas: float = 150.0
    cruise_mach: float = 0.78
    descent_cas: float = 145.0
    step_climbs: tuple[tuple[float, float], ...] = ()  # (distance [m], new level [m])
    descent_distance: float = 550e3
    descent_levels: tuple[float, ...] = (FL100, 900.0)  # intermediate level-offs
    level_hold: int = 20  # records held at each intermediate level
    vs_descent: float = 0.0  # selected V/S on the final segment, 0 = not used
    approach_cas: float = 80.0
    flap_cas: tuple[float, ...] = (110.0, 100.0, 92.0, 86.0)  # extension thresholds 1..4
    wind_par: tuple[float, float] = (0.0, 0.0)  # headwind at 0 m and at 11 km [m/s]
    wind_perp: tuple[float, float] = (0.0, 0.0)
    isa_offset: float = 0.0  # K
    initial_altitude: float = 500.0
    final_altitude: float = 500.0
    seed: int = 0
    noise: bool = True
    thrust_noise: float = 0.02
    gamma_noise: float = 0.002
    noise_corr: float = 0.9

    def wind(self, h: float) -> tuple[float, float]:
        x = min(max(h, 0.0), 11000.0) / 11000.0
        return (self.wind_par[0] + (self.wind_par[1] - self.wind_par[0]) * x,
                self.wind_perp[0] + (self.wind_perp[1] - self.wind_perp[0]) * x)

    def temperature(self, h: float) -> float:
        return float(atm.isa_temperature(h)) + self.isa_offset

    def check(self, cfg: perf.PerformanceConfig) -> None:
        levels = [self.cruise_level] + [lvl for _, lvl in self.step_climbs]
        for level in levels:
            if level > cfg.max_altitude:
                raise GenerationError(
                    f"cruise level {level:.0f} m exceeds ceiling {cfg.max_altitude:.0f} m")
        if self.cruise_level <= FL100:
            raise GenerationError("cruise level must be above 10000 ft")
        if self.cruise_mach > cfg.mach_max:
            raise GenerationError(f"cruise Mach {self.cruise_mach} exceeds Mach limit")
        if not cfg.vcas_min < self.approach_cas < self.descent_cas <= cfg.vcas_max:
            raise GenerationError("speed schedule outside CAS envelope")
        if self.climb_cas > cfg.vcas_max:
            raise GenerationError("climb CAS exceeds CAS envelope")
        if list(self.flap_cas) != sorted(self.flap_cas, reverse=True):
            raise GenerationError("flap schedule must be monotone in CAS")
        dists = [d for d, _ in self.step_climbs]
        if dists != sorted(dists) or any(d >= self.descent_distance for d in dists):
            raise GenerationError("step climbs must be ordered and precede descent")
        if list(self.descent_levels) != sorted(self.descent_levels, reverse=True):
            raise GenerationError("descent levels must decrease")


@dataclass
class _Controller:
    script: FlightScript
    stage: str = "climb"
    level: float = 0.0
    targets: list[float] = field(default_factory=list)
    hold: int = 0
    steps_done: int = 0
    flap: int = 1
    gear: int = 0
    speed_brake: int = 0
    stalled: int = 0

    def __post_init__(self):
        self.level = self.script.cruise_level

    def cas_for_mach(self, h: float, t_oat: float) -> float:
        return float(atm.mach_to_cas(self.script.cruise_mach, h, t_oat))

    def update(self, s: BaselineState, cas: float, guidance: Guidance) -> tuple[ControlVector, str]:
        sc = self.script
        tol = guidance.alt_tolerance
        vz_sel = 0.0
        if self.stage == "climb":
            if abs(s.h - self.level) <= tol:
                self.stage = "cruise"
        if self.stage == "cruise":
            if self.steps_done < len(sc.step_climbs) and s.d >= sc.step_climbs[self.steps_done][0]:
                self.level = sc.step_climbs[self.steps_done][1]
                self.steps_done += 1
                self.stage = "climb"
            elif s.d >= sc.descent_distance:
                self.stage = "descent"
                self.targets = [lvl for lvl in sc.descent_levels if lvl < s.h - tol]
                self.targets.append(sc.final_altitude - 200.0)
        if self.stage == "descent" and len(self.targets) > 1:
            if abs(s.h - self.targets[0]) <= tol:
                self.hold += 1
                if self.hold > sc.level_hold:
                    self.targets.pop(0)
                    self.hold = 0

        if self.stage in ("climb", "cruise"):
            h_sel = self.level
            if s.h < FL100:
                v_sel = KT250
            else:
                v_sel = min(sc.climb_cas, self.cas_for_mach(s.h, s.t_oat))
            if self.flap > 0 and (cas > sc.flap_cas[0] or s.h > 1500.0):
                self.flap = 0
        else:
            h_sel = self.targets[0]
            if s.h < 1500.0 and len(self.targets) == 1:
                v_sel = sc.approach_cas
            elif s.h < FL100 + 300.0:
                v_sel = KT250
            else:
                v_sel = min(sc.descent_cas, self.cas_for_mach(s.h, s.t_oat))
            if len(self.targets) == 1 and sc.vs_descent != 0.0:
                vz_sel = sc.vs_descent
            # flaps only extend during descent
            if s.h < 3000.0:
                for i, threshold in enumerate(sc.flap_cas):
                    if cas < threshold and i + 1 > self.flap and (i < 3 or s.h < 900.0):
                        self.flap = i + 1
            if self.flap >= 3:
                self.gear = 1
            if cas - v_sel > 8.0 and s.h > 1000.0:
                self.speed_brake = 1
            elif cas - v_sel < 2.0 or s.h <= 1000.0:
                self.speed_brake = 0

        if self.stage == "cruise" or abs(s.h - h_sel) <= tol:
            phase = "LEVEL"
        elif h_sel > s.h:
            phase = "CLIMB"
        else:
            phase = "DESCENT"
        return ControlVector(h_sel, v_sel, vz_sel, self.flap, self.gear, self.speed_brake), phase


def generate_flight(cfg: perf.PerformanceConfig, script: FlightScript, *,
                    tag: str = "synthetic", airframe: str = "",
                    fuel_multiplier: float = 1.0, guidance: Guidance = Guidance(),
                    max_records: int = 6000) -> FlightSeries:
    """Fly ``script`` from ~500 m after take-off to ~500 m before landing at 4 s steps.

    ``meta['phase']`` holds the controller's own climb/level/descent tags.
    """
    script.check(cfg)
    rng = np.random.default_rng(script.seed)
    h0 = script.initial_altitude
    t0 = script.temperature(h0)
    state = BaselineState(h0, 0.0, 0.06, float(atm.cas_to_tas(85.0, h0, t0)),
                          script.takeoff_mass, t0)
    ctl = _Controller(script)
    noise_t = noise_g = 0.0
    corr = script.noise_corr
    innov = math.sqrt(1.0 - corr * corr)

    states, infos, rows, phases = [state], [], [], []
    while True:
        if len(infos) >= max_records:
            raise GenerationError("flight did not terminate within the record limit")
        w_par, w_perp = script.wind(state.h)
        context = ContextVector(state.t_oat, w_par, w_perp)
        cas = float(atm.tas_to_cas(state.v_tas, state.h, state.t_oat))
        controls, phase = ctl.update(state, cas, guidance)
        if script.noise:
            noise_t = corr * noise_t + innov * script.thrust_noise * rng.standard_normal()
            noise_g = corr * noise_g + innov * script.gamma_noise * rng.standard_normal()
        routine = select_routine(state, controls, guidance)
        h_next_guess = state.h + DT * state.v_tas * math.sin(state.gamma)
        nxt, info = advance(state, routine, controls, context, cfg, guidance, DT,
                            thrust_scale=1.0 + noise_t, gamma_offset=noise_g,
                            fuel_multiplier=fuel_multiplier,
                            next_t_oat=script.temperature(h_next_guess))
        if info.flags:
            raise GenerationError(f"envelope violated at record {len(infos)}: {info.flags}")
        infos.append(info)
        rows.append((controls, context))
        phases.append(phase)

        if ctl.stage == "climb" and abs(state.h - ctl.level) > guidance.alt_tolerance:
            ctl.stalled = ctl.stalled + 1 if info.vz < 0.3 else 0
            if ctl.stalled > 75:
                raise GenerationError(
                    f"climb stalled at {state.h:.0f} m below level {ctl.level:.0f} m")
        if ctl.stage == "descent" and nxt.h <= script.final_altitude:
            break
        if nxt.h < 0.0:
            raise GenerationError("aircraft descended below ground")
        states.append(nxt)
        state = nxt

    n = len(infos)
    ref_cols = {
        "time_s": DT * np.arange(n),
        "sel_alt": np.array([c.h_sel for c, _ in rows]),
        "sel_spd": np.array([c.v_sel for c, _ in rows]),
        "sel_vs": np.array([c.vz_sel for c, _ in rows]),
        "flap": np.array([c.flap for c, _ in rows], dtype=float),
        "gear": np.array([c.gear for c, _ in rows], dtype=float),
        "spdbrk": np.array([c.speed_brake for c, _ in rows], dtype=float),
        "oat": np.array([x.t_oat for _, x in rows]),
        "wind_par": np.array([x.wind_par for _, x in rows]),
        "wind_perp": np.array([x.wind_perp for _, x in rows]),
    }
    cols = record_columns(states[:n], infos, ref_cols)
    meta = {"phase": phases, "routines": [i.routine.value for i in infos],
            "fuel_multiplier": fuel_multiplier}
    return FlightSeries(tag, cols, DT, airframe, meta)


def sample_script(rng: np.random.Generator, noise: bool = True) -> FlightScript:
    """Draw a plausible medium-haul profile."""
    cruise = float(rng.uniform(9000.0, 11300.0))
    descent_distance = float(rng.uniform(380e3, 620e3))
    steps: tuple = ()
    if rng.random() < 0.25 and cruise < 11000.0:
        steps = ((float(rng.uniform(0.45, 0.75)) * descent_distance, cruise + 600.0),)
    levels: tuple = (FL100, 900.0) if rng.random() < 0.5 else (float(rng.uniform(1800, 2800)),)
    if rng.random() < 0.2:
        levels = ()
    return FlightScript(
        takeoff_mass=float(rng.uniform(58000.0, 71000.0)),
        cruise_level=cruise,
        climb_cas=float(rng.uniform(143.0, 155.0)),
        cruise_mach=float(rng.uniform(0.76, 0.79)),
        descent_cas=float(rng.uniform(138.0, 150.0)),
        step_climbs=steps,
        descent_distance=descent_distance,
        descent_levels=levels,
        level_hold=int(rng.integers(10, 40)),
        vs_descent=float(-rng.uniform(4.0, 6.0)) if rng.random() < 0.4 else 0.0,
        wind_par=(float(rng.normal(0.0, 3.0)), float(rng.normal(0.0, 15.0))),
        wind_perp=(float(rng.normal(0.0, 3.0)), float(rng.normal(0.0, 15.0))),
        isa_offset=float(rng.uniform(-10.0, 15.0)),
        seed=int(rng.integers(2**31)),
        noise=noise,
    )


@dataclass(frozen=True)
class Airframe:
    tag: str
    fuel_multiplier: float
    drag_scale: float


AIRFRAMES_PER_SPLIT = {"train": 5, "val": 2, "test": 2}


def make_airframes(rng: np.random.Generator, split: str, n: int) -> list[Airframe]:
    out = []
    for i in range(n):
        out.append(Airframe(f"SYN-{split.upper()}-{i + 1:02d}",
                            round(float(rng.uniform(1.0, 1.06)), 4),
                            1.03 if i % 2 else 0.97))
    return out


def generate_dataset(out_dir, counts: dict[str, int], seed: int = 0,
                     cfg: perf.PerformanceConfig | None = None,
                     noise: bool = True) -> Path:
    """Write flight CSVs, ``manifest.json``, ``airframes.json`` and the nominal
    ``performance_config.json`` under ``out_dir``; returns the manifest path.

    Airframes never repeat across splits. Each airframe carries a fuel-flow
    multiplier (engine ageing) and one of two drag variants (+/-3 %).
    """
    cfg = cfg or perf.PerformanceConfig()
    if counts.get("train", 0) < 1:
        raise ValueError("empty training split")
    for split, n in counts.items():
        if n < 1:
            raise ValueError(f"empty {split} split")
    out = Path(out_dir)
    (out / "flights").mkdir(parents=True, exist_ok=True)
    root = np.random.default_rng(seed)
    manifest = {"version": 1, "seed": seed, "dt": DT, "splits": {}}
    airframe_table = {}
    for s_idx, split in enumerate(("train", "val", "test")):
        n = counts.get(split, 0)
        frames = make_airframes(root, split, min(n, AIRFRAMES_PER_SPLIT[split]))
        entries = []
        for i in range(n):
            frame = frames[i % len(frames)]
            frng = np.random.default_rng([seed, s_idx, i])
            tag = f"{split}_{i:04d}"
            for attempt in range(20):
                script = sample_script(frng, noise=noise)
                try:
                    flight = generate_flight(cfg.scaled(drag=frame.drag_scale), script,
                                             tag=tag, airframe=frame.tag,
                                             fuel_multiplier=frame.fuel_multiplier)
                    break
                except GenerationError as exc:
                    logger.info("%s: script rejected (%s), redrawing", tag, exc)
            else:
                raise GenerationError(f"{tag}: no feasible script after 20 draws")
            rel = f"flights/{tag}.csv"
            write_csv(flight, out / rel)
            entries.append({"file": rel, "tag": tag, "airframe": frame.tag,
                            "records": len(flight)})
        manifest["splits"][split] = entries
        airframe_table.update({f.tag: asdict(f) for f in frames})
    cfg.save(out / "performance_config.json")
    (out / "airframes.json").write_text(json.dumps(airframe_table, indent=2, sort_keys=True) + "\n")
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
