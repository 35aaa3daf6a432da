"""Model-driven benchmark: routine selection plus point-mass propagation.

Every 4 s interval one of four trajectory-control routines is chosen from the
current state and the recorded autopilot targets; the routine fixes thrust and
a flight-path-angle target, and the point-mass equations advance the state.
The simulated state is fed back into the next interval.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import atmosphere as atm
from . import performance as perf
from .data import DT, CSV_COLUMNS, ContextVector, ControlVector, FlightSeries

logger = logging.getLogger(__name__)


class RoutineKind(enum.Enum):
    ACC_DEC = "accDec_time"
    CONSTANT_SPEED_LEVEL = "constantSpeedLevel"
    CONSTANT_SPEED_RATING = "constantSpeedRating_time"
    CONSTANT_SPEED_ROCD = "constantSpeedROCD_time"


@dataclass(frozen=True)
class Guidance:
    """Capture tolerances and autopilot gains shared by all routines."""

    alt_tolerance: float = 40.0  # m, alt_gain * 40 m is about the 1.27 m/s phase threshold
    speed_tolerance: float = 2.0  # m/s CAS
    speed_gain: float = 0.05  # 1/s
    max_accel: float = 0.6  # m/s^2
    alt_gain: float = 0.03  # 1/s, about 1/(4 tau_gamma): critically damped capture
    level_gamma_max: float = 0.12  # rad
    tau_gamma: float = 8.0  # s
    max_gamma_rate: float = 0.01  # rad/s
    gamma_min: float = -0.12
    gamma_max: float = 0.20
    energy_share: float = 0.3  # fraction of excess power spent on speed when not level


@dataclass(frozen=True)
class BaselineState:
    h: float
    d: float
    gamma: float
    v_tas: float
    m: float
    t_oat: float = atm.T0

    @property
    def mach(self) -> float:
        return float(atm.mach(self.v_tas, self.t_oat))

    @property
    def v_cas(self) -> float:
        return float(atm.tas_to_cas(self.v_tas, self.h, self.t_oat))


@dataclass
class StepInfo:
    routine: RoutineKind
    thrust: float
    drag: float
    fuel_flow: float
    alpha: float
    theta: float
    n1: float
    vz: float
    gs: float
    mach: float
    cas: float
    flags: list[str] = field(default_factory=list)


def capture_band(state: BaselineState, guidance: Guidance = Guidance()) -> float:
    """Altitude error [m] below which the level routine takes over.

    The band grows with vertical speed so that the capture starts on the
    exponential path ``vz = alt_gain * dh`` instead of overshooting.
    """
    vz = abs(state.v_tas * math.sin(state.gamma))
    return max(guidance.alt_tolerance, vz / guidance.alt_gain)


def select_routine(state: BaselineState, controls: ControlVector,
                   guidance: Guidance = Guidance()) -> RoutineKind:
    if abs(controls.h_sel - state.h) <= capture_band(state, guidance):
        return RoutineKind.CONSTANT_SPEED_LEVEL
    if abs(controls.v_sel - state.v_cas) > guidance.speed_tolerance:
        return RoutineKind.ACC_DEC
    if controls.vz_sel != 0.0:
        return RoutineKind.CONSTANT_SPEED_ROCD
    return RoutineKind.CONSTANT_SPEED_RATING


def _clip(x, lo, hi):
    return lo if x < lo else hi if x > hi else x


def _asin(s):
    return math.asin(_clip(s, -0.99, 0.99))


def command(state: BaselineState, routine: RoutineKind, controls: ControlVector,
            context: ContextVector, cfg: perf.PerformanceConfig,
            guidance: Guidance = Guidance()) -> tuple[float, float, float]:
    """Thrust [N], flight-path-angle target [rad] and drag [N] for one interval."""
    h, v, m, gamma = state.h, state.v_tas, state.m, state.gamma
    t_oat = context.t_oat
    weight = m * atm.G0
    d = perf.drag(cfg, h, t_oat, v, m, gamma, controls.flap, controls.gear, controls.speed_brake)
    t_max = perf.max_thrust(cfg, h, t_oat)
    t_idle = cfg.idle_fraction * t_max
    v_target = float(atm.cas_to_tas(controls.v_sel, h, t_oat))
    a_des = _clip(guidance.speed_gain * (v_target - v), -guidance.max_accel, guidance.max_accel)
    dh = controls.h_sel - h
    climbing = dh > 0

    if routine is RoutineKind.CONSTANT_SPEED_LEVEL:
        g_target = _clip(guidance.alt_gain * dh / v, -guidance.level_gamma_max,
                         guidance.level_gamma_max)
        thrust = _clip(d + weight * math.sin(gamma) + m * a_des, t_idle, t_max)
        return thrust, g_target, d
    if routine is RoutineKind.CONSTANT_SPEED_ROCD:
        g_target = _asin(controls.vz_sel / v)
        thrust = _clip(d + weight * math.sin(gamma) + m * a_des, t_idle, t_max)
        return thrust, _clip(g_target, guidance.gamma_min, guidance.gamma_max), d

    if routine is RoutineKind.CONSTANT_SPEED_RATING:
        thrust = t_max if climbing else t_idle
        s = (thrust - d - m * a_des) / weight
    else:  # ACC_DEC
        accelerate = v_target > v
        share = guidance.energy_share
        if climbing:
            thrust = t_max
            s = ((1 - share) * (thrust - d) if accelerate
                 else thrust - d + m * guidance.max_accel) / weight
        else:
            thrust = t_idle
            s = (thrust - d - m * guidance.max_accel if accelerate
                 else (1 - share) * (thrust - d)) / weight
    s = max(s, 0.0) if climbing else min(s, 0.0)
    return thrust, _clip(_asin(s), guidance.gamma_min, guidance.gamma_max), d


def _tas_limit(cas, h, t_oat) -> float:
    try:
        return float(atm.cas_to_tas(cas, h, t_oat))
    except atm.AtmosphereDomainError:
        return math.inf


def advance(state: BaselineState, routine: RoutineKind, controls: ControlVector,
            context: ContextVector, cfg: perf.PerformanceConfig,
            guidance: Guidance = Guidance(), dt: float = DT, *,
            thrust_scale: float = 1.0, gamma_offset: float = 0.0,
            fuel_multiplier: float = 1.0,
            next_t_oat: float | None = None) -> tuple[BaselineState, StepInfo]:
    """Propagate one interval with explicit Euler; returns the next state and
    the intermediates of the current record."""
    thrust, g_target, d = command(state, routine, controls, context, cfg, guidance)
    thrust *= thrust_scale
    g_target += gamma_offset
    h, v, m, gamma = state.h, state.v_tas, state.m, state.gamma
    t_oat = context.t_oat

    accel = (thrust - d) / m - atm.G0 * math.sin(gamma)
    gamma_rate = _clip((g_target - gamma) / guidance.tau_gamma,
                       -guidance.max_gamma_rate, guidance.max_gamma_rate)
    mach = float(atm.mach(v, t_oat))
    ff = perf.fuel_flow(cfg, thrust, mach, fuel_multiplier)
    cl = perf.lift_coefficient(cfg, h, t_oat, v, m, gamma)
    alpha = perf.angle_of_attack(cfg, cl, controls.flap)
    vz = v * math.sin(gamma)
    gs = v - context.wind_par
    info = StepInfo(
        routine=routine, thrust=thrust, drag=d, fuel_flow=ff, alpha=alpha,
        theta=alpha + gamma, n1=perf.n1_from_thrust(cfg, thrust, h, t_oat),
        vz=vz, gs=gs, mach=mach, cas=float(atm.tas_to_cas(v, h, t_oat)),
    )

    h_next = h + dt * vz
    v_next = v + dt * accel
    t_next = t_oat if next_t_oat is None else next_t_oat
    # envelope: clamp and flag
    v_lo = _tas_limit(cfg.vcas_min, h_next, t_next)
    v_hi = min(_tas_limit(cfg.vcas_max, h_next, t_next),
               cfg.mach_max * float(atm.speed_of_sound(t_next)))
    if v_next < v_lo:
        info.flags.append("below_min_speed")
        v_next = v_lo
    elif v_next > v_hi:
        info.flags.append("above_max_speed")
        v_next = v_hi
    nxt = BaselineState(
        h=h_next,
        d=state.d + dt * gs,
        gamma=gamma + dt * gamma_rate,
        v_tas=v_next,
        m=m - dt * ff,
        t_oat=t_next,
    )
    return nxt, info


def _controls(ref: FlightSeries, k: int) -> ControlVector:
    return ControlVector(float(ref["sel_alt"][k]), float(ref["sel_spd"][k]),
                         float(ref["sel_vs"][k]), int(ref["flap"][k]), int(ref["gear"][k]),
                         int(ref["spdbrk"][k]))


def _context(ref: FlightSeries, k: int) -> ContextVector:
    return ContextVector(float(ref["oat"][k]), float(ref["wind_par"][k]),
                         float(ref["wind_perp"][k]))


def record_columns(states: list[BaselineState], infos: list[StepInfo],
                   ref: FlightSeries) -> dict[str, np.ndarray]:
    n = len(infos)
    cols = {name: np.asarray(ref[name][:n], dtype=float)
            for name in ("time_s", "sel_alt", "sel_spd", "sel_vs", "flap", "gear", "spdbrk",
                         "oat", "wind_par", "wind_perp")}
    cols.update({
        "alt": np.array([s.h for s in states[:n]]),
        "dist": np.array([s.d for s in states[:n]]),
        "fpa": np.array([s.gamma for s in states[:n]]),
        "tas": np.array([s.v_tas for s in states[:n]]),
        "mass": np.array([s.m for s in states[:n]]),
        "mach": np.array([i.mach for i in infos]),
        "cas": np.array([i.cas for i in infos]),
        "vs": np.array([i.vz for i in infos]),
        "gs": np.array([i.gs for i in infos]),
        "aoa": np.array([i.alpha for i in infos]),
        "pitch": np.array([i.theta for i in infos]),
        "n1": np.array([i.n1 for i in infos]),
        "fuel_flow": np.array([i.fuel_flow for i in infos]),
    })
    return cols


def simulate_flight(reference: FlightSeries, cfg: perf.PerformanceConfig,
                    guidance: Guidance = Guidance(), steps: int | None = None) -> FlightSeries:
    """Replay a flight from its first record with the recorded targets and context.

    ``steps`` defaults to ``len(reference) - 1`` so the output has the reference
    horizon. A propagation failure truncates the output; ``meta['failure']``
    then holds the step index and reason.
    """
    if steps is None:
        steps = len(reference) - 1
    if steps < 0 or steps > len(reference) - 1:
        raise ValueError(f"steps must lie in [0, {len(reference) - 1}]")
    state = BaselineState(float(reference["alt"][0]), float(reference["dist"][0]),
                          float(reference["fpa"][0]), float(reference["tas"][0]),
                          float(reference["mass"][0]), float(reference["oat"][0]))
    states, infos, routines, flags = [state], [], [], []
    failure = None
    for k in range(steps + 1):
        controls, context = _controls(reference, k), _context(reference, k)
        next_t = float(reference["oat"][k + 1]) if k + 1 < len(reference) else None
        try:
            routine = select_routine(state, controls, guidance)
            nxt, info = advance(state, routine, controls, context, cfg, guidance,
                                reference.dt, next_t_oat=next_t)
            if not all(math.isfinite(x) for x in (nxt.h, nxt.v_tas, nxt.m, nxt.gamma)):
                raise FloatingPointError("non-finite state")
        except (ValueError, FloatingPointError, ZeroDivisionError) as exc:
            failure = {"step": k, "reason": str(exc)}
            logger.warning("baseline %s failed at step %d: %s", reference.tag, k, exc)
            break
        infos.append(info)
        routines.append(routine.value)
        flags.extend(f"{k}:{f}" for f in info.flags)
        if k < steps:
            states.append(nxt)
            state = nxt
    n = len(infos)
    cols = record_columns(states[:n], infos, reference)
    meta = {"routines": routines, "envelope_flags": flags}
    if failure is not None:
        meta["failure"] = failure
    return FlightSeries(reference.tag, cols, reference.dt, reference.airframe, meta)
