"""ISA atmosphere, unit conversions and airspeed relations.

All functions accept floats or numpy arrays. ``cas_from_pressure`` only uses
arithmetic operators so it also works on autodiff tensors.
"""

from __future__ import annotations

import math

import numpy as np

GAMMA_AIR = 1.4
R_AIR = 287.05287  # J/(kg K)
G0 = 9.80665  # m/s^2

T0 = 288.15  # K
P0 = 101325.0  # Pa
RHO0 = P0 / (R_AIR * T0)
A0 = math.sqrt(GAMMA_AIR * R_AIR * T0)
LAPSE = -0.0065  # K/m
H_TROP = 11000.0
T_TROP = T0 + LAPSE * H_TROP
P_TROP = P0 * (T_TROP / T0) ** (-G0 / (R_AIR * LAPSE))

H_MIN = -2000.0
H_MAX = 20000.0

FT = 0.3048
KT = 1852.0 / 3600.0
FPM = 0.3048 / 60.0
DEG = math.pi / 180.0
NM = 1852.0
KGH = 1.0 / 3600.0
CELSIUS_OFFSET = 273.15


class AtmosphereDomainError(ValueError):
    """Raised when an input lies outside the validity range of a relation."""


# name -> (factor, offset); SI = value * factor + offset
UNITS: dict[str, tuple[float, float]] = {
    "m": (1.0, 0.0),
    "ft": (FT, 0.0),
    "nm": (NM, 0.0),
    "m/s": (1.0, 0.0),
    "kt": (KT, 0.0),
    "ft/min": (FPM, 0.0),
    "rad": (1.0, 0.0),
    "deg": (DEG, 0.0),
    "K": (1.0, 0.0),
    "degC": (1.0, CELSIUS_OFFSET),
    "kg": (1.0, 0.0),
    "kg/s": (1.0, 0.0),
    "kg/h": (KGH, 0.0),
    "s": (1.0, 0.0),
    "-": (1.0, 0.0),
    "%": (1.0, 0.0),
}


def to_si(value, unit: str):
    try:
        factor, offset = UNITS[unit]
    except KeyError:
        raise ValueError(f"unknown unit {unit!r}") from None
    return value * factor + offset


def from_si(value, unit: str):
    try:
        factor, offset = UNITS[unit]
    except KeyError:
        raise ValueError(f"unknown unit {unit!r}") from None
    return (value - offset) / factor


def _check_positive(name, value):
    if np.any(np.asarray(value) <= 0):
        raise AtmosphereDomainError(f"{name} must be positive")


def speed_of_sound(T_oat):
    """Local speed of sound [m/s] for static temperature ``T_oat`` [K]."""
    _check_positive("temperature", T_oat)
    return np.sqrt(GAMMA_AIR * R_AIR * np.asarray(T_oat, dtype=float))


def isa_temperature(h):
    h = np.asarray(h, dtype=float)
    return np.where(h <= H_TROP, T0 + LAPSE * h, T_TROP)


def _isa_pressure_unchecked(h):
    h = np.asarray(h, dtype=float)
    tropo = P0 * np.power(np.maximum(1.0 + LAPSE * np.minimum(h, H_TROP) / T0, 1e-12),
                          -G0 / (R_AIR * LAPSE))
    strato = P_TROP * np.exp(-G0 * (h - H_TROP) / (R_AIR * T_TROP))
    return np.where(h <= H_TROP, tropo, strato)


def isa_pressure(h):
    """ISA static pressure [Pa] at geopotential altitude ``h`` [m].

    Two segments: linear lapse up to 11 km, isothermal above. Valid on
    [-2000, 20000] m.
    """
    h_arr = np.asarray(h, dtype=float)
    if np.any(h_arr < H_MIN) or np.any(h_arr > H_MAX) or np.any(~np.isfinite(h_arr)):
        raise AtmosphereDomainError(f"altitude outside [{H_MIN}, {H_MAX}] m")
    return _isa_pressure_unchecked(h_arr)


def isa_pressure_derivative(h):
    """d(isa_pressure)/dh, i.e. -rho_isa * g0."""
    h = np.asarray(h, dtype=float)
    return -_isa_pressure_unchecked(h) * G0 / (R_AIR * isa_temperature(h))


def density(p, T_oat):
    _check_positive("temperature", T_oat)
    return p / (R_AIR * np.asarray(T_oat, dtype=float))


def mach(v_tas, T_oat):
    return v_tas / speed_of_sound(T_oat)


def cas_from_pressure(v_tas, p, T_oat):
    """CAS from TAS given static pressure and temperature.

    Impact pressure from the subsonic compressible relation, then inverted at
    sea-level ISA conditions.
    """
    k = (GAMMA_AIR - 1.0) / GAMMA_AIR
    rho = p / (R_AIR * T_oat)
    qc = p * ((1.0 + 0.5 * k * rho * v_tas * v_tas / p) ** (1.0 / k) - 1.0)
    return (2.0 / k * P0 / RHO0 * ((qc / P0 + 1.0) ** k - 1.0)) ** 0.5


def tas_to_cas(v_tas, h, T_oat):
    """Calibrated airspeed [m/s] for true airspeed ``v_tas`` at altitude ``h``."""
    v = np.asarray(v_tas, dtype=float)
    if np.any(v < 0):
        raise AtmosphereDomainError("negative airspeed")
    if np.any(v >= speed_of_sound(T_oat)):
        raise AtmosphereDomainError("supersonic airspeed")
    return cas_from_pressure(v, isa_pressure(h), np.asarray(T_oat, dtype=float))


def cas_to_tas(v_cas, h, T_oat):
    """True airspeed [m/s] for calibrated airspeed ``v_cas`` at altitude ``h``."""
    v = np.asarray(v_cas, dtype=float)
    if np.any(v < 0):
        raise AtmosphereDomainError("negative airspeed")
    k = (GAMMA_AIR - 1.0) / GAMMA_AIR
    p = isa_pressure(h)
    qc = P0 * ((1.0 + 0.5 * k * RHO0 * v * v / P0) ** (1.0 / k) - 1.0)
    m2 = 2.0 / (GAMMA_AIR - 1.0) * ((qc / p + 1.0) ** k - 1.0)
    if np.any(m2 >= 1.0):
        raise AtmosphereDomainError("supersonic airspeed")
    return np.sqrt(m2) * speed_of_sound(T_oat)


def mach_to_cas(m, h, T_oat):
    return tas_to_cas(m * speed_of_sound(T_oat), h, T_oat)
