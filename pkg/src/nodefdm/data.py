"""Flight records, CSV ingestion, sequence slicing and normalisation statistics."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from . import atmosphere as atm

logger = logging.getLogger(__name__)

DT = 4.0
SEQUENCE_LENGTH = 60

STATE = ("alt", "dist", "fpa", "tas", "mass")
CONTROL = ("sel_alt", "sel_spd", "sel_vs", "flap", "gear", "spdbrk")
CONTEXT = ("oat", "wind_par", "wind_perp")
TRAJECTORY = ("mach", "cas", "vs", "gs", "dh_sel", "dv_sel")
ANGLES = ("aoa", "pitch")
ENGINE = ("n1", "fuel_flow")
INTERMEDIATE = TRAJECTORY + ANGLES + ENGINE
DISCRETE = ("flap", "gear", "spdbrk")

# column order of the flight CSV; dh_sel and dv_sel are derived on load
CSV_COLUMNS = (
    "time_s", "alt", "dist", "fpa", "tas", "mass",
    "sel_alt", "sel_spd", "sel_vs", "flap", "gear", "spdbrk",
    "oat", "wind_par", "wind_perp",
    "mach", "cas", "vs", "gs", "aoa", "pitch", "n1", "fuel_flow",
)
SI_UNITS = {
    "time_s": "s", "alt": "m", "dist": "m", "fpa": "rad", "tas": "m/s", "mass": "kg",
    "sel_alt": "m", "sel_spd": "m/s", "sel_vs": "m/s", "flap": "-", "gear": "-",
    "spdbrk": "-", "oat": "K", "wind_par": "m/s", "wind_perp": "m/s", "mach": "-",
    "cas": "m/s", "vs": "m/s", "gs": "m/s", "aoa": "rad", "pitch": "rad", "n1": "%",
    "fuel_flow": "kg/s",
}
# native recorder units, usable in a schema sidecar
QAR_UNITS = {
    "time_s": "s", "alt": "ft", "dist": "nm", "fpa": "deg", "tas": "kt", "mass": "kg",
    "sel_alt": "ft", "sel_spd": "kt", "sel_vs": "ft/min", "flap": "-", "gear": "-",
    "spdbrk": "-", "oat": "degC", "wind_par": "kt", "wind_perp": "kt", "mach": "-",
    "cas": "kt", "vs": "ft/min", "gs": "kt", "aoa": "deg", "pitch": "deg", "n1": "%",
    "fuel_flow": "kg/h",
}

MAX_BAD_ROW_FRACTION = 0.01


class FlightDataError(ValueError):
    pass


@dataclass(frozen=True)
class StateVector:
    h: float
    d: float
    gamma: float
    v_tas: float
    m: float


@dataclass(frozen=True)
class ControlVector:
    h_sel: float
    v_sel: float
    vz_sel: float
    flap: int
    gear: int
    speed_brake: int


@dataclass(frozen=True)
class ContextVector:
    t_oat: float
    wind_par: float
    wind_perp: float


@dataclass(frozen=True)
class IntermediateVector:
    mach: float
    v_cas: float
    vz: float
    v_gs: float
    dh_sel: float
    dv_sel: float
    alpha: float
    theta: float
    n1: float
    fuel_flow: float


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class FlightSeries:
    """A whole flight sampled every ``dt`` seconds, stored column-wise in SI."""

    tag: str
    columns: Mapping[str, np.ndarray]
    dt: float = DT
    airframe: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = {k: _frozen(v) for k, v in self.columns.items()}
        if "dh_sel" not in cols and "sel_alt" in cols:
            cols["dh_sel"] = _frozen(cols["sel_alt"] - cols["alt"])
        if "dv_sel" not in cols and "sel_spd" in cols:
            cols["dv_sel"] = _frozen(cols["sel_spd"] - cols["cas"])
        missing = [c for c in CSV_COLUMNS if c not in cols]
        if missing:
            raise FlightDataError(f"flight {self.tag}: missing columns {missing}")
        lengths = {len(v) for v in cols.values()}
        if len(lengths) != 1:
            raise FlightDataError(f"flight {self.tag}: ragged columns")
        object.__setattr__(self, "columns", cols)

    def __len__(self) -> int:
        return len(self.columns["time_s"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def record(self, i: int) -> tuple[StateVector, ControlVector, ContextVector, IntermediateVector]:
        c = {k: float(v[i]) for k, v in self.columns.items()}
        return (
            StateVector(c["alt"], c["dist"], c["fpa"], c["tas"], c["mass"]),
            ControlVector(c["sel_alt"], c["sel_spd"], c["sel_vs"], int(c["flap"]),
                          int(c["gear"]), int(c["spdbrk"])),
            ContextVector(c["oat"], c["wind_par"], c["wind_perp"]),
            IntermediateVector(c["mach"], c["cas"], c["vs"], c["gs"], c["dh_sel"],
                               c["dv_sel"], c["aoa"], c["pitch"], c["n1"], c["fuel_flow"]),
        )

    def slice(self, start: int, stop: int) -> "FlightSeries":
        return FlightSeries(self.tag, {k: v[start:stop] for k, v in self.columns.items()},
                            self.dt, self.airframe, dict(self.meta))

    def replace(self, **columns) -> "FlightSeries":
        cols = dict(self.columns)
        cols.update(columns)
        if "alt" in columns or "sel_alt" in columns:
            cols.pop("dh_sel", None)
        if "cas" in columns or "sel_spd" in columns:
            cols.pop("dv_sel", None)
        return FlightSeries(self.tag, cols, self.dt, self.airframe, dict(self.meta))

    def validate(self, min_records: int = SEQUENCE_LENGTH, mass_tol: float = 1e-6) -> None:
        """Raise :class:`FlightDataError` if the flight breaks a series invariant."""
        n = len(self)
        if n < min_records:
            raise FlightDataError(f"flight {self.tag}: {n} records < {min_records}")
        t = self.columns["time_s"]
        if n > 1 and not np.allclose(np.diff(t), self.dt, rtol=0, atol=1e-6):
            raise FlightDataError(f"flight {self.tag}: non-uniform time spacing")
        if np.any(np.diff(self.columns["dist"]) < -1e-9):
            raise FlightDataError(f"flight {self.tag}: along-track distance decreases")
        if np.any(np.diff(self.columns["mass"]) > mass_tol):
            raise FlightDataError(f"flight {self.tag}: mass increases")
        for name in CSV_COLUMNS:
            if not np.all(np.isfinite(self.columns[name])):
                raise FlightDataError(f"flight {self.tag}: non-finite values in {name}")


@dataclass(frozen=True, eq=False)
class Sequence:
    """A window of consecutive records taken from one flight."""

    tag: str
    start: int
    columns: Mapping[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.columns["time_s"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]


def slice_sequences(flight: FlightSeries, length: int = SEQUENCE_LENGTH) -> list[Sequence]:
    """Cut a flight into non-overlapping windows; the trailing remainder is dropped."""
    n = len(flight) // length
    return [
        Sequence(flight.tag, k * length,
                 {name: col[k * length:(k + 1) * length] for name, col in flight.columns.items()})
        for k in range(n)
    ]


# CSV -------------------------------------------------------------------------

def default_schema(units: Mapping[str, str] | None = None) -> dict:
    units = units or SI_UNITS
    return {"columns": {name: {"source": name, "unit": units[name]} for name in CSV_COLUMNS}}


def load_schema(path) -> dict:
    with open(path) as fh:
        schema = json.load(fh)
    cols = schema.get("columns", {})
    full = default_schema()
    full["columns"].update(cols)
    return full


def ingest_csv(path, schema: dict | None = None, tag: str | None = None,
               airframe: str = "") -> FlightSeries:
    """Read a flight CSV, convert to SI and decimate to the 4 s grid.

    If ``schema`` is omitted, a ``<file>.schema.json`` sidecar is used when present,
    otherwise SI units under the canonical column names are assumed.
    """
    path = Path(path)
    if schema is None:
        sidecar = path.with_suffix(".schema.json")
        schema = load_schema(sidecar) if sidecar.exists() else default_schema()
    colmap = schema["columns"]
    frame = pd.read_csv(path)
    missing = [spec["source"] for name, spec in colmap.items()
               if name in CSV_COLUMNS and spec["source"] not in frame.columns]
    if missing:
        raise FlightDataError(f"{path}: missing columns {missing}")

    raw = {name: atm.to_si(frame[colmap[name]["source"]].to_numpy(dtype=np.float64),
                           colmap[name]["unit"])
           for name in CSV_COLUMNS}
    t = raw["time_s"]
    if np.any(~np.isfinite(t)) or np.any(np.diff(t) <= 0):
        raise FlightDataError(f"{path}: time column is not strictly increasing")

    bad = np.zeros(len(t), dtype=bool)
    for name in CSV_COLUMNS:
        bad |= ~np.isfinite(raw[name])
    n_bad = int(bad.sum())
    if n_bad:
        logger.warning("%s: %d invalid rows", path.name, n_bad)
        if n_bad > MAX_BAD_ROW_FRACTION * len(t):
            raise FlightDataError(
                f"{path}: {n_bad} of {len(t)} rows invalid (> {MAX_BAD_ROW_FRACTION:.0%})")
    good = np.flatnonzero(~bad)
    idx = _decimation_index(t[good], DT)
    keep = good[idx]
    cols = {name: raw[name][keep] for name in CSV_COLUMNS}
    cols["time_s"] = cols["time_s"][0] + DT * np.arange(len(keep))
    flight = FlightSeries(tag or path.stem, cols, DT, airframe, {"rejected_rows": n_bad})
    return flight


def _decimation_index(t: np.ndarray, dt: float) -> np.ndarray:
    native = float(np.median(np.diff(t))) if len(t) > 1 else dt
    if native > dt + 1e-9:
        raise FlightDataError(f"sampling interval {native:g} s is coarser than {dt:g} s")
    grid = t[0] + dt * np.arange(int(math.floor((t[-1] - t[0]) / dt + 1e-9)) + 1)
    right = np.clip(np.searchsorted(t, grid), 1, len(t) - 1)
    left = right - 1
    pick = np.where(np.abs(t[left] - grid) <= np.abs(t[right] - grid), left, right)
    if len(t) == 1:
        pick = np.zeros(1, dtype=int)
    return pick


def write_csv(flight: FlightSeries, path, units: Mapping[str, str] | None = None) -> None:
    """Write a flight in the canonical column layout; floats use round-trip repr."""
    units = units or SI_UNITS
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [atm.from_si(np.asarray(flight[name]), units[name]) for name in CSV_COLUMNS]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in zip(*cols):
            writer.writerow([repr(float(v)) for v in row])


# normalisation ---------------------------------------------------------------

DERIVED = ("d_tas", "d_fpa")


def _derivative_targets(flight: FlightSeries) -> dict[str, np.ndarray]:
    return {
        "d_tas": np.diff(flight["tas"]) / flight.dt,
        "d_fpa": np.diff(flight["fpa"]) / flight.dt,
    }


@dataclass
class NormStats:
    """Per-feature mean and population standard deviation."""

    mean: dict[str, float]
    std: dict[str, float]

    def __contains__(self, name: str) -> bool:
        return name in self.mean

    def normalize(self, name: str, x):
        return (x - self.mean[name]) / self.std[name]

    def denormalize(self, name: str, z):
        return z * self.std[name] + self.mean[name]

    def vectors(self, names: Iterable[str]) -> tuple[np.ndarray, np.ndarray]:
        names = list(names)
        return (np.array([[self.mean[n] for n in names]]),
                np.array([[self.std[n] for n in names]]))

    def to_dict(self) -> dict:
        return {"mean": dict(self.mean), "std": dict(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls({k: float(v) for k, v in d["mean"].items()},
                   {k: float(v) for k, v in d["std"].items()})


def compute_norm_stats(train: list[FlightSeries], features: Iterable[str] | None = None,
                       discrete: Iterable[str] = DISCRETE) -> NormStats:
    """Statistics over every record of every training flight.

    Discrete features pass through with mean 0 and std 1. A continuous feature
    with zero variance is rejected.
    """
    if not train:
        raise FlightDataError("empty training set")
    if features is None:
        features = [c for c in CSV_COLUMNS if c != "time_s"] + ["dh_sel", "dv_sel", *DERIVED]
    discrete = set(discrete)
    mean, std = {}, {}
    derived = [_derivative_targets(f) for f in train] if set(features) & set(DERIVED) else []
    for name in features:
        if name in discrete:
            mean[name], std[name] = 0.0, 1.0
            continue
        if name in DERIVED:
            values = np.concatenate([d[name] for d in derived])
        else:
            values = np.concatenate([np.asarray(f[name]) for f in train])
        mu = float(values.mean())
        sigma = float(values.std())
        if not sigma > 0.0 or not math.isfinite(sigma):
            raise FlightDataError(f"feature {name!r} has zero variance in the training set")
        mean[name], std[name] = mu, sigma
    return NormStats(mean, std)


# manifests -------------------------------------------------------------------

SPLITS = ("train", "val", "test")


def read_manifest(path) -> dict:
    path = Path(path)
    with open(path) as fh:
        manifest = json.load(fh)
    seen: dict[str, str] = {}
    for split in SPLITS:
        for entry in manifest["splits"].get(split, []):
            other = seen.setdefault(entry["airframe"], split)
            if other != split:
                raise FlightDataError(
                    f"airframe {entry['airframe']} appears in both {other} and {split}")
    manifest["_root"] = str(path.parent)
    return manifest


def load_split(manifest: dict | str | Path, split: str) -> list[FlightSeries]:
    if not isinstance(manifest, dict):
        manifest = read_manifest(manifest)
    root = Path(manifest["_root"])
    flights = []
    for entry in manifest["splits"].get(split, []):
        flights.append(ingest_csv(root / entry["file"], tag=entry["tag"],
                                  airframe=entry["airframe"]))
    return flights
