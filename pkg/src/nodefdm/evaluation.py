"""Phase segmentation, per-phase error tables and fuel-burn comparison."""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import FlightSeries

logger = logging.getLogger(__name__)

VZ_THRESHOLD = 1.27  # m/s, 250 ft/min
HYSTERESIS = 5
SMOOTHING = 5


class PhaseLabel(enum.Enum):
    CLIMB = "climb"
    LEVEL = "level"
    DESCENT = "descent"


PHASE_ROWS = (("all", "All phases"), ("climb", "Climb"), ("level", "Level Flight"),
              ("descent", "Descent"))

# key -> (display name, scale to display units, MAPE floor or None when MAPE is undefined)
PARAMETERS = {
    "alt": ("altitude [m]", 1.0, 1.0),
    "tas": ("true air speed [m/s]", 1.0, 1.0),
    "fpa": ("gamma [deg]", 180.0 / math.pi, None),
    "mass": ("mass [kg]", 1.0, 1.0),
}

# Published all-phases values from recorder data, shown for context only.
LITERATURE = {
    "NODE-FDM": {
        "alt": ((61.90, 145.54), (2.49, 333.62), (0.47, 158.15)),
        "tas": ((1.35, 2.03), (0.75, 1.27), (-0.04, 2.44)),
        "fpa": ((0.24, 0.42), None, (0.05, 0.48)),
        "mass": ((64.89, 70.44), (0.10, 0.11), (7.26, 95.50)),
        "consumption": ((83.95, 79.65), (1.54, 1.13), (3.01, 115.74)),
    },
    "BADA": {
        "alt": ((167.47, 402.75), (5.03, 315.60), (-75.45, 429.61)),
        "tas": ((2.73, 6.16), (1.64, 5.18), (-1.34, 6.61)),
        "fpa": ((0.46, 1.01), None, (0.05, 1.11)),
        "mass": ((154.89, 122.70), (0.25, 0.20), (152.90, 125.17)),
        "consumption": ((163.52, 129.68), (3.03, 1.75), (-149.67, 145.47)),
    },
}


class EvaluationError(ValueError):
    pass


# phases ------------------------------------------------------------------------

def _runs(labels: np.ndarray) -> list[tuple[int, int]]:
    edges = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], edges])
    stops = np.concatenate([edges, [len(labels)]])
    return list(zip(starts.tolist(), stops.tolist()))


def label_phases(reference: FlightSeries | np.ndarray, vz_threshold: float = VZ_THRESHOLD,
                 hysteresis: int = HYSTERESIS, smoothing: int = SMOOTHING) -> np.ndarray:
    """Climb / level / descent label per record from smoothed vertical speed.

    Segments shorter than ``hysteresis`` records are absorbed by the preceding
    segment (or the following one at the start of the flight).
    """
    vz = np.asarray(reference["vs"] if isinstance(reference, FlightSeries) else reference,
                    dtype=float)
    n = len(vz)
    if n == 0:
        return np.array([], dtype=object)
    if smoothing > 1:
        kernel = np.ones(smoothing)
        vz = np.convolve(vz, kernel, "same") / np.convolve(np.ones(n), kernel, "same")
    codes = np.where(vz > vz_threshold, 0, np.where(vz < -vz_threshold, 2, 1))
    while True:
        runs = _runs(codes)
        if len(runs) == 1:
            break
        short = [i for i, (a, b) in enumerate(runs) if b - a < hysteresis]
        if not short:
            break
        # absorb the shortest run first for a stable result
        i = min(short, key=lambda j: (runs[j][1] - runs[j][0], j))
        a, b = runs[i]
        codes[a:b] = codes[runs[i - 1][0]] if i > 0 else codes[runs[i + 1][0]]
    names = np.array([PhaseLabel.CLIMB.value, PhaseLabel.LEVEL.value, PhaseLabel.DESCENT.value],
                     dtype=object)
    return names[codes]


# metrics -----------------------------------------------------------------------

def _mean_std(x: np.ndarray) -> tuple[float, float]:
    return float(np.mean(x)), float(np.std(x))


@dataclass
class PhaseMetricsTable:
    """rows[param][phase] = {"n", "mae", "mape", "me"}; statistics are (mean, std)."""

    rows: dict = field(default_factory=dict)

    def get(self, param: str, phase: str = "all", metric: str = "mae"):
        return self.rows[param][phase][metric]

    def to_dict(self) -> dict:
        return {p: {ph: {k: (list(v) if isinstance(v, tuple) else v) for k, v in cell.items()}
                    for ph, cell in phases.items()}
                for p, phases in self.rows.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseMetricsTable":
        return cls({p: {ph: {k: (tuple(v) if isinstance(v, list) else v)
                             for k, v in cell.items()}
                        for ph, cell in phases.items()}
                    for p, phases in d.items()})


def _as_list(x) -> list:
    return [x] if isinstance(x, (FlightSeries, np.ndarray)) and not (
        isinstance(x, np.ndarray) and x.dtype == object and x.ndim == 1 and len(x) and
        isinstance(x[0], np.ndarray)) else list(x)


def phase_metrics(pred, ref, labels=None) -> PhaseMetricsTable:
    """MAE / MAPE / ME (pred - ref) per parameter and phase, pooled over points.

    ``pred``, ``ref`` and ``labels`` are a single flight (and label array) or
    equal-length sequences of them. Labels default to :func:`label_phases` on
    the reference.
    """
    preds = [pred] if isinstance(pred, FlightSeries) else list(pred)
    refs = [ref] if isinstance(ref, FlightSeries) else list(ref)
    if not refs:
        raise EvaluationError("no flights")
    if len(preds) != len(refs):
        raise EvaluationError("prediction and reference counts differ")
    if labels is None:
        labs = [label_phases(r) for r in refs]
    elif isinstance(pred, FlightSeries):
        labs = [np.asarray(labels, dtype=object)]
    else:
        labs = [np.asarray(l, dtype=object) for l in labels]
    for p, r, l in zip(preds, refs, labs):
        if len(p) != len(r) or len(l) != len(r):
            raise EvaluationError(f"flight {r.tag}: length mismatch "
                                  f"({len(p)} predicted, {len(r)} reference, {len(l)} labels)")
    lab = np.concatenate(labs) if labs else np.array([], dtype=object)
    table = PhaseMetricsTable()
    for key, (_, unit_scale, floor) in PARAMETERS.items():
        r = np.concatenate([np.asarray(x[key], dtype=float) for x in refs]) * unit_scale
        p = np.concatenate([np.asarray(x[key], dtype=float) for x in preds]) * unit_scale
        delta = p - r
        table.rows[key] = {}
        for phase, _ in PHASE_ROWS:
            mask = np.ones(len(r), dtype=bool) if phase == "all" else lab == phase
            if not mask.any():
                continue
            d = delta[mask]
            cell = {"n": int(mask.sum()), "mae": _mean_std(np.abs(d)), "me": _mean_std(d),
                    "mape": None}
            if floor is not None:
                ok = np.abs(r[mask]) >= floor
                if ok.any():
                    cell["mape"] = _mean_std(np.abs(d[ok] / r[mask][ok]) * 100.0)
            table.rows[key][phase] = cell
    return table


@dataclass
class ConsumptionMetrics:
    n: int
    mae: tuple[float, float]
    mape: tuple[float, float]
    me: tuple[float, float]
    excluded: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"n": self.n, "mae": list(self.mae), "mape": list(self.mape),
                "me": list(self.me), "excluded": list(self.excluded)}

    @classmethod
    def from_dict(cls, d: dict) -> "ConsumptionMetrics":
        return cls(d["n"], tuple(d["mae"]), tuple(d["mape"]), tuple(d["me"]),
                   list(d.get("excluded", [])))


def fuel_burn(flight: FlightSeries) -> float:
    return float(flight["mass"][0] - flight["mass"][-1])


def consumption_metrics(preds, refs, mass_tol: float = 1e-6) -> ConsumptionMetrics:
    """Flight-total fuel burn error statistics across flights [kg, %]."""
    preds = [preds] if isinstance(preds, FlightSeries) else list(preds)
    refs = [refs] if isinstance(refs, FlightSeries) else list(refs)
    if not refs:
        raise EvaluationError("no flights")
    if len(preds) != len(refs):
        raise EvaluationError("prediction and reference counts differ")
    deltas, pct, excluded = [], [], []
    for p, r in zip(preds, refs):
        if len(p) != len(r):
            raise EvaluationError(f"flight {r.tag}: horizons differ")
        if np.any(np.diff(np.asarray(r["mass"])) > mass_tol):
            logger.warning("flight %s: reference mass not monotone, excluded", r.tag)
            excluded.append(r.tag)
            continue
        burn_ref = fuel_burn(r)
        d = fuel_burn(p) - burn_ref
        deltas.append(d)
        pct.append(abs(d) / burn_ref * 100.0)
    if not deltas:
        raise EvaluationError("no flights")
    d = np.array(deltas)
    return ConsumptionMetrics(len(d), _mean_std(np.abs(d)), _mean_std(np.array(pct)),
                              _mean_std(d), excluded)


# reporting ---------------------------------------------------------------------

def _fmt(cell) -> str:
    return "N/A" if cell is None else f"{cell[0]:.2f} ({cell[1]:.2f})"


def render_text(tables: Mapping[str, PhaseMetricsTable],
                consumption: Mapping[str, ConsumptionMetrics] | None = None,
                literature: bool = False) -> str:
    """Aligned text tables, one column group per model."""
    if not tables:
        raise EvaluationError("no flights")
    models = list(tables)
    header = ["parameter", "phase"]
    for m in models:
        header += [f"{m} MAE", f"{m} MAPE (%)", f"{m} ME"]
    rows = []
    for key, (display, _, _) in PARAMETERS.items():
        first = True
        for phase, phase_name in PHASE_ROWS:
            cells = [tables[m].rows.get(key, {}).get(phase) for m in models]
            if all(c is None for c in cells):
                continue
            row = [display if first else "", phase_name]
            for c in cells:
                row += ["-", "-", "-"] if c is None else [_fmt(c["mae"]), _fmt(c["mape"]),
                                                          _fmt(c["me"])]
            rows.append(row)
            first = False
    out = [_align(header, rows)]
    if consumption:
        cmodels = list(consumption)
        header = ["parameter"]
        for m in cmodels:
            header += [f"{m} MAE [kg]", f"{m} MAPE (%)", f"{m} ME [kg]"]
        row = ["consumption"]
        for m in cmodels:
            c = consumption[m]
            row += [_fmt(c.mae), _fmt(c.mape), _fmt(c.me)]
        out.append(_align(header, [row]))
    if literature:
        lit_rows = []
        for model, vals in LITERATURE.items():
            for key, (mae, mape, me) in vals.items():
                name = PARAMETERS[key][0] if key in PARAMETERS else "consumption"
                lit_rows.append([model, name, _fmt(mae), _fmt(mape), _fmt(me)])
        out.append("Published reference values on recorder data (context only, all phases):\n"
                   + _align(["model", "parameter", "MAE", "MAPE (%)", "ME"], lit_rows))
    return "\n\n".join(out) + "\n"


def _align(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    line = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in rows])


def to_json(tables: Mapping[str, PhaseMetricsTable],
            consumption: Mapping[str, ConsumptionMetrics] | None = None) -> str:
    doc = {"version": 1,
           "phase_metrics": {m: t.to_dict() for m, t in tables.items()},
           "consumption": {m: c.to_dict() for m, c in (consumption or {}).items()}}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def from_json(text: str) -> tuple[dict, dict]:
    doc = json.loads(text)
    tables = {m: PhaseMetricsTable.from_dict(t) for m, t in doc["phase_metrics"].items()}
    cons = {m: ConsumptionMetrics.from_dict(c) for m, c in doc.get("consumption", {}).items()}
    return tables, cons


CSV_HEADER = ("model", "parameter", "phase", "n", "mae_mean", "mae_std", "mape_mean",
              "mape_std", "me_mean", "me_std")


def to_csv(tables: Mapping[str, PhaseMetricsTable],
           consumption: Mapping[str, ConsumptionMetrics] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for m, t in tables.items():
        for key in PARAMETERS:
            for phase, _ in PHASE_ROWS:
                c = t.rows.get(key, {}).get(phase)
                if c is None:
                    continue
                mape = c["mape"] or ("", "")
                w.writerow([m, key, phase, c["n"], repr(c["mae"][0]), repr(c["mae"][1]),
                            *(repr(v) if v != "" else "" for v in mape),
                            repr(c["me"][0]), repr(c["me"][1])])
    for m, c in (consumption or {}).items():
        w.writerow([m, "consumption", "flight", c.n, repr(c.mae[0]), repr(c.mae[1]),
                    repr(c.mape[0]), repr(c.mape[1]), repr(c.me[0]), repr(c.me[1])])
    return buf.getvalue()


def report(tables: Mapping[str, PhaseMetricsTable],
           consumption: Mapping[str, ConsumptionMetrics] | None = None,
           out_dir=None, literature: bool = False) -> str:
    """Render the text table; with ``out_dir`` also write metrics.{txt,json,csv}."""
    text = render_text(tables, consumption, literature)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.txt").write_text(text)
        (out / "metrics.json").write_text(to_json(tables, consumption))
        (out / "metrics.csv").write_text(to_csv(tables, consumption))
    return text


# plot data ---------------------------------------------------------------------

PLOT_COLUMNS = ("time_s", "sel_alt",
                "alt_ref", "alt_node", "alt_base",
                "tas_ref", "tas_node", "tas_base",
                "fpa_deg_ref", "fpa_deg_node", "fpa_deg_base",
                "mass_ref", "mass_node", "mass_base")


def plot_table(ref: FlightSeries, node: FlightSeries | None = None,
               base: FlightSeries | None = None) -> dict[str, np.ndarray]:
    n = len(ref)
    nan = np.full(n, np.nan)

    def col(series, name, scale=1.0):
        if series is None:
            return nan
        out = nan.copy()
        m = min(n, len(series))
        out[:m] = np.asarray(series[name][:m], dtype=float) * scale
        return out

    deg = 180.0 / math.pi
    return {
        "time_s": np.asarray(ref["time_s"], dtype=float),
        "sel_alt": np.asarray(ref["sel_alt"], dtype=float),
        "alt_ref": col(ref, "alt"), "alt_node": col(node, "alt"), "alt_base": col(base, "alt"),
        "tas_ref": col(ref, "tas"), "tas_node": col(node, "tas"), "tas_base": col(base, "tas"),
        "fpa_deg_ref": col(ref, "fpa", deg), "fpa_deg_node": col(node, "fpa", deg),
        "fpa_deg_base": col(base, "fpa", deg),
        "mass_ref": col(ref, "mass"), "mass_node": col(node, "mass"),
        "mass_base": col(base, "mass"),
    }


def write_plot_csv(table: Mapping[str, np.ndarray], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for row in zip(*(table[c] for c in PLOT_COLUMNS)):
            w.writerow(["" if not math.isfinite(v) else repr(float(v)) for v in row])


def read_plot_csv(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) if v else math.nan for v in r] for r in reader]
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}
