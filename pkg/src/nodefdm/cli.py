"""Command-line entry point: ``nodefdm <subcommand> [options] --out DIR``.

Subcommands are ``gen-data``, ``train``, ``simulate``, ``evaluate`` and
``export-plots``. ``--config FILE`` holds a JSON object whose keys override the
matching flags. Log verbosity comes from the ``NODEFDM_LOG_LEVEL`` environment
variable (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import baseline as bl
from . import data
from . import evaluation as ev
from . import performance as perf
from . import plots
from .model import NodeFdm, RolloutError, load_checkpoint, save_checkpoint
from .synthetic import generate_dataset
from .training import TrainConfig, TrainingDiverged, train

logger = logging.getLogger("nodefdm")

LOG_ENV = "NODEFDM_LOG_LEVEL"
CONFIG_ECHO = "run_config.json"


class CliError(Exception):
    """A user-facing error; printed without a traceback."""


# helpers -----------------------------------------------------------------------

def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {p}")
    return p


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise CliError(f"{what} not found: {p}")
    return p


def _echo_config(args: argparse.Namespace, out: Path) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_ECHO).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _apply_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    if not args.config:
        return
    path = _require_file(args.config, "config file")
    try:
        overrides = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path}: {exc}") from None
    if not isinstance(overrides, dict):
        raise CliError(f"config file {path}: expected a JSON object")
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest in ("func", "command", "config") or not hasattr(args, dest):
            raise CliError(f"config file {path}: unknown option '{key}'")
        setattr(args, dest, value)


def _report_failures(failures: list[dict]) -> int:
    if not failures:
        return 0
    for f in failures:
        print(f"FAILED {f['tag']}: step {f.get('step')}: {f['reason']}", file=sys.stderr)
    return 1


def _performance_config(args, manifest: dict) -> perf.PerformanceConfig:
    if args.performance_config:
        return perf.PerformanceConfig.load(_require_file(args.performance_config,
                                                         "performance config"))
    default = Path(manifest["_root"]) / "performance_config.json"
    return perf.PerformanceConfig.load(default) if default.is_file() else perf.PerformanceConfig()


# subcommands -------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = Path(args.out)
    counts = {"train": args.train, "val": args.val, "test": args.test}
    if counts["train"] < 1:
        raise CliError("empty training split")
    cfg = perf.PerformanceConfig()
    if args.performance_config:
        cfg = perf.PerformanceConfig.load(_require_file(args.performance_config,
                                                        "performance config"))
    _echo_config(args, out)
    try:
        manifest = generate_dataset(out, counts, seed=args.seed, cfg=cfg, noise=not args.no_noise)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    print(f"generated train={args.train} val={args.val} test={args.test} -> {manifest}")
    return 0


def cmd_train(args) -> int:
    manifest = data.read_manifest(_require_file(args.data, "manifest"))
    out = Path(args.out)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                         weight_decay=args.weight_decay, seed=args.seed,
                         weight_convention=args.weight_convention,
                         include_distance=args.include_distance,
                         sequence_length=args.sequence_length)
    _echo_config(args, out)
    train_f = data.load_split(manifest, "train")
    val_f = data.load_split(manifest, "val")
    if not train_f:
        raise CliError("empty training split")
    stats = data.compute_norm_stats(train_f)
    model = NodeFdm(stats, seed=args.seed)
    windows = lambda fs: [s for f in fs for s in data.slice_sequences(f, args.sequence_length)]
    loss_path = out / "loss.csv"
    with open(loss_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("epoch", "train_loss", "val_loss"))

        def on_epoch(epoch, tr, va, improved):
            writer.writerow((epoch, repr(tr), repr(va)))
            fh.flush()
            logger.info("epoch %d train %.6g val %.6g%s", epoch, tr, va,
                        " *" if improved else "")

        try:
            result = train(model, windows(train_f), windows(val_f), config, on_epoch=on_epoch)
        except TrainingDiverged as exc:
            model.set_flat(exc.last_good)
            save_checkpoint(model.to_checkpoint(train_config=config.to_dict()),
                            out / "checkpoint_last_good.json")
            print(f"training diverged in epoch {exc.epoch}; last good parameters saved to "
                  f"{out / 'checkpoint_last_good.json'}", file=sys.stderr)
            return 2
    ckpt = model.to_checkpoint(train_config=config.to_dict(), best_epoch=result.best_epoch,
                               best_val=result.best_val)
    save_checkpoint(ckpt, out / "checkpoint.json")
    print(f"trained {config.epochs} epochs; best epoch {result.best_epoch} "
          f"val {result.best_val:.6g} -> {out / 'checkpoint.json'}")
    return 0


def cmd_simulate(args) -> int:
    manifest = data.read_manifest(_require_file(args.data, "manifest"))
    if args.model == "node-fdm":
        if not args.checkpoint:
            raise CliError("--checkpoint is required for --model node-fdm")
        model = NodeFdm.from_checkpoint(load_checkpoint(_require_file(args.checkpoint,
                                                                      "checkpoint")))
    else:
        cfg = _performance_config(args, manifest)
        if args.perturb:
            cfg = cfg.perturbed(args.perturb)
    out = Path(args.out)
    _echo_config(args, out)
    failures = []
    flights = data.load_split(manifest, args.split)
    for flight in flights:
        if args.model == "node-fdm":
            try:
                pred = model.predict_flight(flight)
            except RolloutError as exc:
                failures.append({"tag": flight.tag, "step": exc.step, "reason": exc.reason})
                continue
        else:
            pred = bl.simulate_flight(flight, cfg)
            if "failure" in pred.meta:
                failures.append({"tag": flight.tag, **pred.meta["failure"]})
                continue
        data.write_csv(pred, out / f"{flight.tag}.csv")
    (out / "failures.json").write_text(json.dumps(failures, indent=2, sort_keys=True) + "\n")
    print(f"simulated {len(flights) - len(failures)}/{len(flights)} flights with "
          f"{args.model} -> {out}")
    return _report_failures(failures)


def _mass_violations(flight: data.FlightSeries, tol: float = 1e-9) -> int:
    return int(np.sum(np.diff(np.asarray(flight["mass"])) > tol))


def cmd_evaluate(args) -> int:
    manifest = data.read_manifest(_require_file(args.data, "manifest"))
    sources = {name: _require_dir(d, f"{name} predictions")
               for name, d in (("NODE-FDM", args.node), ("baseline", args.baseline)) if d}
    if not sources:
        raise CliError("give --node and/or --baseline prediction directories")
    out = Path(args.out)
    _echo_config(args, out)
    refs = data.load_split(manifest, args.split)
    kept, preds, skipped = [], {name: [] for name in sources}, []
    for ref in refs:
        found = {}
        for name, d in sources.items():
            path = d / f"{ref.tag}.csv"
            if path.is_file():
                found[name] = data.ingest_csv(path, tag=ref.tag, airframe=ref.airframe)
        if len(found) < len(sources) or any(len(p) != len(ref) for p in found.values()):
            logger.warning("flight %s: missing or truncated counterpart, skipped", ref.tag)
            skipped.append(ref.tag)
            continue
        kept.append(ref)
        for name, p in found.items():
            preds[name].append(p)
    if not kept:
        raise CliError("no flights")
    labels = [ev.label_phases(r) for r in kept]
    tables = {name: ev.phase_metrics(p, kept, labels) for name, p in preds.items()}
    cons = {name: ev.consumption_metrics(p, kept) for name, p in preds.items()}
    text = ev.report(tables, cons, out, literature=args.literature)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    for i, ref in enumerate(kept):
        node = preds["NODE-FDM"][i] if "NODE-FDM" in preds else None
        base = preds["baseline"][i] if "baseline" in preds else None
        ev.write_plot_csv(ev.plot_table(ref, node, base), out / "plots" / f"{ref.tag}.csv")
    summary = {
        "evaluated": [r.tag for r in kept],
        "skipped": skipped,
        "mass_increase_violations": {name: sum(_mass_violations(f) for f in p)
                                     for name, p in preds.items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(text, end="")
    return 0


def cmd_export_plots(args) -> int:
    src = _require_dir(args.plots, "plot data directory")
    files = sorted(src.glob("*.csv"))
    if not files:
        raise CliError(f"no plot CSVs in {src}")
    out = Path(args.out)
    _echo_config(args, out)
    for path in files:
        svg = plots.render_svg(ev.read_plot_csv(path), title=path.stem)
        (out / f"{path.stem}.svg").write_text(svg)
    print(f"wrote {len(files)} SVG files -> {out}")
    return 0


# parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nodefdm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="JSON file whose keys override these flags")
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "generate a synthetic dataset")
    p.add_argument("--train", type=int, default=50)
    p.add_argument("--val", type=int, default=10)
    p.add_argument("--test", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-noise", action="store_true", help="disable thrust / gamma noise")
    p.add_argument("--performance-config", help="PerformanceConfig JSON (default: built-in)")

    p = add("train", cmd_train, "train the model on a dataset manifest")
    p.add_argument("--data", required=True, help="manifest.json")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weight-convention", choices=("inverse_variance", "inverse_std"),
                   default="inverse_variance")
    p.add_argument("--include-distance", action="store_true")
    p.add_argument("--sequence-length", type=int, default=data.SEQUENCE_LENGTH)

    p = add("simulate", cmd_simulate, "full-flight simulation of a split")
    p.add_argument("--data", required=True, help="manifest.json")
    p.add_argument("--split", choices=data.SPLITS, default="test")
    p.add_argument("--model", choices=("node-fdm", "baseline"), default="node-fdm")
    p.add_argument("--checkpoint", help="checkpoint.json (node-fdm)")
    p.add_argument("--perturb", type=float, default=0.0,
                   help="baseline coefficient perturbation fraction")
    p.add_argument("--performance-config", help="baseline PerformanceConfig JSON "
                   "(default: the dataset's performance_config.json)")

    p = add("evaluate", cmd_evaluate, "phase metric tables and plot data")
    p.add_argument("--data", required=True, help="manifest.json")
    p.add_argument("--split", choices=data.SPLITS, default="test")
    p.add_argument("--node", help="directory of NODE-FDM predictions")
    p.add_argument("--baseline", help="directory of baseline predictions")
    p.add_argument("--literature", action="store_true",
                   help="print published reference values for context")

    p = add("export-plots", cmd_export_plots, "render plot CSVs as SVG")
    p.add_argument("--plots", required=True, help="directory of plot CSVs from evaluate")
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args, parser)
        return args.func(args)
    except (CliError, data.FlightDataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
