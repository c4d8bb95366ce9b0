"""Command-line interface: ``cdgcn gen | mask | recover | eval | ablate``.

Each command reads and writes one run directory and leaves a
``manifest.json`` there.  Exit codes: 0 success, 2 usage or input error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (DataError, apply_missing, from_observations, generate_synthetic,
                      load_mask, load_readings, load_stations, read_feature_names,
                      write_mask, write_readings, write_stations, FILL_POLICIES)
from .graph import ADJACENCY_KINDS, Station, build_graph
from .metrics import MetricScope, rmse, rse
from .model import save_checkpoint
from .trainer import (OPTIMIZERS, REPORT_SCHEMA_VERSION, DivergenceError, TrainConfig,
                      ablate, ablation_table, run)

log = logging.getLogger("cdgcn")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {s}")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be a non-negative integer, got {s}")
    return v


def _ratio(s):
    v = float(s)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"ratio must lie in [0, 1), got {s}")
    return v


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(out_dir, command, args, inputs=(), outputs=(), config=None, seeds=None):
    """Record everything needed to re-run ``command`` bit-for-bit."""
    doc = {
        "tool": "cdgcn",
        "version": __version__,
        "command": command,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
    }
    _write_json(Path(out_dir) / "manifest.json", doc)


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_from_args(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.learning_rate, weight_decay=args.weight_decay,
        bandwidth=args.bandwidth, lam=args.lam, delta=args.delta,
        max_epochs=args.max_epochs, patience=args.patience, seed=args.seed,
        omega=args.omega, theta=args.theta, adjacency=args.adjacency, fill=args.fill,
        hidden_width=args.hidden_width, optimizer=args.optimizer)


def _load_run_dir(in_dir):
    """Stations, masked dataset and feature names from a run directory."""
    in_dir = Path(in_dir)
    stations = load_stations(in_dir / "stations.csv")
    features = read_feature_names(in_dir / "readings.csv")
    values, observed = load_readings(in_dir / "readings.csv", stations, features)
    truth = None
    inputs = [in_dir / "stations.csv", in_dir / "readings.csv"]
    if (in_dir / "truth.csv").exists():
        truth, truth_obs = load_readings(in_dir / "truth.csv", stations, features)
        if truth.shape != values.shape:
            raise DataError(f"truth.csv shape {truth.shape} does not match readings {values.shape}")
        if not truth_obs.all():
            truth = None
            log.warning("truth.csv has gaps; hidden-scope metrics disabled")
        inputs.append(in_dir / "truth.csv")
    return stations, from_observations(values, observed, truth, features), features, inputs


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    out = _out_dir(args.out)
    stations, truth = generate_synthetic(args.n, args.f, args.t, noise_sd=args.noise_sd,
                                         smoothness=args.smoothness, seed=args.seed)
    features = [f"f{j + 1}" for j in range(args.f)]
    paths = [out / "stations.csv", out / "readings.csv", out / "truth.csv"]
    write_stations(paths[0], stations)
    write_readings(paths[1], truth, stations, features)
    write_readings(paths[2], truth, stations, features)
    write_manifest(out, "gen", args, outputs=paths, seeds={"data": args.seed})
    log.info("wrote %s", ", ".join(str(p) for p in paths))
    return EXIT_OK


def cmd_mask(args):
    in_dir, out = Path(args.input), _out_dir(args.out)
    stations = load_stations(in_dir / "stations.csv")
    features = read_feature_names(in_dir / "readings.csv")
    values, observed = load_readings(in_dir / "readings.csv", stations, features)
    if not observed.all():
        raise DataError(f"{in_dir / 'readings.csv'}: masking needs complete readings")
    ds = apply_missing(values, args.ratio, args.seed, features)
    outputs = [out / "readings.csv", out / "hidden.csv", out / "stations.csv"]
    write_readings(outputs[0], values, stations, features, observed=ds.observed)
    write_mask(outputs[1], ds.hidden, stations, features)
    if (in_dir / "stations.csv").resolve() != outputs[2].resolve():
        shutil.copyfile(in_dir / "stations.csv", outputs[2])
    if (in_dir / "truth.csv").exists():
        outputs.append(out / "truth.csv")
        if (in_dir / "truth.csv").resolve() != outputs[-1].resolve():
            shutil.copyfile(in_dir / "truth.csv", outputs[-1])
    write_manifest(out, "mask", args, inputs=[in_dir / "stations.csv", in_dir / "readings.csv"],
                   outputs=outputs, seeds={"mask": args.seed})
    log.info("hid %d of %d entries", int(ds.hidden.sum()), ds.hidden.size)
    return EXIT_OK


def cmd_recover(args):
    out = _out_dir(args.out)
    config = _config_from_args(args)
    stations, ds, features, inputs = _load_run_dir(args.input)
    graph = build_graph(stations, theta=config.theta, omega=config.omega,
                        adjacency=config.adjacency)
    recovered, report, params, history = run(ds, graph, config,
                                              physical_units=args.physical_units)
    outputs = [out / "recovered.csv", out / "checkpoint.json", out / "report.json"]
    write_readings(outputs[0], recovered, stations, features)
    save_checkpoint(outputs[1], params)
    _write_json(outputs[2], report.to_dict())
    write_manifest(out, "recover", args, inputs=inputs, outputs=outputs,
                   config=config.to_dict(), seeds=report.seeds)
    hidden = report.scopes["hidden"]
    if hidden is not None:
        log.info("hidden-scope rmse %.4f rse %s", hidden["rmse"], hidden["rse"])
    return EXIT_OK


def _stations_from_readings(path):
    """Station order as first seen in a readings file (coordinates unknown)."""
    order = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if len(row) > 1 and row[1] not in order:
                order.append(row[1])
    return [Station(sid, 0.0, 0.0) for sid in order]


def cmd_eval(args):
    scope = MetricScope(args.scope)
    stations = (load_stations(args.stations) if args.stations
                else _stations_from_readings(args.truth))
    features = read_feature_names(args.truth)
    truth, t_obs = load_readings(args.truth, stations, features)
    rec, r_obs = load_readings(args.recovered, stations, features)
    if rec.shape != truth.shape:
        raise DataError(f"recovered shape {rec.shape} does not match truth {truth.shape}")
    if not t_obs.all() or not r_obs.all():
        raise DataError("eval needs complete recovered and truth files")
    if scope is MetricScope.WHOLE:
        mask = np.ones(truth.shape, dtype=bool)
    else:
        if not args.mask:
            raise UsageError(f"--scope {scope.value} requires --mask")
        if not Path(args.mask).exists():
            raise UsageError(f"mask file {args.mask} does not exist")
        mask = load_mask(args.mask, stations, features)
    if not mask.any():
        raise DataError("scope mask is empty")
    try:
        rse_value = rse(rec, truth, mask)
    except ValueError:
        rse_value = None
    doc = {"schema_version": REPORT_SCHEMA_VERSION, "scope": scope.value,
           "rse": rse_value, "rmse": rmse(rec, truth, mask), "n_entries": int(mask.sum())}
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_ablate(args):
    out = _out_dir(args.out)
    config = _config_from_args(args)
    stations, ds, features, inputs = _load_run_dir(args.input)
    graph = build_graph(stations, theta=config.theta, omega=config.omega)
    reports = ablate(ds, graph, config, physical_units=args.physical_units)
    for rep in reports.values():
        rep.wall_seconds = round(rep.wall_seconds, 3)
    path = out / "ablation.json"
    _write_json(path, {name: rep.to_dict() for name, rep in reports.items()})
    write_manifest(out, "ablate", args, inputs=inputs, outputs=[path], config=config.to_dict(),
                   seeds={"split": config.seed, "init": config.seed})
    print(ablation_table(reports))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p):
    d = TrainConfig()
    p.add_argument("--in", dest="input", required=True, help="run directory to read")
    p.add_argument("--out", required=True, help="run directory to write")
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--bandwidth", type=_positive_int, default=d.bandwidth)
    p.add_argument("--lambda", dest="lam", type=float, default=d.lam,
                   help="smoothness regularization strength")
    p.add_argument("--delta", type=float, default=d.delta, help="Huber threshold")
    p.add_argument("--max-epochs", type=_positive_int, default=d.max_epochs)
    p.add_argument("--patience", type=_nonneg_int, default=d.patience)
    p.add_argument("--seed", type=int, default=d.seed, help="split and init seed")
    p.add_argument("--omega", type=float, default=d.omega, help="adjacency threshold")
    p.add_argument("--theta", type=float, default=d.theta, help="kernel width (km)")
    p.add_argument("--adjacency", choices=ADJACENCY_KINDS, default=d.adjacency)
    p.add_argument("--fill", choices=FILL_POLICIES, default=d.fill)
    p.add_argument("--optimizer", choices=OPTIMIZERS, default=d.optimizer)
    p.add_argument("--hidden-width", type=_positive_int, default=None,
                   help="enable the two-layer variant with this hidden width")
    p.add_argument("--physical-units", action="store_true",
                   help="report metrics in physical rather than normalized units")


def build_parser():
    parser = argparse.ArgumentParser(prog="cdgcn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic benchmark")
    p.add_argument("--n", type=_positive_int, default=20, help="stations")
    p.add_argument("--f", type=_positive_int, default=5, help="features")
    p.add_argument("--t", type=_positive_int, default=168, help="time steps")
    p.add_argument("--noise-sd", type=float, default=0.02)
    p.add_argument("--smoothness", type=float, default=48.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("mask", help="hide a random fraction of the readings")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--ratio", type=_ratio, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("recover", help="train and fill in missing readings")
    _add_train_flags(p)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("eval", help="score a recovered file against the truth")
    p.add_argument("--recovered", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--mask", help="0/1 mask in readings layout (hidden or test entries)")
    p.add_argument("--stations", help="stations.csv fixing the node order")
    p.add_argument("--scope", choices=[s.value for s in MetricScope], default="hidden")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="regularization / adjacency ablation")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"cdgcn: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, DataError, ValueError, OSError) as exc:
        print(f"cdgcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
