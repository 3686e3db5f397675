"""Command-line interface.

Every subcommand that writes to a directory also writes ``run.json`` with
the fully resolved configuration.  Exit codes: 0 success, 2 invalid
arguments, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

THREADS_ENV = "CTAPNOISE_THREADS"
DEFAULT_M_GRID = (10, 20, 50, 100, 200, 500, 1000, 2000, 5000)
FULL_M_GRID = tuple(range(10, 5001, 10))


class UsageError(Exception):
    """Invalid user input; reported with exit code 2."""


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_run(out_dir: Path, command: str, config: dict) -> None:
    _write_json(out_dir / "run.json", {"command": command, "version": __version__, "config": config})


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolved(args, skip=("func",)) -> dict:
    cfg = {}
    for k, v in vars(args).items():
        if k in skip:
            continue
        cfg[k] = list(v) if isinstance(v, tuple) else v
    return cfg


def _set_threads(n) -> None:
    import numba

    if n is None:
        env = os.environ.get(THREADS_ENV)
        if not env:
            return
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"${THREADS_ENV} must be an integer, got {env!r}")
    if n < 1:
        raise UsageError("--threads must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _drive(name: str):
    from .quantum import DRIVES

    if name not in DRIVES:
        raise UsageError(f"unknown drive {name!r}; choose from {', '.join(DRIVES)}")
    return DRIVES[name]


def _write_matrix_csv(path, matrix, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\predicted"] + list(labels))
        for lab, row in zip(labels, matrix):
            w.writerow([lab] + [int(v) for v in row])


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    from .features import efficiency_markovian
    from .quantum import Detunings, adiabaticity_report, transfer_efficiency

    drive = _drive(args.drive)
    if args.steps < 200:
        raise UsageError("--steps must be >= 200")
    det = Detunings(args.delta_p, args.delta)
    if args.markovian:
        if args.eta is None:
            raise UsageError("--markovian needs --eta")
        if args.gamma < 0:
            raise UsageError("--gamma must be >= 0")
        if args.delta_p or args.delta:
            raise UsageError("--markovian runs at zero detuning")
        xi = efficiency_markovian(drive, args.eta, args.gamma, steps=args.lindblad_steps)
        result = {"mode": "markovian", "eta": args.eta, "gamma": args.gamma}
    else:
        if args.eta is not None:
            raise UsageError("--eta needs --markovian; use --x1/--x2 for quasistatic shifts")
        xi = float(transfer_efficiency(drive, args.x1, args.x2, det=det, steps=args.steps))
        result = {"mode": "unitary", "x1": args.x1, "x2": args.x2}
    result.update(xi=xi, drive=drive.to_dict(), detunings={"delta_p": det.delta_p, "delta": det.delta},
                  adiabaticity=adiabaticity_report(drive, det).to_dict())
    print(f"xi={xi:.12f}")
    if args.out:
        out = _out_dir(args.out)
        _write_json(out / "simulate.json", result)
        _write_run(out, "simulate", _resolved(args))
    return 0


def cmd_gen_data(args) -> int:
    from .dataset import dataset_metadata, generate_dataset, save_dataset
    from .features import QuadratureSpec

    if args.per_class < 1:
        raise UsageError("--per-class must be >= 1")
    if args.gamma < 0:
        raise UsageError("--gamma must be >= 0")
    if args.seed < 0:
        raise UsageError("--seed must be >= 0")
    quad = QuadratureSpec(rule=args.quadrature)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data = generate_dataset(args.task, args.per_class, quad, args.gamma, args.seed,
                            cache_dir=args.cache_dir)
    save_dataset(data, out, dataset_metadata(args.task, args.per_class, args.seed, args.gamma, quad))
    _write_run(out.parent, "gen-data", _resolved(args))
    print(f"wrote {len(data)} samples to {out}")
    return 0


def _load_data(path):
    from .dataset import DatasetFormatError, load_dataset

    if not Path(path).exists():
        raise UsageError(f"dataset {path} does not exist")
    try:
        data = load_dataset(path)
    except DatasetFormatError as exc:
        raise UsageError(str(exc))
    if not data:
        raise UsageError(f"dataset {path} is empty")
    return data


def _class_names(n_classes: int):
    from .dataset import TASK_CLASSES, task_for_classes

    return list(TASK_CLASSES[task_for_classes(n_classes)])


def _train_config(args):
    from .mlp import TrainConfig

    try:
        return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                           seed=args.seed, early_stop_patience=args.patience)
    except ValueError as exc:
        raise UsageError(str(exc))


def _fit(data, split_seed, cfg):
    from .dataset import as_arrays, split_dataset
    from .mlp import init_model, train

    split = split_dataset(data, seed=split_seed)
    if cfg.batch_size > len(split.train):
        raise UsageError(f"--batch-size {cfg.batch_size} exceeds the {len(split.train)} training samples")
    model = init_model(len(data[0].label), cfg.seed)
    return train(model, as_arrays(split.train), as_arrays(split.validation), cfg,
                 test_xy=as_arrays(split.test))


def cmd_train(args) -> int:
    from .mlp import save_model
    from .plotting import plot_confusion, plot_training

    cfg = _train_config(args)
    data = _load_data(args.data)
    model, report = _fit(data, args.split_seed, cfg)
    out = _out_dir(args.out)
    names = _class_names(model.n_classes)
    save_model(model, out / "model.json", cfg, {"test_accuracy": report.test_accuracy,
                                                  "best_epoch": report.best_epoch})
    _write_json(out / "report.json", report.to_dict())
    _write_matrix_csv(out / "confusion.csv", report.confusion, names)
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"])
        for i, row in enumerate(zip(report.train_loss, report.train_accuracy,
                                    report.val_loss, report.val_accuracy), start=1):
            w.writerow([i] + [repr(float(v)) for v in row])
    if args.figures:
        plot_confusion(report.confusion, names, out / "confusion.png")
        plot_training(report, out / "curves.png")
    _write_run(out, "train", _resolved(args))
    print(f"test_accuracy={report.test_accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    from .dataset import as_arrays, split_dataset
    from .mlp import evaluate, load_model
    from .plotting import plot_confusion

    data = _load_data(args.data)
    if not Path(args.model).exists():
        raise UsageError(f"model {args.model} does not exist")
    try:
        model = load_model(args.model)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"invalid checkpoint {args.model}: {exc}")
    k = len(data[0].label)
    if model.n_classes != k:
        raise UsageError(f"model has {model.n_classes} outputs but dataset has {k} classes")
    subset = data if args.subset == "all" else getattr(split_dataset(data, seed=args.split_seed), args.subset)
    acc, conf = evaluate(model, *as_arrays(subset))
    out = _out_dir(args.out)
    names = _class_names(k)
    _write_json(out / "eval.json", {"accuracy": acc, "confusion": conf.tolist(), "subset": args.subset,
                                     "n": len(subset)})
    _write_matrix_csv(out / "confusion.csv", conf, names)
    if args.figures:
        plot_confusion(conf, names, out / "confusion.png")
    _write_run(out, "eval", _resolved(args))
    print(f"accuracy={acc:.4f}")
    return 0


def _log_slope(ms, acc) -> float:
    x = np.log(np.asarray(ms, dtype=float))
    if x.size < 2 or np.ptp(x) == 0:
        return float("nan")
    return float(np.polyfit(x, np.asarray(acc, dtype=float), 1)[0])


def cmd_sweep_m(args) -> int:
    from .dataset import finite_measurement_dataset
    from .plotting import plot_sweep

    ms = FULL_M_GRID if args.full else tuple(args.m)
    if not ms or any(m < 1 for m in ms):
        raise UsageError("every M must be >= 1")
    if args.repetitions < 1:
        raise UsageError("--repetitions must be >= 1")
    cfg = _train_config(args)
    data = _load_data(args.data)
    if len(data[0].label) != 4:
        raise UsageError("the measurement sweep runs on the four-class task")
    _, ideal = _fit(data, args.split_seed, cfg)
    rows = []
    for m in ms:
        for r in range(args.repetitions):
            finite = finite_measurement_dataset(data, m, args.seed, repetition=r)
            _, rep = _fit(finite, args.split_seed, cfg)
            rows.append((m, r, rep.test_accuracy))
            print(f"M={m} repetition={r} accuracy={rep.test_accuracy:.4f}", flush=True)
    out = _out_dir(args.out)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["M", "repetition", "accuracy"])
        for m, r, a in rows:
            w.writerow([m, r, repr(a)])
    acc = np.array([a for _, _, a in rows]).reshape(len(ms), args.repetitions)
    mean = acc.mean(axis=1)
    summary = {
        "ideal_accuracy": ideal.test_accuracy,
        "M": list(ms),
        "mean_accuracy": mean.tolist(),
        "log_slope": _log_slope(ms, mean),
        "gap_at_max_M": ideal.test_accuracy - float(mean[-1]),
    }
    _write_json(out / "sweep.json", summary)
    if args.figures:
        plot_sweep(ms, mean, ideal.test_accuracy, out / "sweep.png",
                   spread=acc.std(axis=1) if args.repetitions > 1 else None)
    _write_run(out, "sweep-m", _resolved(args))
    print(f"ideal_accuracy={ideal.test_accuracy:.4f} log_slope={summary['log_slope']:.4f}")
    return 0


def cmd_stability(args) -> int:
    from .features import stability_map
    from .plotting import plot_stability

    drive = _drive(args.drive)
    if args.grid < 51:
        raise UsageError("--grid must be >= 51")
    if not (args.dp_min < args.dp_max and args.d_min < args.d_max):
        raise UsageError("ranges must satisfy min < max")
    if not 0 <= args.level <= 1:
        raise UsageError("--level must lie in [0, 1]")
    smap = stability_map(drive, (args.dp_min, args.dp_max), (args.d_min, args.d_max), args.grid)
    out = _out_dir(args.out)
    smap.to_csv(out / "map.csv")
    smap.mask_to_csv(out / "mask.csv", args.level)
    smap.to_json(out / "map.json")
    if args.figures:
        plot_stability(smap, out / "stability.png", args.level)
    _write_run(out, "stability", _resolved(args))
    inside = smap.mask(args.level)
    print(f"fraction_above_{args.level}={inside.mean():.4f} origin={smap.value_at(0.0, 0.0):.6f}")
    return 0


# --------------------------------------------------------------------------
# parser


def _train_flags(p) -> None:
    p.add_argument("--data", required=True, help="dataset .jsonl")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0, help="initialization and batch-order seed")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=50)


def _figure_flag(p) -> None:
    p.add_argument("--no-figures", dest="figures", action="store_false",
                   help="skip PNG figures")


def build_parser() -> argparse.ArgumentParser:
    from .quantum import DRIVES

    parser = argparse.ArgumentParser(prog="ctapnoise", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default ${THREADS_ENV} or all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="single-run or Lindblad transfer efficiency")
    p.add_argument("--drive", default="equal", help=f"one of {', '.join(DRIVES)}")
    p.add_argument("--x1", type=float, default=0.0)
    p.add_argument("--x2", type=float, default=0.0)
    p.add_argument("--delta-p", type=float, default=0.0)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--markovian", action="store_true")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lindblad-steps", type=int, default=4000)
    p.add_argument("--out", default=None, help="directory for simulate.json and run.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-data", help="generate a labeled dataset")
    p.add_argument("--task", choices=("four", "five"), default="four")
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--quadrature", choices=("trapezoid", "hermite"), default="trapezoid")
    p.add_argument("--cache-dir", default=None, help="directory for cached efficiency grids")
    p.add_argument("--out", required=True, help="output .jsonl path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the classifier")
    _train_flags(p)
    p.add_argument("--out", required=True)
    _figure_flag(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--subset", choices=("test", "validation", "train", "all"), default="test")
    p.add_argument("--out", required=True)
    _figure_flag(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-m", help="accuracy versus number of measurements")
    _train_flags(p)
    p.add_argument("--m", type=int, nargs="+", default=list(DEFAULT_M_GRID))
    p.add_argument("--full", action="store_true", help="M = 10, 20, ..., 5000")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--out", required=True)
    _figure_flag(p)
    p.set_defaults(func=cmd_sweep_m)

    p = sub.add_parser("stability", help="efficiency map over the detuning plane")
    p.add_argument("--drive", default="equal")
    p.add_argument("--dp-min", type=float, default=-60.0)
    p.add_argument("--dp-max", type=float, default=60.0)
    p.add_argument("--d-min", type=float, default=-60.0)
    p.add_argument("--d-max", type=float, default=60.0)
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--level", type=float, default=0.7)
    p.add_argument("--out", required=True)
    _figure_flag(p)
    p.set_defaults(func=cmd_stability)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _set_threads(args.threads)
        for name in ("x1", "x2", "delta_p", "delta", "eta", "gamma", "lr"):
            v = getattr(args, name, None)
            if v is not None and not math.isfinite(v):
                raise UsageError(f"--{name.replace('_', '-')} must be finite")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ctapnoise: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"ctapnoise: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
