"""Command-line entry point: dataset ingestion, training, evaluation, and
the conformal / active-learning / ensembling experiment drivers.

Every command is a pure function of (input files, flags, seed); outputs are
CSV reports plus a JSON manifest from which the run can be reproduced
byte-identically (the manifest's wall time aside).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time

import numpy as np

from . import __version__
from .core import (
    DimensionError,
    DivergenceError,
    InvalidDistributionError,
    InvalidLevelError,
    KernelDomainError,
    LdlDataset,
    ModelDegenerateError,
    NumericError,
    floor_normalize,
)
from .harness import active_learning_round, bagging_experiment, entropy_profile, mean_metrics
from .moments import conditional_moments_batch
from .training import TrainConfig, load_model, save_model, train, train_maxent_baseline
from .uncertainty import calibrated_intervals, dirichlet_baseline_calibrate, fit_conformal, fsc_table

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERIC = 2


class DataFormatError(ValueError):
    """Raised for malformed dataset files, with row/column positions."""


def fmt(value) -> str:
    """Numeric output policy: 6 significant digits."""
    return f"{float(value):.6g}"


def ingest(path, d: int | None = None, L: int | None = None, renormalize: bool = False):
    """Parse a dataset CSV with header f0..f{d-1},l0..l{L-1}.

    Returns (dataset, report) where the report carries the row count and the
    largest label-sum deviation seen before normalization.  Label rows must
    sum to 1 within 1e-6 unless ``renormalize`` is set.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        n_f = sum(1 for name in header if name.startswith("f"))
        n_l = len(header) - n_f
        d = n_f if d is None else d
        L = n_l if L is None else L
        expected = [f"f{i}" for i in range(d)] + [f"l{i}" for i in range(L)]
        if header != expected:
            raise DataFormatError(
                f"{path}: header mismatch; expected {','.join(expected)}"
            )
        feats, labs = [], []
        max_dev = 0.0
        for row_no, row in enumerate(reader, start=2):
            if len(row) != d + L:
                raise DataFormatError(f"{path}:{row_no}: expected {d + L} columns, got {len(row)}")
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                bad = next(i for i, cell in enumerate(row) if not _is_float(cell))
                raise DataFormatError(
                    f"{path}:{row_no}: non-numeric cell in column {header[bad]}"
                ) from None
            lab = np.array(values[d:])
            if np.any(lab < 0):
                col = d + int(np.argmin(lab))
                raise DataFormatError(
                    f"{path}:{row_no}: negative label in column {header[col]}"
                )
            dev = abs(lab.sum() - 1.0)
            max_dev = max(max_dev, dev)
            if dev > 1e-6 and not renormalize:
                raise DataFormatError(
                    f"{path}:{row_no}: label row sums to {lab.sum():.6g}; "
                    "pass --renormalize to rescale"
                )
            feats.append(values[:d])
            labs.append(floor_normalize(lab))
    if not feats:
        raise DataFormatError(f"{path}: no data rows")
    dataset = LdlDataset(np.array(feats), np.stack(labs))
    report = {"rows": len(feats), "max_label_sum_deviation": max_dev}
    return dataset, report


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def write_dataset_csv(dataset: LdlDataset, path) -> None:
    d, L = dataset.n_features, dataset.n_labels
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(d)] + [f"l{i}" for i in range(L)])
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def _tool_version() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except OSError:
        pass
    return __version__


def _write_manifest(args, started: float) -> None:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    manifest = {
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "version": _tool_version(),
        "wall_time_s": round(time.time() - started, 3),
    }
    path = os.path.join(args.report_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ensure_report_dir(args) -> None:
    os.makedirs(args.report_dir, exist_ok=True)


def _train_config(args, default_batch: int | None = None) -> TrainConfig:
    batch = args.batch_size if args.batch_size is not None else default_batch
    return TrainConfig(
        epochs=args.epochs,
        batch_size=batch,
        learning_rate=args.lr,
        seed=args.seed,
        n=args.n,
        m=args.m,
        d2=args.d2,
    )


def _parse_ratios(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(","))


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(","))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def run_ingest(args) -> int:
    dataset, report = ingest(args.data, args.d, args.l, renormalize=args.renormalize)
    print(
        f"rows={report['rows']} d={dataset.n_features} L={dataset.n_labels} "
        f"max_label_sum_deviation={fmt(report['max_label_sum_deviation'])}"
    )
    return EXIT_OK


def run_split(args) -> int:
    started = time.time()
    dataset, _ = ingest(args.data, renormalize=args.renormalize)
    parts = dataset.split(_parse_ratios(args.ratios), seed=args.seed)
    _ensure_report_dir(args)
    names = ("train", "calib", "test", "extra")[: len(parts)]
    for name, part in zip(names, parts):
        write_dataset_csv(part, os.path.join(args.report_dir, f"{name}.csv"))
        print(f"{name}: {len(part)} rows")
    _write_manifest(args, started)
    return EXIT_OK


def run_train(args) -> int:
    started = time.time()
    dataset, _ = ingest(args.data, renormalize=args.renormalize)
    cfg = _train_config(args, default_batch=16)
    model, report = train(dataset, cfg)
    _ensure_report_dir(args)
    model_out = args.model_out or os.path.join(args.report_dir, "model.bin")
    save_model(model, model_out)
    _write_csv(
        os.path.join(args.report_dir, "training.csv"),
        ["epoch", "nll"],
        [(str(i + 1), v) for i, v in enumerate(report.epoch_nll)],
    )
    print(
        f"trained: initial_nll={fmt(report.initial_nll)} final_nll={fmt(report.final_nll)} "
        f"grad_check={fmt(report.grad_check_max_rel_error)} model={model_out}"
    )
    _write_manifest(args, started)
    return EXIT_OK


def run_eval(args) -> int:
    started = time.time()
    dataset, _ = ingest(args.data, renormalize=args.renormalize)
    model = load_model(args.model_in)
    preds, _ = conditional_moments_batch(model, dataset.features)
    report = mean_metrics(dataset.labels, preds)
    _ensure_report_dir(args)
    _write_csv(
        os.path.join(args.report_dir, "metrics.csv"),
        ["cheby", "clark", "canb", "kl", "cos", "inter"],
        [report.as_row()],
    )
    print(" ".join(f"{k}={fmt(v)}" for k, v in zip(
        ("cheby", "clark", "canb", "kl", "cos", "inter"), report.as_row())))
    _write_manifest(args, started)
    return EXIT_OK


def run_conformal(args) -> int:
    started = time.time()
    dataset, _ = ingest(args.data, renormalize=args.renormalize)
    train_set, calib, test = dataset.split(_parse_ratios(args.ratios), seed=args.seed)
    cfg = _train_config(args, default_batch=64)
    model, _ = train(train_set, cfg, run_grad_check=False)
    cal = fit_conformal(model, calib, args.level)
    snefy_iv = calibrated_intervals(model, test.features, cal)

    maxent = train_maxent_baseline(train_set, cfg)
    baseline, base_cal = dirichlet_baseline_calibrate(maxent, calib, args.level, train=train_set)
    base_iv = calibrated_intervals(baseline, test.features, base_cal)

    bins = _parse_ints(args.bin_sizes)
    snefy_rows = fsc_table(test, snefy_iv, bins)
    base_rows = fsc_table(test, base_iv, bins)
    rows = [
        (name, str(size), s_val, b_val)
        for (name, size, s_val), (_, _, b_val) in zip(snefy_rows, base_rows)
    ]
    _ensure_report_dir(args)
    _write_csv(
        os.path.join(args.report_dir, "fsc.csv"),
        ["label", "bin_size", "snefy_fsc", "dirichlet_fsc"],
        rows,
    )
    for name, size, s_val, b_val in rows:
        print(f"label={name} bin_size={size} snefy={fmt(s_val)} dirichlet={fmt(b_val)}")
    _write_manifest(args, started)
    return EXIT_OK


def run_active(args) -> int:
    started = time.time()
    dataset, _ = ingest(args.data, renormalize=args.renormalize)
    train_pool, test = dataset.split(_parse_ratios(args.ratios), seed=args.seed)
    cfg = _train_config(args, default_batch=16)
    report = active_learning_round(
        train_pool,
        test,
        initial_size=args.n_initial,
        n_query=args.n_query,
        cfg=cfg,
        strategy=args.strategy,
        n_iter=args.n_iter,
    )
    _ensure_report_dir(args)
    _write_csv(
        os.path.join(args.report_dir, "active.csv"),
        ["strategy", "cheby", "clark", "canb", "kl", "cos", "inter"],
        [(args.strategy,) + report.as_row()],
    )
    print(f"strategy={args.strategy} " + " ".join(f"{k}={fmt(v)}" for k, v in zip(
        ("cheby", "clark", "canb", "kl", "cos", "inter"), report.as_row())))
    _write_manifest(args, started)
    return EXIT_OK


def run_ensemble(args) -> int:
    started = time.time()
    dataset, _ = ingest(args.data, renormalize=args.renormalize)
    train_set, test = dataset.split(_parse_ratios(args.ratios), seed=args.seed)
    cfg = _train_config(args, default_batch=16)
    avg, weighted = bagging_experiment(
        train_set, test, n_base=args.n_base, n_sample=args.n_sample, cfg=cfg
    )
    rows = []
    if args.mode in ("average", "both"):
        rows.append(("average",) + avg.as_row())
    if args.mode in ("weighted", "both"):
        rows.append(("weighted",) + weighted.as_row())
    _ensure_report_dir(args)
    _write_csv(
        os.path.join(args.report_dir, "ensemble.csv"),
        ["mode", "cheby", "clark", "canb", "kl", "cos", "inter"],
        rows,
    )
    for row in rows:
        print(f"mode={row[0]} " + " ".join(f"{k}={fmt(v)}" for k, v in zip(
            ("cheby", "clark", "canb", "kl", "cos", "inter"), row[1:])))
    _write_manifest(args, started)
    return EXIT_OK


def run_entropy(args) -> int:
    started = time.time()
    dataset, _ = ingest(args.data, renormalize=args.renormalize)
    model = load_model(args.model_in)
    ent = entropy_profile(model, dataset.features, n_iter=args.n_iter, seed=args.seed)
    _ensure_report_dir(args)
    _write_csv(
        os.path.join(args.report_dir, "entropy.csv"),
        ["index", "entropy"],
        [(str(i), v) for i, v in enumerate(ent)],
    )
    print(f"estimated entropy for {len(ent)} samples; mean={fmt(ent.mean())}")
    _write_manifest(args, started)
    return EXIT_OK


def run_sweep(args) -> int:
    started = time.time()
    dataset, _ = ingest(args.data, renormalize=args.renormalize)
    values = _parse_ints(args.values)
    bins = _parse_ints(args.bin_sizes)
    rows = []
    for value in values:
        overrides = {
            "n": {"n": value},
            "m": {"m": value},
            "batch-size": {"batch_size": value},
            "epochs": {"epochs": value},
        }[args.param]
        train_set, calib, test = dataset.split(_parse_ratios(args.ratios), seed=args.seed)
        base = dict(
            epochs=args.epochs, batch_size=args.batch_size or 64, learning_rate=args.lr,
            seed=args.seed, n=args.n, m=args.m, d2=args.d2,
        )
        base.update(overrides)
        cfg = TrainConfig(**base)
        model, _ = train(train_set, cfg, run_grad_check=False)
        cal = fit_conformal(model, calib, args.level)
        iv = calibrated_intervals(model, test.features, cal)
        for name, size, val in fsc_table(test, iv, bins):
            rows.append((args.param, str(value), name, str(size), val))
        print(f"{args.param}={value}: done")
    _ensure_report_dir(args)
    _write_csv(
        os.path.join(args.report_dir, "sweep.csv"),
        ["param", "value", "label", "bin_size", "fsc"],
        rows,
    )
    _write_manifest(args, started)
    return EXIT_OK


def run_rerun(args) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    command = manifest["command"]
    if command not in _COMMANDS:
        raise DataFormatError(f"manifest names unknown command {command!r}")
    config = dict(manifest["config"])
    config["report_dir"] = args.report_dir
    ns = argparse.Namespace(command=command, **config)
    return _COMMANDS[command](ns)


# ---------------------------------------------------------------------------
# Argument wiring
# ---------------------------------------------------------------------------


def _add_common(p, with_train=True):
    p.add_argument("--data", required=True, help="dataset CSV (header f0..,l0..)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--renormalize", action="store_true",
                   help="rescale label rows that do not sum to 1")
    p.add_argument("--report-dir", default="reports")
    if with_train:
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--n", type=int, default=64, help="hidden units")
        p.add_argument("--m", type=int, default=32, help="readout rows")
        p.add_argument("--d2", type=int, default=None, help="feature map width (default: n)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snefy-ldl",
        description="Density modeling of label distributions with uncertainty harnesses",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--l", type=int, default=None)
    p.add_argument("--renormalize", action="store_true")
    p.set_defaults(func=run_ingest)

    p = sub.add_parser("split", help="seeded shuffled split into CSV parts")
    _add_common(p, with_train=False)
    p.add_argument("--ratios", default="0.9,0.1")
    p.set_defaults(func=run_split)

    p = sub.add_parser("train", help="fit the density model")
    _add_common(p)
    p.add_argument("--model-out", default=None)
    p.set_defaults(func=run_train)

    p = sub.add_parser("eval", help="score a saved model's mean predictions")
    _add_common(p, with_train=False)
    p.add_argument("--model-in", required=True)
    p.set_defaults(func=run_eval)

    p = sub.add_parser("conformal", help="calibrated intervals and FSC report")
    _add_common(p)
    p.add_argument("--level", type=float, default=0.9)
    p.add_argument("--bin-sizes", default="2,4,8")
    p.add_argument("--ratios", default="0.5,0.25,0.25")
    p.set_defaults(func=run_conformal)

    p = sub.add_parser("active", help="one active-learning acquisition round")
    _add_common(p)
    p.add_argument("--strategy", default="snefy-entropy",
                   choices=("snefy-entropy", "dirichlet-entropy", "random", "kmeans"))
    p.add_argument("--n-query", type=int, default=100)
    p.add_argument("--n-initial", type=int, default=400)
    p.add_argument("--n-iter", type=int, default=1000)
    p.add_argument("--ratios", default="0.9,0.1")
    p.set_defaults(func=run_active)

    p = sub.add_parser("ensemble", help="bagged learners, uniform vs density-weighted")
    _add_common(p)
    p.add_argument("--n-base", type=int, default=25)
    p.add_argument("--n-sample", type=int, default=50)
    p.add_argument("--mode", default="both", choices=("average", "weighted", "both"))
    p.add_argument("--ratios", default="0.9,0.1")
    p.set_defaults(func=run_ensemble)

    p = sub.add_parser("entropy", help="per-sample entropy estimates for a saved model")
    _add_common(p, with_train=False)
    p.add_argument("--model-in", required=True)
    p.add_argument("--n-iter", type=int, default=1000)
    p.set_defaults(func=run_entropy)

    p = sub.add_parser("sweep", help="FSC versus one hyperparameter")
    _add_common(p)
    p.add_argument("--param", required=True, choices=("n", "m", "batch-size", "epochs"))
    p.add_argument("--values", required=True, help="comma-separated integer values")
    p.add_argument("--level", type=float, default=0.9)
    p.add_argument("--bin-sizes", default="2,4,8")
    p.add_argument("--ratios", default="0.5,0.25,0.25")
    p.set_defaults(func=run_sweep)

    p = sub.add_parser("rerun", help="re-execute a command from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report-dir", default="reports-rerun")
    p.set_defaults(func=run_rerun)

    return parser


_COMMANDS = {
    "ingest": run_ingest,
    "split": run_split,
    "train": run_train,
    "eval": run_eval,
    "conformal": run_conformal,
    "active": run_active,
    "ensemble": run_ensemble,
    "entropy": run_entropy,
    "sweep": run_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DivergenceError, NumericError, ModelDegenerateError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (
        DataFormatError,
        InvalidDistributionError,
        InvalidLevelError,
        DimensionError,
        KernelDomainError,
        FileNotFoundError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
