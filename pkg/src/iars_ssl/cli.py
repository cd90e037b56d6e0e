"""Command line surface wiring the modules into runnable experiments.

Subcommands: ``train``, ``eval``, ``bench-length``, ``bench-size``,
``export-embeddings``. Every run writes its fully resolved configuration
(defaults included) into the report, so a report is sufficient to rerun the
experiment exactly. Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .dataio import DataError, TimeSeriesDataset, parse_ts, parse_ucr_delimited, synth_classification, zscore
from .encoder import load_checkpoint, save_checkpoint
from .evalkit import embed, evaluate
from .trainer import NumericalError, RunReport, TrainConfig, fit

CLI_METHODS = ("embed-1nn", "1nn-ed", "1nn-dtw-d", "1nn-dtw-i")
_CONFIG_FIELDS = {f.name for f in fields(TrainConfig)} | {"normalize"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _thread_context(threads):
    return threadpool_limits(limits=threads) if threads else nullcontext()


def _resolve_threads(args) -> int | None:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("IARS_SSL_THREADS")
    return int(env) if env else None


def _load_dataset(path, split: str = "train") -> TimeSeriesDataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    text = path.read_text()
    suffix = path.suffix.lower()
    if suffix == ".ts":
        ds = parse_ts(text, split=split)
    elif suffix == ".tsv":
        ds = parse_ucr_delimited(text, delimiter="\t", split=split)
    elif suffix == ".csv":
        ds = parse_ucr_delimited(text, delimiter=",", split=split)
    else:
        raise DataError(f"unsupported dataset extension {suffix!r} for {path}")
    if not ds.name:
        ds.name = path.stem
    return ds


def _resolve_config(args) -> dict:
    """defaults < JSON config file < explicit CLI flags; unknown keys rejected."""
    cfg = asdict(TrainConfig())
    cfg["normalize"] = True
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {path} is not valid JSON: {e}") from None
        unknown = set(loaded) - _CONFIG_FIELDS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)} "
                             f"(known: {sorted(_CONFIG_FIELDS)})")
        cfg.update(loaded)
    overrides = {
        "mode": getattr(args, "mode", None),
        "seed": getattr(args, "seed", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "embed_dim": getattr(args, "k", None),
        "alpha": getattr(args, "alpha", None),
        "pool_mode": getattr(args, "pool", None),
        "mask_prob": getattr(args, "mask_prob", None),
        "precision": getattr(args, "precision", None),
    }
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "normalize_off", False):
        cfg["normalize"] = False
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(**{k: v for k, v in cfg.items() if k != "normalize"})
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid configuration: {e}") from None


def _normalized(train: TimeSeriesDataset, target: TimeSeriesDataset,
                normalize: bool) -> TimeSeriesDataset:
    return zscore(train, target) if normalize else target


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    config = _train_config(cfg)
    dataset = _load_dataset(args.data, split="train")
    dataset = _normalized(dataset, dataset, cfg["normalize"])
    threads = _resolve_threads(args)
    out = Path(args.out)
    with _thread_context(threads):
        params, _, report = fit(dataset, config)
    report.config["normalize"] = cfg["normalize"]
    report.environment["threads"] = threads
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out)
    report.save_json(out / "report.json")
    report.save_csv(out / "report.csv")
    last = report.epochs[-1]
    print(f"trained {config.mode} for {config.epochs} epochs on {dataset.name or args.data}: "
          f"final objective {last.objective:.6f}, "
          f"total {report.totals['train_seconds']:.2f}s -> {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    train_set = _load_dataset(args.data, split="train")
    test_set = _load_dataset(args.test_data, split="test")
    test_set = _normalized(train_set, test_set, cfg["normalize"])
    train_set = _normalized(train_set, train_set, cfg["normalize"])
    params = None
    k_value = ""
    if args.checkpoint:
        params = load_checkpoint(Path(args.checkpoint))
        k_value = params.config.output_dim
    elif args.method == "embed-1nn":
        raise UsageError("method embed-1nn needs --checkpoint")
    threads = _resolve_threads(args)
    with _thread_context(threads):
        t0 = time.perf_counter()
        result = evaluate(train_set, test_set, args.method, params=params)
        seconds = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results_csv = out / "results.csv"
    new_file = not results_csv.exists()
    with open(results_csv, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(["dataset", "method", "k", "seed", "accuracy", "seconds"])
        writer.writerow([train_set.name, result.method, k_value, cfg["seed"],
                         repr(result.accuracy), f"{seconds:.4f}"])
    print(f"{train_set.name} {result.method}: accuracy {result.accuracy:.4f} "
          f"({seconds:.2f}s) -> {results_csv}")
    return 0


def _bench_rows(sweep_name: str, sweep_values, fixed_n: int | None, fixed_length: int | None,
                args) -> int:
    cfg = _resolve_config(args)
    if getattr(args, "epochs", None) is None and "epochs" not in _loaded_keys(args):
        cfg["epochs"] = 10  # benchmark default: short runs
    threads = _resolve_threads(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    with _thread_context(threads):
        for value in sweep_values:
            n = value if sweep_name == "size" else fixed_n
            length = value if sweep_name == "length" else fixed_length
            dataset = synth_classification(
                n_per_class=max(1, n // args.classes), d=args.d, l=length,
                num_classes=args.classes, seed=cfg["seed"])
            for mode in ("hier", "iars"):
                run_cfg = _train_config({**cfg, "mode": mode})
                _, _, report = fit(dataset, run_cfg)
                report.environment["threads"] = threads
                run_dir = out / f"run_{sweep_name}{value}_{mode}"
                run_dir.mkdir(parents=True, exist_ok=True)
                report.save_json(run_dir / "report.json")
                epoch_secs = [r.seconds for r in report.epochs]
                rows.append({sweep_name: value, "mode": mode,
                             "mean_epoch_seconds": float(np.mean(epoch_secs)),
                             "total_seconds": report.totals["train_seconds"]})
    csv_path = out / f"bench_{sweep_name}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[sweep_name, "mode", "mean_epoch_seconds",
                                                "total_seconds"])
        writer.writeheader()
        writer.writerows(rows)
    for value in sweep_values:
        by_mode = {r["mode"]: r["mean_epoch_seconds"] for r in rows if r[sweep_name] == value}
        ratio = by_mode["iars"] / by_mode["hier"]
        print(f"{sweep_name}={value}: hier {by_mode['hier']:.3f}s/epoch, "
              f"iars {by_mode['iars']:.3f}s/epoch, ratio {ratio:.3f}")
    print(f"wrote {csv_path}")
    return 0


def _loaded_keys(args) -> set:
    config_path = getattr(args, "config", None)
    if not config_path or not Path(config_path).exists():
        return set()
    try:
        return set(json.loads(Path(config_path).read_text()))
    except json.JSONDecodeError:
        return set()


def cmd_bench_length(args) -> int:
    lengths = _parse_int_list(args.lengths, "lengths")
    return _bench_rows("length", lengths, fixed_n=args.n, fixed_length=None, args=args)


def cmd_bench_size(args) -> int:
    sizes = _parse_int_list(args.sizes, "sizes")
    return _bench_rows("size", sizes, fixed_n=None, fixed_length=args.length, args=args)


def _parse_int_list(text: str, what: str) -> list:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{what} must be comma-separated integers, got {text!r}") from None
    if not values:
        raise UsageError(f"--{what} must list at least one value")
    return values


def cmd_export_embeddings(args) -> int:
    cfg = _resolve_config(args)
    dataset = _load_dataset(args.data, split="test")
    dataset = _normalized(dataset, dataset, cfg["normalize"])
    params = load_checkpoint(Path(args.checkpoint))
    threads = _resolve_threads(args)
    with _thread_context(threads):
        matrix = embed(dataset, params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    k = matrix.shape[1]
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"e{i}" for i in range(k)])
        for i in range(dataset.n):
            label = int(dataset.labels[i]) if dataset.labels is not None else ""
            writer.writerow([label] + [repr(float(v)) for v in matrix[i]])
    print(f"wrote {dataset.n}x{k} embeddings to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; every training field is addressable")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None,
                   help="pin BLAS thread count (fallback: IARS_SSL_THREADS)")
    p.add_argument("--precision", choices=("f32", "f64"), default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="iars-ssl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="self-supervised training run")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("hier", "iars"), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--k", type=int, default=None, help="embedding dimension")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--pool", choices=("max", "avg"), default=None)
    p.add_argument("--mask-prob", type=float, default=None)
    p.add_argument("--no-normalize", dest="normalize_off", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="downstream classification evaluation")
    p.add_argument("--data", required=True, help="train split")
    p.add_argument("--test-data", required=True)
    p.add_argument("--method", choices=CLI_METHODS, required=True)
    p.add_argument("--checkpoint", default=None,
                   help="encoder checkpoint dir (optional for raw-series baselines)")
    p.add_argument("--out", required=True, help="directory for results.csv")
    p.add_argument("--no-normalize", dest="normalize_off", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-length", help="epoch timing across series lengths")
    p.add_argument("--lengths", required=True, help="comma-separated, e.g. 100,200,500")
    p.add_argument("--n", type=int, default=64, help="dataset size")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_bench_length)

    p = sub.add_parser("bench-size", help="epoch timing across dataset sizes")
    p.add_argument("--sizes", required=True, help="comma-separated, e.g. 100,200")
    p.add_argument("--length", type=int, default=256)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_bench_size)

    p = sub.add_parser("export-embeddings", help="embeddings + labels as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output CSV file")
    p.add_argument("--no-normalize", dest="normalize_off", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
