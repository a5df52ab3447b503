"""``sts`` command line: synth, train, ablate, baselines, gradcheck.

Exit codes: 0 success, 1 a check failed (gradcheck), 2 usage, I/O, parse
or input errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import experiments as ex
from . import gradcheck
from .autodiff import save_checkpoint
from .autodiff.checkpoint import _atomic_write
from .config import RunConfig
from .dataio import read_dataset, write_dataset
from .errors import InputError, STSError
from .synth import generate_dataset

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    text = io.StringIO(newline="")
    writer = csv.writer(text, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    payload = text.getvalue().encode("utf-8")
    _atomic_write(path, lambda fh: fh.write(payload))


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.load(args.config)
    if args.seed is not None:
        config = ex.with_seed(config, args.seed)
    if args.out is not None:
        config.paths.out = args.out
    return config


def _load_data(config: RunConfig) -> ex.PreparedData:
    path = config.paths.dataset_path()
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path} (run `sts synth` first or set paths.dataset)")
    header, sequences = read_dataset(path)
    if not sequences:
        raise InputError(f"{path}: dataset has no sequences")
    return ex.prepare_split(config, sequences, len(header.class_names))


def cmd_synth(args: argparse.Namespace) -> int:
    config = _load_config(args)
    sequences = generate_dataset(config.synth)
    path = config.paths.dataset_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [f"class_{c}" for c in range(config.synth.n_classes)]
    write_dataset(path, sequences, names, config.synth.length)
    print(f"wrote {len(sequences)} sequences to {path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args)
    data = _load_data(config)
    result = ex.train_model(config, data, args.ablate or ())
    out = Path(config.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    result.report.write_json(config.paths.resolve("report", "report.json"))
    result.report.write_csv(config.paths.resolve("metrics", "metrics.csv"))
    save_checkpoint(config.paths.resolve("checkpoint", "checkpoint.npz"), result.model.state_dict())
    print(f"test accuracy {result.report.test_acc:.4f} ({result.report.wall_time:.1f}s)")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    data = _load_data(config)
    results = ex.run_ablation(config, data)
    out = Path(config.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for variant, result in results.items():
        save_checkpoint(out / f"checkpoint_{variant}.npz", result.model.state_dict())
        result.report.write_json(out / f"report_{variant}.json")
        rows.append((variant, result.report.test_acc, result.report.wall_time))
        print(f"{variant:14s} {result.report.test_acc:.4f}")
    _write_csv(out / "ablation.csv", ("variant", "accuracy", "wall_time"), rows)
    return EXIT_OK


def cmd_baselines(args: argparse.Namespace) -> int:
    config = _load_config(args)
    data = _load_data(config)
    scores = ex.run_baselines(config, data)
    out = Path(config.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "baselines.csv", ("method", "accuracy"), list(scores.items()))
    for method, acc in scores.items():
        print(f"{method:12s} {acc:.4f}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    seed = 0 if args.seed is None else args.seed
    results = gradcheck.run_checks(seed=seed)
    for r in results:
        print(f"{r.name:22s} max_rel_err {r.max_error:.3e}  {'ok' if r.passed else 'FAIL'}  ({r.seconds:.2f}s)")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check failed: {', '.join(failed)}")
        return EXIT_CHECK
    print(f"all {len(results)} checks below {gradcheck.TOLERANCE:g}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "baselines": cmd_baselines,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sts", description="Structured time series classification toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="run config JSON (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="overrides every seed in the config")
        p.add_argument("--out", help="output directory (overrides paths.out)")
        if name == "train":
            p.add_argument("--ablate", action="append", choices=sorted(ex.ABLATIONS), help="disable a component (repeatable)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, STSError) as exc:
        print(f"sts {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
