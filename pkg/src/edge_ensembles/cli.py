"""Command-line entry point.

Exit status: 0 on success, 2 for usage or configuration errors, 1 when a
run fails after validation.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import ConfigError, load_config
from .harness import EVAL_STREAM, TRAIN_STREAM, emit_csv, run_latency_cdf, run_sweep
from .models import Ensemble, make_synthetic_task, train_ensemble
from .network import sample_snapshot
from .numerics import RngStream
from .protocol import InferenceRequest, run_round
from .quantizer import bit_budget

COMMANDS = ("latency-cdf", "train", "infer", "sweep", "sweep-k", "sweep-bits", "sweep-p")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edge-ensembles", description="Edge ensemble inference experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "latency-cdf": "closed-form and Monte-Carlo round-delay CDFs",
        "train": "train an ensemble and save it",
        "infer": "run one collaborative inference round with a saved ensemble",
        "sweep": "accuracy sweep (kind taken from the config)",
        "sweep-k": "accuracy versus ensemble size",
        "sweep-bits": "accuracy versus log2 codebook size",
        "sweep-p": "accuracy versus link probability",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
    return parser


def _task(command: str, kind: str) -> str:
    if command == "sweep":
        return f"sweep-{kind}"
    return command


def cli_main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError(f"{parser.prog}: error: a command is required")
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        cfg = load_config(args.config, None if args.command == "sweep" else args.command)
        if args.command == "sweep":
            cfg = load_config(args.config, _task("sweep", cfg.sweep.kind))
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg = replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = replace(cfg, output=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        return _dispatch(cfg)
    except Exception as exc:  # runtime failures map to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(cfg) -> int:
    out = Path(cfg.output)
    if cfg.task == "latency-cdf":
        for path in run_latency_cdf(cfg, out):
            print(path)
        return 0
    if cfg.task == "train":
        train, val, _ = make_synthetic_task(cfg.data, RngStream(cfg.seed))
        ens, hist = train_ensemble(train, val, cfg.train_config(), RngStream(cfg.seed + TRAIN_STREAM))
        model_dir = out / "model"
        ens.save(model_dir)
        _write_history(out / "train_history.csv", hist.total_loss)
        print(model_dir)
        return 0
    if cfg.task == "infer":
        ens = Ensemble.load(cfg.infer.model_dir)
        _, _, test = make_synthetic_task(cfg.data, RngStream(cfg.seed))
        if ens.encoder.in_dim != test.X.shape[1] or ens.n_classes != test.n_classes:
            raise ValueError("saved ensemble does not match the configured data shape")
        if not 0 <= cfg.infer.i_t < ens.K:
            raise ValueError(f"infer.i_t={cfg.infer.i_t} is not a user of the saved {ens.K}-node ensemble")
        lat = cfg.latency_config(ens.K, float(bit_budget(ens.encoder.codebook)))
        snap = sample_snapshot(ens.K, cfg.network.p, cfg.network.capacity, RngStream(cfg.seed + EVAL_STREAM))
        s = cfg.infer.sample_index
        req = InferenceRequest(cfg.infer.i_t, test.X[s], snap, cfg.protocol.algorithm)
        trace = run_round(req, ens, lat, cfg.protocol.rho)
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(trace.csv_row(0, int(test.y[s])))
        return 0
    result = run_sweep(cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_{cfg.sweep.kind}.csv"
    emit_csv(result, path)
    print(path)
    return 0


def _write_history(path: Path, losses: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "node", "total_loss"])
        for e, row in enumerate(losses):
            for j, v in enumerate(row):
                w.writerow([e, j, f"{v:.6g}"])


def main() -> None:  # console script
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
