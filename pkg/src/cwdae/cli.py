"""Command-line entry point: train, generate, evaluate, compare, emit-latent.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
Every command writes its outputs plus a ``manifest.txt`` into ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import time
from pathlib import Path

import pandas as pd
from threadpoolctl import threadpool_limits

from . import __version__
from .autodiff import NonFiniteError
from .checkpoint import load_checkpoint, save_checkpoint
from .data import encode, file_digest, load_schema, read_table, split
from .metrics import EvalReport, compare, evaluate
from .model import TrainConfig, TrainingAborted, init_model, train, write_history
from .synthesis import SynthesisRequest, emit_latent_scatter, generate, write_table

logger = logging.getLogger("cwdae")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

CHECKPOINT = "model.ckpt"
HISTORY = "loss_history.csv"
SYNTHETIC = "synthetic.csv"
REPORT = "report.csv"
REPORT_COLUMNS = "report_columns.csv"
RANKS = "ranks.csv"
LATENT = "latent_scatter.csv"
MANIFEST = "manifest.txt"


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, cwd=Path(__file__).resolve().parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


class Run:
    """Collects manifest entries for one command invocation."""

    def __init__(self, command: str, argv: list[str], out: Path):
        self.command = command
        self.argv = argv
        self.out = out
        self.start = time.time()
        self.entries: list[tuple[str, str]] = []
        out.mkdir(parents=True, exist_ok=True)

    def add(self, key: str, value) -> None:
        self.entries.append((key, str(value)))

    def input(self, role: str, path) -> None:
        self.add(f"input.{role}", path)
        self.add(f"input.{role}.sha256", file_digest(path))

    def output(self, path: Path) -> None:
        self.add("output", path.name)
        self.add(f"output.{path.name}.sha256", file_digest(path))

    def write(self) -> None:
        lines = [f"command: {self.command}",
                 "argv: " + json.dumps(self.argv),
                 f"version: {__version__}",
                 f"git_describe: {_git_describe()}"]
        lines += [f"{k}: {v}" for k, v in self.entries]
        lines.append(f"wall_clock_seconds: {time.time() - self.start:.3f}")
        (self.out / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _gamma(text: str) -> float | str:
    if text == "silverman":
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'silverman' or a positive number") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("gamma must be positive")
    return value


def cmd_train(args, argv) -> int:
    run = Run("train", argv, Path(args.out))
    schema = load_schema(args.schema)
    run.input("data", args.data)
    run.input("schema", args.schema)
    table = read_table(args.data, schema)
    if args.train_fraction is not None:
        table, test = split(table, args.train_fraction, args.seed)
        for name, df in (("train.csv", table), ("test.csv", test)):
            write_table(df, run.out / name, schema)
            run.output(run.out / name)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                      lam=args.lam, tau=args.tau, latent_dim=args.latent_dim, pi=args.pi,
                      n_knots=args.knots, seed=args.seed, gamma=args.gamma, anneal=args.anneal)
    run.add("config", json.dumps(cfg.to_dict(), sort_keys=True))
    run.add("seed", cfg.seed)
    ds = encode(table, schema)
    run.add("n_train", len(ds))
    model = init_model(schema, cfg, ds.encoder.mean_, ds.encoder.scale_, n_train=len(ds))

    def on_abort(m):
        path = run.out / "model.aborted.ckpt"
        save_checkpoint(m, path)
        run.output(path)

    def on_epoch(epoch, br):
        logger.info("epoch %d: total %.6f recon %.6g latent %.6g", epoch, br.total, br.raw_recon, br.raw_latent)

    try:
        model, history = train(ds, cfg, model=model, on_abort=on_abort, on_epoch=on_epoch)
    finally:
        run.write()
    save_checkpoint(model, run.out / CHECKPOINT)
    write_history(history, run.out / HISTORY)
    run.output(run.out / CHECKPOINT)
    run.output(run.out / HISTORY)
    run.write()
    return EXIT_OK


def cmd_generate(args, argv) -> int:
    run = Run("generate", argv, Path(args.out))
    run.input("checkpoint", args.checkpoint)
    schema = load_schema(args.schema) if args.schema else None
    if args.schema:
        run.input("schema", args.schema)
    model = load_checkpoint(args.checkpoint, schema)
    n = model.n_train if args.n is None else args.n
    req = SynthesisRequest(n, args.seed, args.median_only)
    run.add("n", n)
    run.add("seed", args.seed)
    run.add("median_only", args.median_only)
    write_table(generate(model, req), run.out / SYNTHETIC, model.schema)
    run.output(run.out / SYNTHETIC)
    run.write()
    return EXIT_OK


def cmd_evaluate(args, argv) -> int:
    run = Run("evaluate", argv, Path(args.out))
    schema = load_schema(args.schema)
    for role, path in (("schema", args.schema), ("real_train", args.real_train),
                       ("real_test", args.real_test), ("synth", args.synth)):
        run.input(role, path)
    frames = [read_table(p, schema) for p in (args.real_train, args.real_test, args.synth)]
    report = evaluate(*frames, schema, seed=args.seed, dcr_all_pairs=args.dcr_all_pairs)
    run.add("seed", args.seed)
    run.add("dcr_all_pairs", args.dcr_all_pairs)
    report.to_csv(run.out / REPORT)
    report.per_column_to_csv(run.out / REPORT_COLUMNS)
    for note in report.notes:
        run.add("note", note)
    run.output(run.out / REPORT)
    run.output(run.out / REPORT_COLUMNS)
    run.write()
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _report_path(p: str) -> Path:
    path = Path(p)
    return path / REPORT if path.is_dir() else path


def cmd_compare(args, argv) -> int:
    run = Run("compare", argv, Path(args.out))
    paths = [_report_path(p) for p in args.reports]
    names = args.names or [p.parent.name if p.name == REPORT else p.stem for p in paths]
    if len(names) != len(paths) or len(set(names)) != len(names):
        raise ValueError("--names must give one distinct name per report")
    for name, path in zip(names, paths):
        run.input(f"report.{name}", path)
    table = compare({n: EvalReport.from_csv(p) for n, p in zip(names, paths)})
    table.to_csv(run.out / RANKS, float_format="%.17g", lineterminator="\n")
    run.output(run.out / RANKS)
    run.write()
    with pd.option_context("display.width", 200, "display.max_columns", None):
        sys.stdout.write(table.to_string(float_format=lambda v: f"{v:.2f}") + "\n")
    return EXIT_OK


def cmd_emit_latent(args, argv) -> int:
    run = Run("emit-latent", argv, Path(args.out))
    run.input("checkpoint", args.checkpoint)
    model = load_checkpoint(args.checkpoint)
    table = emit_latent_scatter(model, args.mode, args.n, args.seed, grid_size=args.grid_size)
    run.add("mode", args.mode)
    run.add("seed", args.seed)
    write_table(table, run.out / LATENT, model.schema)
    run.output(run.out / LATENT)
    run.write()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    defaults = TrainConfig()
    # Shared flags are accepted before or after the subcommand.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="cap on BLAS/OpenMP threads")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="cwdae", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.set_defaults(threads=None, verbose=False)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="fit a model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--schema", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--pi", type=float, default=defaults.pi)
    t.add_argument("--epochs", type=int, default=defaults.epochs)
    t.add_argument("--batch-size", type=int, default=defaults.batch_size)
    t.add_argument("--lr", type=float, default=defaults.learning_rate)
    t.add_argument("--lambda", dest="lam", type=float, default=defaults.lam)
    t.add_argument("--tau", type=float, default=defaults.tau)
    t.add_argument("--latent-dim", type=int, default=defaults.latent_dim)
    t.add_argument("--knots", type=int, default=defaults.n_knots)
    t.add_argument("--gamma", type=_gamma, default=defaults.gamma)
    t.add_argument("--anneal", choices=("epoch", "step"), default=defaults.anneal)
    t.add_argument("--seed", type=int, default=defaults.seed)
    t.add_argument("--train-fraction", type=float, default=None,
                   help="split --data first; train.csv and test.csv are written to --out")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", parents=[common], help="sample a synthetic table")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--schema", default=None, help="optional; must match the checkpoint")
    g.add_argument("--n", type=int, default=None, help="rows (default: training row count)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--median-only", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", parents=[common], help="similarity and privacy metrics")
    e.add_argument("--real-train", required=True)
    e.add_argument("--real-test", required=True)
    e.add_argument("--synth", required=True)
    e.add_argument("--schema", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--dcr-all-pairs", action="store_true")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", parents=[common], help="rank several evaluation reports")
    c.add_argument("--reports", nargs="+", required=True, help="report.csv files or evaluate output dirs")
    c.add_argument("--names", nargs="+", default=None)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("emit-latent", parents=[common], help="latent coordinates with median-decoded rows")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mode", choices=("prior", "grid"), default="prior")
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--grid-size", type=int, default=41)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_emit_latent)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args, argv)
    except (TrainingAborted, NonFiniteError, FloatingPointError) as exc:
        print(f"cwdae: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"cwdae: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
