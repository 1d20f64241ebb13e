"""Command-line front end.

Each subcommand reads a JSON run document, resolves it, runs the experiment
and writes CSV/JSON artifacts plus ``inputs.json`` and ``manifest.json``
into ``--out``. Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import EXPERIMENTS, ConfigError, validate_config
from .dynamics.master import NumericalError
from .experiments import run_hbt, run_interference, run_spin_pumping, run_wstate
from .fitting import FitError

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
log = logging.getLogger("qdwstate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2; usage problems are validation errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer (got {text})")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qdwstate", description="Time-bin W-state emission simulator.")
    parser.add_argument("--version", action="version", version=f"qdwstate {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(EXPERIMENTS) + "}", parser_class=_Parser)
    helps = {
        "spin-pumping": "CW optical pumping; fits the preparation time",
        "wstate": "emit a time-bin photon and estimate its state",
        "hbt": "Hanbury Brown-Twiss correlation of a long click record",
        "interference": "unbalanced-interferometer phase scans of neighbouring bins",
        "compile-pulses": "compile target bin probabilities into a pulse sequence",
    }
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", required=True, type=Path, help="run document (JSON)")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--seed", type=_u64, default=None, help="master seed (required for stochastic runs)")
        p.add_argument("--threads", type=int, default=None, help="worker threads for trajectory sampling")
        p.add_argument("--version", action="version", version=f"qdwstate {__version__}")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, files: list[Path]) -> Path:
    entries = sorted(({"path": f.relative_to(out).as_posix(), "sha256": _sha256(f), "bytes": f.stat().st_size}
                      for f in files), key=lambda e: e["path"])
    path = out / "manifest.json"
    path.write_text(json.dumps({"qdwstate_version": __version__, "files": entries}, indent=2) + "\n")
    return path


def _compile_pulses(resolved, out: Path) -> list[Path]:
    path = out / "sequence.json"
    resolved.spec.seq.dump(path)
    return [path]


def _run(command: str, resolved, out: Path) -> list[Path]:
    spec = resolved.spec
    if command == "compile-pulses":
        return _compile_pulses(resolved, out)
    if command == "spin-pumping":
        return run_spin_pumping(spec).save(out)
    if command == "wstate":
        return run_wstate(spec, resolved.scheme).save(out)
    if command == "hbt":
        return run_hbt(spec).save(out)
    if command == "interference":
        return run_interference(spec).save(out)
    raise UsageError(f"unknown command {command!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("qdwstate: error: a subcommand is required", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    try:
        document = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"qdwstate: error: cannot read config {args.config}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        resolved = validate_config(document, args.command, seed=args.seed, threads=args.threads)
    except ConfigError as exc:
        print(f"qdwstate: {exc}", file=sys.stderr)
        return EXIT_INVALID

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    inputs = out / "inputs.json"
    inputs.write_text(json.dumps(resolved.document, indent=2, sort_keys=True) + "\n")
    log.info("resolved config written to %s", inputs)
    try:
        with np.errstate(invalid="raise", divide="raise", over="raise"):
            files = _run(args.command, resolved, out)
    except (NumericalError, FitError, ArithmeticError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"qdwstate: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"qdwstate: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    manifest = write_manifest(out, [inputs, *files])
    log.info("wrote %d files; manifest %s", len(files) + 1, manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
