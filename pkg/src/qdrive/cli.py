"""Command-line entry point: ``qdrive run`` and ``qdrive verify``."""
from __future__ import annotations

import argparse
import subprocess
import sys
from pathlib import Path

from .exp import ConfigError, ExperimentConfig, emit, run


def _acceptance_path() -> Path | None:
    here = Path(__file__).resolve()
    for base in (Path.cwd(), *here.parents):
        cand = base / "tests" / "test_acceptance.py"
        if cand.is_file():
            return cand
    return None


def cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    out = args.out or cfg.output
    result = run(cfg, threads=args.threads)
    for path in emit(result, out):
        print(path)
    for err in result.errors:
        print(f"cell {err['cell']} failed: {err['error']}", file=sys.stderr)
    return 0 if result.ok else 1


def cmd_verify(args) -> int:
    path = _acceptance_path()
    if path is None:
        print("tests/test_acceptance.py not found; run from the source checkout", file=sys.stderr)
        return 2
    cmd = [sys.executable, "-m", "pytest", "-s", "-q", str(path)]
    if args.quick:
        cmd += ["-m", "not slow"]
    return subprocess.call(cmd)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qdrive", description="Digital quantum control of an expanding trap.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment from a JSON config")
    r.add_argument("--config", required=True, help="path to an ExperimentConfig JSON file")
    r.add_argument("--out", help="output directory (default: the config's output field)")
    r.add_argument("--threads", type=_positive, default=1, help="worker threads for grid cells")
    r.add_argument("--seed", type=_u64, help="run seed (overrides the config)")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--quick", action="store_true", help="skip the long-running criteria")
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
