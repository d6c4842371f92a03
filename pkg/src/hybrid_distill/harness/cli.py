"""Command line entry point: ``hybrid-distill {verify,train,gradcheck,bench,export-csv}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..exceptions import ConfigError, ContractBreach, ResourceError
from .bench import format_rows, rows_as_dicts, run_bench
from .config import load_config
from .metrics import emit_plot_data
from .train import run_train
from .verify import run_gradcheck, run_verify

EXIT_OK, EXIT_BREACH, EXIT_CONFIG, EXIT_RESOURCE = 0, 1, 2, 3

log = logging.getLogger("hybrid_distill")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment INI file")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--out", type=str, help="output directory (overrides config and env)")
    common.add_argument("--threads", type=int, help="rollout threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="hybrid-distill", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common], help="run every oracle suite")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference kernel checks only")
    sub.add_parser("train", parents=[common], help="run the hybrid training loop")
    sub.add_parser("bench", parents=[common], help="benchmark full vs top-k kernels")
    ex = sub.add_parser("export-csv", parents=[common], help="convert metrics.jsonl to CSV")
    ex.add_argument("metrics", type=Path)
    ex.add_argument("-o", "--output", type=Path, help="CSV path (default: alongside metrics)")
    return ap


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "export-csv":
            out = args.output or args.metrics.with_suffix(".csv")
            n = emit_plot_data(args.metrics, out)
            print(f"wrote {n} rows to {out}")
            return EXIT_OK

        cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
        if args.threads is not None:
            cfg.threads = args.threads
            cfg.validate()

        if args.command in ("verify", "gradcheck"):
            report = run_verify(cfg) if args.command == "verify" else run_gradcheck(cfg)
            text = report.text()
            sys.stdout.write(text)
            if args.out is not None or args.config is not None:
                _write(Path(cfg.out_dir), f"{args.command}_report.txt", text)
            return EXIT_OK if report.passed else EXIT_BREACH

        if args.command == "train":
            model = run_train(cfg)
            print(json.dumps({"out_dir": str(cfg.out_dir), "final": model.final_metrics_}))
            return EXIT_OK

        if args.command == "bench":
            rows = run_bench(cfg.bench, cfg.seed)
            sys.stdout.write(format_rows(rows))
            if args.out is not None:
                _write(Path(cfg.out_dir), "bench.json", json.dumps(rows_as_dicts(rows), indent=2) + "\n")
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ContractBreach as exc:
        print(f"contract breach: {exc}", file=sys.stderr)
        return EXIT_BREACH
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
