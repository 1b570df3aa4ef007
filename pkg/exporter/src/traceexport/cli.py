"""CLI: `export` a checkpoint's traces, `verify` an existing bundle."""

from __future__ import annotations

import argparse
import json
import sys

from .export import ExportJob, export
from .verify import verify


def build_parser():
    parser = argparse.ArgumentParser(prog="trace-exporter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="auto",
                   choices=["auto", "label-token", "length-normalized"])
    p.add_argument("--device", default="cpu")

    v = sub.add_parser("verify")
    v.add_argument("--bundle", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "export":
        try:
            summary = export(ExportJob(
                checkpoint=args.checkpoint, task=args.task, n_samples=args.n,
                out=args.out, scoring=args.mode, device=args.device))
        except Exception as e:
            print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
            return 1
        print(json.dumps(summary, sort_keys=True))
        return 0

    report = verify(args.bundle)
    for w in report.warnings:
        print(f"warning: {w}")
    for f in report.failures:
        print(f"FAIL {f}")
    print("pass" if report.passed else "fail")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
