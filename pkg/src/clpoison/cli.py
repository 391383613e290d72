"""Command-line entry point: run, report, verify, poison-audit."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .harness import poison_audit, run_experiment
from .report import human_table, read_report, render_report, write_report
from .verify import run_all


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="override eval.seed")
    parser.add_argument("--runs", type=int, default=None, help="override eval.runs")
    parser.add_argument("--out", type=str, default=None, help="override eval.out")
    parser.add_argument("--cap", type=int, default=None, help="override dataset.train_cap")


def _load_with_overrides(args) -> tuple:
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(
        eval_seed=args.seed,
        eval_runs=getattr(args, "runs", None),
        eval_out=getattr(args, "out", None),
        dataset_train_cap=getattr(args, "cap", None),
    )
    return cfg


def cmd_run(args) -> int:
    cfg = _load_with_overrides(args)
    report = run_experiment(cfg)
    print(human_table(report), end="")
    out = cfg["eval.out"]
    if out:
        write_report(report, out)
        print(f"report written to {out}")
    else:
        print(render_report(report), end="")
    return 0


def cmd_report(args) -> int:
    path = Path(args.result)
    rows = read_report(path)
    if not rows:
        print(f"no result rows found in {path}", file=sys.stderr)
        return 1
    for line in path.read_text().splitlines():
        if line.startswith("# ") and ("NA" in line or line.startswith("# T") or "Mean" in line or "ASR" in line):
            print(line[2:])
    print(f"{len(rows)} machine rows parsed from {path}")
    return 0


def cmd_verify(_args) -> int:
    results = run_all(verbose=True)
    failed = [r for r in results if not r.passed]
    print(f"\n{len(results) - len(failed)}/{len(results)} property checks passed")
    return 1 if failed else 0


def cmd_poison_audit(args) -> int:
    cfg = _load_with_overrides(args)
    manifest = poison_audit(cfg, seed=args.seed)
    print(manifest.to_table(), end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="clpoison",
        description="Backdoor-poisoning experiments on continual learners",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config")
    _add_overrides(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_report = sub.add_parser("report", help="pretty-print a result file")
    p_report.add_argument("result")
    p_report.set_defaults(fn=cmd_report)

    p_verify = sub.add_parser("verify", help="run the property suite")
    p_verify.set_defaults(fn=cmd_verify)

    p_audit = sub.add_parser("poison-audit", help="emit the poison manifest for a config")
    p_audit.add_argument("config")
    _add_overrides(p_audit)
    p_audit.set_defaults(fn=cmd_poison_audit)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
