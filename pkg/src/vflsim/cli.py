"""Command line entry point: ``vflsim run|sweep|dump-embeddings``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .config import config_from_dict, load_yaml
from .errors import StageError, VflError

log = logging.getLogger("vflsim")


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--seeds expects comma-separated integers, got {text!r}") from None


def _load(path: str, seeds: list[int] | None) -> dict:
    raw = load_yaml(path)
    if seeds is not None:
        raw["seeds"] = seeds
    return raw


def _print_table(records) -> None:
    rows = harness.tradeoff_table(records)
    print(f"{'point':40s} {'task':>8s} {'attack':>8s}  kind")
    for row in rows:
        print(f"{row['point'] or '-':40s} {row['task_metric']:8.4f} {row['attack_success']:8.4f}  {row['attack']}")


def cmd_run(args) -> int:
    cfg = config_from_dict(_load(args.config, args.seeds))
    record = harness.run_experiment(cfg)
    _print_table([record])
    if args.out:
        harness.emit_results([record], args.format, args.out)
        log.info("wrote %s", args.out)
    return 0


def cmd_sweep(args) -> int:
    spec = harness.sweep_from_dict(_load(args.config, args.seeds))
    records = harness.run_sweep(spec)
    _print_table(records)
    if args.out:
        harness.emit_results(records, args.format, args.out)
        log.info("wrote %s", args.out)
    return 0


def cmd_dump(args) -> int:
    cfg = config_from_dict(_load(args.config, args.seeds))
    seed = cfg.seeds[0]
    ctx = harness.prepare(cfg, seed)
    with harness._stage("train", seed):
        harness.protocol.train(ctx.session)
    with harness._stage("dump", seed):
        harness.dump_embeddings(ctx.session, ctx.test.X, ctx.test.y, args.out_path)
    log.info("wrote %d embeddings to %s", ctx.test.n, args.out_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vflsim", description="Vertical FL label-privacy simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_out=True):
        p.add_argument("config", help="YAML experiment config")
        p.add_argument("--seeds", type=_seeds, default=None, help="override seed list, e.g. 0,1,2")
        if with_out:
            p.add_argument("--out", type=Path, default=None, help="results file")
            p.add_argument("--format", choices=("json_lines", "csv"), default="json_lines")

    common(sub.add_parser("run", help="run one experiment over its seeds"))
    common(sub.add_parser("sweep", help="run the config's sweep section"))
    dump = sub.add_parser("dump-embeddings", help="export adversary embeddings of the test split")
    common(dump, with_out=False)
    dump.add_argument("out_path", type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handler = {"run": cmd_run, "sweep": cmd_sweep, "dump-embeddings": cmd_dump}[args.command]
    try:
        return handler(args)
    except StageError as exc:
        print(f"vflsim: error {exc}", file=sys.stderr)
        return 2
    except (VflError, OSError) as exc:
        print(f"vflsim: error [stage=config] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
