"""Run every defense sweep on the blob benchmark and write the trade-off table.

    python scripts/run_tradeoff.py --seeds 0-9 --out results/tradeoff.csv
"""

import argparse
import csv
import sys
from pathlib import Path

from vflsim import harness
from vflsim.config import load_yaml

ROOT = Path(__file__).resolve().parents[1]
SWEEPS = ["sweep_ng", "sweep_gc", "sweep_mg", "sweep_ppdl", "sweep_ladsg"]


def parse_seeds(text):
    if "-" in text:
        lo, hi = (int(x) for x in text.split("-"))
        return list(range(lo, hi + 1))
    return [int(s) for s in text.split(",")]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=parse_seeds, default=list(range(10)))
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--sweeps", nargs="*", default=SWEEPS)
    args = ap.parse_args(argv)

    rows = []
    for name in args.sweeps:
        raw = load_yaml(ROOT / "configs" / f"{name}.yaml")
        raw["seeds"] = args.seeds
        records = harness.run_sweep(harness.sweep_from_dict(raw))
        table = harness.tradeoff_table(records, "passive")
        best = max(table, key=lambda r: r["task_metric"] - r["attack_success"])
        for r in table:
            r["sweep"] = name
            r["best"] = r is best
            rows.append(r)
            print(f"{name:12s} {r['point']:55s} task={r['task_metric']:.3f} "
                  f"attack={r['attack_success']:.3f}{'  *' if r['best'] else ''}", flush=True)

    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with args.out.open("w", newline="") as fh:
            w = csv.DictWriter(fh, ["sweep", "point", "task_metric", "attack", "attack_success", "best"])
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
