"""Paired comparison of the undefended and LADSG-defended blob runs.

Prints per-seed passive-attack success and task top-1 for both arms, then the
mean drops. Extra LADistill settings can be tried with --k/--epsilon/--scope.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from vflsim import harness
from vflsim.config import config_from_dict, load_yaml

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--k", type=int, default=None)
    ap.add_argument("--epsilon", type=float, default=None)
    ap.add_argument("--scope", choices=["owner_slice", "full"], default=None)
    args = ap.parse_args(argv)

    seeds = list(range(args.seeds))
    base = load_yaml(ROOT / "configs" / "blob_none.yaml")
    lad = load_yaml(ROOT / "configs" / "blob_ladsg.yaml")
    overrides = {k: v for k, v in [("k", args.k), ("epsilon", args.epsilon),
                                   ("teacher_feature_scope", args.scope)] if v is not None}
    if overrides:
        lad["defense"]["ladistill"] = overrides
    base["seeds"] = lad["seeds"] = seeds

    a = harness.run_experiment(config_from_dict(base))
    b = harness.run_experiment(config_from_dict(lad))
    print("seed  none(task, attack)   ladsg(task, attack)")
    for sa, sb in zip(a.per_seed, b.per_seed):
        print(f"{sa['seed']:4d}  {sa['task_metric']:.3f}  {sa['attack_success']['passive']:.3f}"
              f"         {sb['task_metric']:.3f}  {sb['attack_success']['passive']:.3f}")
    d_att = np.mean([x["attack_success"]["passive"] - y["attack_success"]["passive"]
                     for x, y in zip(a.per_seed, b.per_seed)])
    d_task = np.mean([x["task_metric"] - y["task_metric"] for x, y in zip(a.per_seed, b.per_seed)])
    print(f"mean attack drop {d_att:.3f}, mean task drop {d_task:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
