"""Cumulative soft regret of exact regularized Thompson sampling against the information-gain bound.

    python scripts/regret_bound_check.py [--seeds 0,1,2] [--out runs/gp_regret]
"""

import argparse
import json
from pathlib import Path

from poets.cli import load_manifest, run

CONFIG = Path(__file__).parent / "configs" / "gp_regret.json"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default=None)
    ap.add_argument("--out", default="runs/gp_regret")
    args = ap.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    manifest = load_manifest(CONFIG, seeds=seeds, out=args.out)
    if run(manifest) != 0:
        raise SystemExit("run failed")
    entry = json.loads((Path(args.out) / "summary.json").read_text())["methods"]["exact_ts"]
    cum, bound = entry["cum_soft_regret"]["mean"], entry["bound_trace"]
    for t in (10, 25, 50, 100, 150, 200):
        if t <= len(cum):
            print(f"t={t:4d}  mean cum regret {cum[t - 1]:8.3f}  bound {bound[t - 1]:8.2f}")
    if len(cum) >= 200:
        print(f"cum(200) / (4 cum(50)) = {cum[199] / (4 * cum[49]):.3f}")


if __name__ == "__main__":
    main()
