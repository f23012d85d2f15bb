"""POETS against the single-policy baseline on the deceptive bandit, with and without replay.

    python scripts/deceptive_comparison.py [--seeds 0,1,2] [--rounds 300] [--out runs/deceptive]

Writes one CSV per arm and seed plus a merged table of mean traces (``compare.csv``).
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

from poets.cli import compare, load_manifest, run

CONFIG = Path(__file__).parent / "configs" / "deceptive.json"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default=None, help="comma-separated; defaults to the config's 25")
    ap.add_argument("--rounds", type=int, default=None)
    ap.add_argument("--out", default="runs/deceptive")
    ap.add_argument("--parallel", type=int, default=1)
    args = ap.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    arms = {}
    for T in (1, 16):
        out = Path(args.out) / f"T{T}"
        for method in ("poets", "grpo"):
            manifest = load_manifest(CONFIG, seeds=seeds, out=str(out), method=method)
            manifest.trainer = replace(manifest.trainer, buffer_capacity=T)
            if args.rounds is not None:
                manifest.trainer = replace(manifest.trainer, total_rounds=args.rounds)
            if run(manifest, parallel=args.parallel) != 0:
                raise SystemExit(f"{method} T={T} failed")
        for method, entry in json.loads((out / "summary.json").read_text())["methods"].items():
            arms[f"{method}_T{T}"] = entry

    compare([arms], Path(args.out) / "compare.csv", metrics=["cum_soft_regret", "best_seen", "jsd"])
    print(f"{'arm':10s} {'cum regret':>16s} {'best seen':>10s} {'peak jsd':>9s}")
    for name, e in arms.items():
        cum, se = e["cum_soft_regret"]["mean"][-1], e["cum_soft_regret"]["stderr"][-1]
        print(f"{name:10s} {cum:9.2f} +- {se:4.2f} {e['best_seen']['mean'][-1]:10.3f} {max(e['jsd']['mean']):9.3f}")


if __name__ == "__main__":
    main()
