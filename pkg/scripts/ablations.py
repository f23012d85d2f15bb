"""Sweeps over bootstrap strength, ensemble size and branch rank on the deceptive bandit.

    python scripts/ablations.py [--seeds 0,1,2,3,4] [--rounds 300]

Prints final cumulative soft regret, rounds to the optimum and peak ensemble JSD per setting.
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from poets.cli import load_manifest
from poets.diagnostics import rounds_to_optimum
from poets.envs import realize
from poets.trainer import run_experiment

CONFIG = Path(__file__).parent / "configs" / "deceptive.json"

SWEEPS = {
    "bootstrap_lambda": [0.0, 0.25, 0.5, 0.75, 1.0],
    "n_members": [2, 4, 8, 16, 32],
    "rank": [1, 2, 4, 8],
}


def summarize(config, spec, seeds, optimum):
    runs = [run_experiment(replace(config, seed=s), spec) for s in seeds]
    cum = np.array([r[-1].cum_soft_regret for r in runs])
    rto = np.array([rounds_to_optimum([x.best_seen for x in r], optimum) for r in runs])
    jsd = np.array([[x.jsd for x in r] for r in runs]).mean(axis=0)
    se = cum.std(ddof=1) / np.sqrt(len(cum)) if len(cum) > 1 else 0.0
    return cum.mean(), se, rto.mean(), jsd.max()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--rounds", type=int, default=None)
    ap.add_argument("--only", choices=sorted(SWEEPS), default=None)
    args = ap.parse_args()

    manifest = load_manifest(CONFIG)
    base = manifest.trainer
    if args.rounds is not None:
        base = replace(base, total_rounds=args.rounds)
    seeds = [int(s) for s in args.seeds.split(",")]
    optimum = float(realize(manifest.env[0]).rewards.max())
    for field, values in SWEEPS.items():
        if args.only and field != args.only:
            continue
        print(f"-- {field}")
        for v in values:
            cum, se, rto, peak = summarize(replace(base, **{field: v}), manifest.env, seeds, optimum)
            print(f"{field}={v:<6} cum regret {cum:7.2f} +- {se:5.2f}  rounds to optimum {rto:6.1f}  peak jsd {peak:.3f}")


if __name__ == "__main__":
    main()
