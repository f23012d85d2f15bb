"""Command-line experiment runner.

``poets run`` executes one method over a list of seeds and writes one CSV per seed plus a
summary JSON; ``poets compare`` merges summaries into a single per-round table.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .diagnostics import CSV_COLUMNS, MetricsRecord, aggregate, entropy
from .envs import BanditSpec
from .oracle import GaussianBelief, bound_trace, effective_noise, run_exact_ts
from .objective import optimal_policy
from .trainer import NumericalAbort, TrainerConfig, build_env, grpo_config, run_experiment

log = logging.getLogger("poets")

METHODS = ("poets", "grpo", "exact_ts")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentManifest:
    method: str = "poets"
    seeds: list = field(default_factory=lambda: [0])
    out: str = "runs"
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    env: list = field(default_factory=lambda: [BanditSpec()])
    metrics: list = field(default_factory=lambda: list(CSV_COLUMNS[1:]))
    config_path: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        bad = set(self.metrics) - set(CSV_COLUMNS[1:])
        if bad:
            raise ConfigError(f"unknown metrics: {sorted(bad)}")
        if self.method == "exact_ts":
            if len(self.env) != 1:
                raise ConfigError("exact_ts runs on a single context")
            if self.env[0].kind == "deceptive":
                raise ConfigError("exact_ts needs a gp or linear bandit (the deceptive kind has no prior)")

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> ExperimentManifest:
        d = {**d, **{k: v for k, v in overrides.items() if v is not None}}
        known = {"method", "seeds", "out", "trainer", "env", "metrics", "config_path"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown manifest fields: {sorted(unknown)}")
        try:
            trainer = TrainerConfig.from_dict(d.get("trainer", {}))
            env = d.get("env", {})
            env = [BanditSpec.from_dict(e) for e in (env if isinstance(env, list) else [env])]
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(
            method=d.get("method", "poets"),
            seeds=[int(s) for s in d.get("seeds", [0])],
            out=d.get("out", "runs"),
            trainer=trainer,
            env=env,
            metrics=list(d.get("metrics", CSV_COLUMNS[1:])),
            config_path=d.get("config_path"),
        )

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seeds": list(self.seeds),
            "out": self.out,
            "trainer": self.trainer.to_dict(),
            "env": [e.to_dict() for e in self.env],
            "metrics": list(self.metrics),
        }


def load_manifest(path, **overrides) -> ExperimentManifest:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return ExperimentManifest.from_dict({**d, "config_path": str(path)}, **overrides)


def run_exact_ts_seed(config: TrainerConfig, spec: BanditSpec, seed: int) -> list[MetricsRecord]:
    """Exact regularized Thompson sampling, one action per round, in trainer-style records."""
    env = build_env(spec, seed)
    bandit = env[0]
    coeffs = config.coeffs
    prior = GaussianBelief.prior(spec.kernel_matrix(), spec.noise_std)
    pi_ref = np.full(bandit.n_actions, 1.0 / bandit.n_actions)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(4)[1])
    ledger, policies, actions, obs = run_exact_ts(
        bandit.rewards, prior, pi_ref, coeffs, config.total_rounds, rng, env_noise=spec.noise_std
    )
    records, best, cum = [], -np.inf, 0.0
    for t, (pi, y, regret) in enumerate(zip(policies, obs, ledger.per_round)):
        best = max(best, y)
        cum += regret
        records.append(
            MetricsRecord(
                round=t,
                best_seen=float(best),
                expected_reward=float(pi.probs @ bandit.rewards),
                entropy=entropy(pi),
                jsd=0.0,
                soft_regret=float(regret),
                cum_soft_regret=float(cum),
            )
        )
    return records


def _run_seed(args) -> list[MetricsRecord]:
    method, config, specs, seed = args
    config = replace(config, seed=seed)
    if method == "exact_ts":
        return run_exact_ts_seed(config, specs[0], seed)
    if method == "grpo":
        config = grpo_config(config)
    return run_experiment(config, specs)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(path: Path, records: list[MetricsRecord]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in records:
            w.writerow([_fmt(v) for v in rec.row()])


def read_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in CSV_COLUMNS}


def regret_bound_trace(manifest: ExperimentManifest) -> list[float]:
    spec = manifest.env[0]
    eta = effective_noise(spec.noise_std)
    prior = GaussianBelief.prior(spec.kernel_matrix(), eta)
    return bound_trace(prior, manifest.trainer.total_rounds, spec.n_actions, eta).tolist()


def run(manifest: ExperimentManifest, parallel: int = 1) -> int:
    """Execute every seed and write CSVs and the summary; returns a process exit code."""
    jobs = [(manifest.method, manifest.trainer, manifest.env, s) for s in manifest.seeds]
    log.info("running %s on %d seed(s)", manifest.method, len(jobs))
    try:
        if parallel > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=parallel) as pool:
                results = list(pool.map(_run_seed, jobs))
        else:
            results = [_run_seed(j) for j in jobs]
    except NumericalAbort as exc:
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERIC

    out = Path(manifest.out)
    for seed, records in zip(manifest.seeds, results):
        write_csv(out / manifest.method / f"seed{seed}.csv", records)

    summary_path = out / "summary.json"
    summary = {"methods": {}}
    if summary_path.exists():
        try:
            summary = json.loads(summary_path.read_text())
        except json.JSONDecodeError:
            log.warning("overwriting unreadable %s", summary_path)
    entry = aggregate(results, columns=tuple(manifest.metrics))
    entry["seeds"] = list(manifest.seeds)
    entry["manifest"] = manifest.to_dict()
    if manifest.method == "exact_ts":
        entry["bound_trace"] = regret_bound_trace(manifest)
    summary.setdefault("methods", {})[manifest.method] = entry
    summary_path.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def _load_summary(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "summary.json"
    with open(p) as fh:
        return json.load(fh)["methods"]


def compare(summaries: list, out_path, metrics=None) -> tuple[list[str], list[list]]:
    """Merge per-method mean traces into one table aligned on the round index."""
    tables = []
    for k, s in enumerate(summaries):
        methods = _load_summary(s) if not isinstance(s, dict) else s
        for name, entry in methods.items():
            label = name if all(name != t[0] for t in tables) else f"{name}{k}"
            tables.append((label, entry))
    if not tables:
        raise ConfigError("nothing to compare")
    if metrics is None:
        metrics = [c for c in CSV_COLUMNS[1:] if all(c in e for _, e in tables)]
    lengths = [len(e["rounds"]) for _, e in tables]
    length = min(lengths)
    if len(set(lengths)) > 1:
        log.warning("round counts differ %s; truncating to %d", lengths, length)
    header = ["round"] + [f"{label}_{m}" for label, _ in tables for m in metrics]
    rows = []
    for t in range(length):
        rows.append([t] + [e[m]["mean"][t] for _, e in tables for m in metrics])
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
    return header, rows


def _parse_seeds(text: str | None):
    if text is None:
        return None
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        return [int(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poets", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one method over seeds")
    p_run.add_argument("--config", required=True, help="JSON experiment config")
    p_run.add_argument("--seeds", help="comma-separated seeds, overrides the config")
    p_run.add_argument("--out", help="output directory, overrides the config")
    p_run.add_argument("--method", choices=METHODS, help="overrides the config")
    p_run.add_argument("--parallel", type=int, default=1, help="worker processes")

    p_cmp = sub.add_parser("compare", help="merge summaries into one CSV")
    p_cmp.add_argument("summaries", nargs="+", help="summary.json files or run directories")
    p_cmp.add_argument("--out", required=True, help="merged CSV path")
    p_cmp.add_argument("--metrics", help="comma-separated metric subset")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("POETS_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            seeds = _parse_seeds(args.seeds)
            if seeds is not None and not seeds:
                raise ConfigError("seed list is empty")
            manifest = load_manifest(args.config, seeds=seeds, out=args.out, method=args.method)
            if args.parallel < 1:
                raise ConfigError("--parallel must be >= 1")
            return run(manifest, parallel=args.parallel)
        metrics = args.metrics.split(",") if args.metrics else None
        compare(args.summaries, args.out, metrics)
        return EXIT_OK
    except (ConfigError, OSError, KeyError, json.JSONDecodeError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
