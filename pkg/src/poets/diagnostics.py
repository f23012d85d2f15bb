"""Per-round metrics: best-seen reward, expected reward, entropy and ensemble divergence."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .policy import PolicyDistribution, safe_log

CSV_COLUMNS = ("round", "best_seen", "expected_reward", "entropy", "jsd", "soft_regret", "cum_soft_regret")


@dataclass
class MetricsRecord:
    round: int
    best_seen: float
    expected_reward: float
    entropy: float
    jsd: float
    soft_regret: float
    cum_soft_regret: float
    extras: dict = field(default_factory=dict)

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]

    def to_dict(self) -> dict:
        return asdict(self)


def _as_matrix(members) -> np.ndarray:
    if isinstance(members, np.ndarray):
        return np.atleast_2d(members)
    return np.stack([m.probs if isinstance(m, PolicyDistribution) else np.asarray(m) for m in members])


def entropy(pi) -> float:
    """Shannon entropy in nats with ``0 log 0 = 0``."""
    p = pi.probs if isinstance(pi, PolicyDistribution) else np.asarray(pi, dtype=np.float64)
    nz = p[p > 0]
    return float(max(-np.sum(nz * np.log(nz)), 0.0))


def normalized_jsd(members) -> float:
    """Mean KL of each member to the uniform mixture, divided by ``log n``; 0 for one member."""
    P = _as_matrix(members)
    n = P.shape[0]
    if n < 2:
        return 0.0
    avg = P.mean(axis=0)
    terms = np.where(P > 0, P * (safe_log(P) - safe_log(avg)[None, :]), 0.0)
    value = float(terms.sum() / (n * math.log(n)))
    return min(max(value, 0.0), 1.0)


def best_seen(history) -> float:
    h = np.asarray(history, dtype=np.float64)
    if h.size == 0:
        raise ValueError("best_seen needs a nonempty history")
    return float(h.max())


def running_best(history) -> np.ndarray:
    h = np.asarray(history, dtype=np.float64)
    if h.size == 0:
        raise ValueError("running_best needs a nonempty history")
    return np.maximum.accumulate(h)


def rounds_to_optimum(best_seen_trace, optimum: float, tol: float = 1e-12) -> int:
    """First round index whose best-seen reward reaches ``optimum``; trace length if never."""
    trace = np.asarray(best_seen_trace, dtype=np.float64)
    hits = np.nonzero(trace >= optimum - tol)[0]
    return int(hits[0]) if hits.size else int(trace.size)


def aggregate(runs: list[list[MetricsRecord]], columns=CSV_COLUMNS[1:]) -> dict:
    """Per-round mean and standard error across runs, truncated to the shortest run."""
    if not runs:
        return {"n_runs": 0, "rounds": []}
    length = min(len(r) for r in runs)
    out = {"n_runs": len(runs), "rounds": list(range(length))}
    for c in columns:
        vals = np.array([[getattr(rec, c) for rec in run[:length]] for run in runs], dtype=np.float64)
        mean = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / np.sqrt(len(runs)) if len(runs) > 1 else np.zeros(length)
        out[c] = {"mean": mean.tolist(), "stderr": se.tolist()}
    return out
