"""Assignment-rate metric and pairwise policy comparison."""

from __future__ import annotations

from itertools import combinations

import numpy as np
from scipy.stats import binomtest

DEFAULT_WINDOW = 500
DEFAULT_THRESHOLD = 0.95
P_BUCKETS = ((0.001, "p<0.001"), (0.01, "p<0.01"), (0.05, "p<0.05"))


def agreement(trace, window: int = DEFAULT_WINDOW) -> float:
    """Fraction of the last ``window`` steps whose arm matches the target arm."""
    n = len(trace)
    if n == 0:
        return 0.0
    lo = max(0, n - int(window))
    return float(np.mean(trace.arm[lo:] == trace.target_arm[lo:]))


def optimal_assignment_rate(traces, window: int = DEFAULT_WINDOW,
                            threshold: float = DEFAULT_THRESHOLD) -> float:
    """Fraction of replications that settle on the target assignment.

    A replication counts when its chosen arm equals the target arm in at
    least ``threshold`` of its final ``window`` steps. Empty traces never
    count, and an empty collection has rate 0.
    """
    traces = list(traces)
    if not traces:
        return 0.0
    hits = [len(tr) > 0 and agreement(tr, window) >= threshold for tr in traces]
    return float(np.mean(hits))


def p_bucket(p: float) -> str:
    for cut, label in P_BUCKETS:
        if p < cut:
            return label
    return "n.s."


def sign_test(a, b) -> tuple[int, int, int, float]:
    """Paired two-sided sign test of ``a`` against ``b``.

    Returns ``(wins, losses, ties, p)`` where a win is a pair with
    ``a < b`` (lower regret is better). Ties are dropped from the test;
    with no untied pairs the p-value is 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    wins = int(np.sum(a < b))
    losses = int(np.sum(a > b))
    ties = int(a.shape[0] - wins - losses)
    n = wins + losses
    p = 1.0 if n == 0 else float(binomtest(wins, n, 0.5).pvalue)
    return wins, losses, ties, p


def _paired(per_seed_a: dict, per_seed_b: dict):
    seeds = sorted(set(per_seed_a) & set(per_seed_b))
    return (np.array([per_seed_a[s] for s in seeds]),
            np.array([per_seed_b[s] for s in seeds]))


def pairwise_compare(summaries) -> dict:
    """Compare every pair of policies within each summary on normalized regret.

    ``summaries`` are summary documents as written by the experiment
    runner. For each experiment and each ordered pair ``(A, B)`` the report
    holds the outcome for A (``win`` when A's mean normalized regret is
    lower, ``loss`` when higher, ``tie`` when equal), the seed-level sign
    test and its p-value bucket. Pairs are stored in both orders, so the
    report is antisymmetric by construction.
    """
    report = {}
    for summary in summaries:
        policies = summary["policies"]
        rows = []
        for name_a, name_b in combinations(sorted(policies), 2):
            pa = dict(zip(policies[name_a]["seeds"], policies[name_a]["normalized_regret"]))
            pb = dict(zip(policies[name_b]["seeds"], policies[name_b]["normalized_regret"]))
            a, b = _paired(pa, pb)
            wins, losses, ties, p = sign_test(a, b)
            mean_a = float(a.mean()) if a.size else 0.0
            mean_b = float(b.mean()) if b.size else 0.0
            outcome = "tie" if mean_a == mean_b else ("win" if mean_a < mean_b else "loss")
            flipped = {"win": "loss", "loss": "win", "tie": "tie"}[outcome]
            common = {"p_value": p, "p_bucket": p_bucket(p), "n_seeds": int(a.size)}
            rows.append({"policy": name_a, "opponent": name_b, "outcome": outcome,
                         "mean": mean_a, "opponent_mean": mean_b,
                         "seed_wins": wins, "seed_losses": losses, "seed_ties": ties, **common})
            rows.append({"policy": name_b, "opponent": name_a, "outcome": flipped,
                         "mean": mean_b, "opponent_mean": mean_a,
                         "seed_wins": losses, "seed_losses": wins, "seed_ties": ties, **common})
        report[summary.get("name", f"experiment{len(report)}")] = rows
    return report
