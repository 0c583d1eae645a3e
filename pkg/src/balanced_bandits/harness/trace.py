"""Per-step regret records and their CSV form."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COLUMNS = (
    "t",
    "context_hash",
    "arm",
    "reward",
    "optimal_reward",
    "regret",
    "cumulative_regret",
    "optimal_arm",
    "target_arm",
)


def context_hash(x) -> str:
    return hashlib.blake2b(np.ascontiguousarray(x, dtype=float).tobytes(), digest_size=6).hexdigest()


@dataclass
class RegretTrace:
    """One replication of one policy.

    ``regret`` is the gap between the best and the chosen arm's noiseless
    mean reward; ``target_arm`` is the arm the assignment-rate metric
    compares against (the true optimum unless a constrained target is used).
    """

    policy: str
    seed: int
    t: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    context_hash: list = field(default_factory=list)
    arm: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    reward: np.ndarray = field(default_factory=lambda: np.empty(0))
    optimal_reward: np.ndarray = field(default_factory=lambda: np.empty(0))
    regret: np.ndarray = field(default_factory=lambda: np.empty(0))
    optimal_arm: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    target_arm: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    mse: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.arm.shape[0])

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def final_regret(self) -> float:
        return float(self.cumulative_regret[-1]) if len(self) else 0.0

    @property
    def normalized_regret(self) -> float:
        """Mean per-step regret, i.e. the error rate for classification environments."""
        return self.final_regret / len(self) if len(self) else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        cum = self.cumulative_regret
        for i in range(len(self)):
            writer.writerow([
                int(self.t[i]), self.context_hash[i], int(self.arm[i]),
                repr(float(self.reward[i])), repr(float(self.optimal_reward[i])),
                repr(float(self.regret[i])), repr(float(cum[i])),
                int(self.optimal_arm[i]), int(self.target_arm[i]),
            ])
        return buf.getvalue()

    def write_csv(self, directory) -> Path:
        path = Path(directory) / f"trace_{self.policy}_{self.seed}.csv"
        path.write_text(self.to_csv(), encoding="utf-8")
        return path

    @classmethod
    def read_csv(cls, path) -> "RegretTrace":
        path = Path(path)
        stem = path.stem.removeprefix("trace_")
        policy, _, seed = stem.rpartition("_")
        with path.open(encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda name, kind=float: np.array([kind(r[name]) for r in rows], dtype=kind)  # noqa: E731
        return cls(
            policy=policy,
            seed=int(seed),
            t=col("t", int),
            context_hash=[r["context_hash"] for r in rows],
            arm=col("arm", int),
            reward=col("reward"),
            optimal_reward=col("optimal_reward"),
            regret=col("regret"),
            optimal_arm=col("optimal_arm", int),
            target_arm=col("target_arm", int),
        )
