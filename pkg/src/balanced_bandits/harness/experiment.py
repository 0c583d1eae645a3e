"""Experiment configuration, grid search over policy hyperparameters and summaries.

A run configuration is a TOML document::

    name = "quadratic-well"
    horizon = 2000
    replications = 100      # or an explicit list: seeds = [0, 1, 2]
    seed_base = 0
    window = 500            # assignment-rate window
    threshold = 0.95        # assignment-rate agreement threshold
    out = "results"         # relative to the config file

    [environment]
    type = "quadratic"      # quadratic | sparse | nonlinear | classification
    features = "quadratic"  # identity | linear | quadratic | poly2
    target = "optimal"      # optimal | projection
    warm_start = true
    track_mse = false
    noise_sd = 0.1          # remaining keys go to the environment constructor
    # classification only: dataset = "data.csv", label = "label"

    [[policies]]
    name = "BLTS"
    type = "linear"         # linear | bootstrap | forest | bayes_lasso | uniform | fixed | oracle
    params = { kind = "BLTS" }
    grid = { alpha = [0.25, 0.5, 1.0] }
    features = "quadratic"  # optional, overrides environment.features for this policy

Linear policies without an explicit grid search ``alpha`` over
(0.25, 0.5, 1) for Thompson sampling or (1, 2, 4) for UCB, plus ``gamma``
over (0.01, 0.05, 0.1, 0.2) for the balanced variants.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
from sklearn.base import clone

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..bootstrap import BootstrapTS
from ..environments import (
    ClassificationEnv,
    NonlinearEnv,
    QuadraticEnv,
    SparseLinearEnv,
    load_classification_csv,
)
from ..exceptions import BanditError, ConfigError
from ..features import ContextFeatures
from ..forest import ForestTS
from ..gibbs import BayesianLassoTS
from ..policies import FixedArmPolicy, LinearBandit, OraclePolicy, UniformPolicy
from .charts import emit_charts
from .metrics import DEFAULT_THRESHOLD, DEFAULT_WINDOW, agreement, optimal_assignment_rate
from .runner import run_replication

logger = logging.getLogger(__name__)

SUMMARY_SCHEMA_VERSION = 1

POLICY_TYPES = {
    "linear": LinearBandit,
    "bootstrap": BootstrapTS,
    "forest": ForestTS,
    "bayes_lasso": BayesianLassoTS,
    "uniform": UniformPolicy,
    "fixed": FixedArmPolicy,
    "oracle": OraclePolicy,
}
ENV_TYPES = {
    "quadratic": QuadraticEnv,
    "sparse": SparseLinearEnv,
    "nonlinear": NonlinearEnv,
    "classification": ClassificationEnv,
}
TS_ALPHA_GRID = (0.25, 0.5, 1.0)
UCB_ALPHA_GRID = (1.0, 2.0, 4.0)
GAMMA_GRID = (0.01, 0.05, 0.1, 0.2)
ENV_META_KEYS = ("type", "features", "target", "warm_start", "track_mse", "dataset", "label")


def default_grid(policy_type: str, params: dict) -> dict:
    if policy_type != "linear":
        return {}
    kind = params.get("kind", "BLTS")
    grid = {"alpha": list(TS_ALPHA_GRID if kind.endswith("TS") else UCB_ALPHA_GRID)}
    if kind.startswith("B"):
        grid["gamma"] = list(GAMMA_GRID)
    return grid


@dataclass
class PolicySpec:
    name: str
    type: str
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    features: str | None = None

    def grid_points(self) -> list[dict]:
        keys = list(self.grid)
        return [dict(zip(keys, values)) for values in product(*(self.grid[k] for k in keys))] or [{}]

    def build(self, point: dict | None = None):
        policy = POLICY_TYPES[self.type]()
        try:
            policy.set_params(**{**self.params, **(point or {})})
        except ValueError as exc:
            raise ConfigError(f"policy {self.name!r}: {exc}") from exc
        return policy


@dataclass
class ExperimentConfig:
    name: str
    horizon: int
    seeds: list
    environment: dict
    policies: list
    seed_base: int = 0
    window: int = DEFAULT_WINDOW
    threshold: float = DEFAULT_THRESHOLD
    out: Path = Path("results")
    jobs: int = 1
    base_dir: Path = Path(".")


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


def _as_tuple_params(params: dict) -> dict:
    # TOML arrays arrive as lists; estimator parameters compare by value, so tuples keep clone() happy
    return {k: tuple(v) if isinstance(v, list) else v for k, v in params.items()}


def parse_config(doc: dict, base_dir=".") -> ExperimentConfig:
    """Validate a parsed TOML document and turn it into an :class:`ExperimentConfig`."""
    _require(isinstance(doc, dict), "configuration must be a table")
    name = doc.get("name", "experiment")
    horizon = doc.get("horizon")
    _require(isinstance(horizon, int) and horizon >= 0, "horizon must be a non-negative integer")
    if "seeds" in doc:
        seeds = doc["seeds"]
        _require(isinstance(seeds, list) and all(isinstance(s, int) and s >= 0 for s in seeds),
                 "seeds must be a list of non-negative integers")
    else:
        reps = doc.get("replications", 1)
        _require(isinstance(reps, int) and reps >= 1, "replications must be a positive integer")
        seeds = list(range(reps))
    window = doc.get("window", DEFAULT_WINDOW)
    _require(isinstance(window, int) and window >= 1, "window must be a positive integer")
    threshold = float(doc.get("threshold", DEFAULT_THRESHOLD))
    _require(0.0 < threshold <= 1.0, "threshold must lie in (0, 1]")

    env = dict(doc.get("environment", {}))
    _require(env.get("type") in ENV_TYPES, f"environment.type must be one of {sorted(ENV_TYPES)}")
    env.setdefault("features", "linear")
    env.setdefault("target", "optimal")
    _require(env["target"] in ("optimal", "projection"), "environment.target must be 'optimal' or 'projection'")

    raw_policies = doc.get("policies", [])
    _require(isinstance(raw_policies, list) and raw_policies, "at least one [[policies]] entry is required")
    policies, names = [], set()
    for entry in raw_policies:
        pname, ptype = entry.get("name"), entry.get("type")
        _require(isinstance(pname, str) and pname, "every policy needs a name")
        _require(pname not in names, f"duplicate policy name {pname!r}")
        _require(ptype in POLICY_TYPES, f"policy {pname!r}: type must be one of {sorted(POLICY_TYPES)}")
        names.add(pname)
        params = _as_tuple_params(entry.get("params", {}))
        grid = entry.get("grid", default_grid(ptype, params))
        _require(all(isinstance(v, list) and v for v in grid.values()),
                 f"policy {pname!r}: grid values must be non-empty lists")
        policies.append(PolicySpec(pname, ptype, params, {k: list(v) for k, v in grid.items()},
                                   entry.get("features")))

    base_dir = Path(base_dir)
    return ExperimentConfig(
        name=name, horizon=horizon, seeds=seeds, environment=env, policies=policies,
        seed_base=int(doc.get("seed_base", 0)), window=window, threshold=threshold,
        out=base_dir / doc.get("out", "results"), jobs=int(doc.get("jobs", 1)), base_dir=base_dir,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return parse_config(doc, path.parent)


def build_environment(env_cfg: dict, base_dir="."):
    """Instantiate the environment and its feature map; dataset problems are config errors."""
    kind = env_cfg["type"]
    kwargs = {k: v for k, v in env_cfg.items() if k not in ENV_META_KEYS}
    if kind == "classification":
        _require("dataset" in env_cfg, "classification environments need a dataset path")
        X, labels = load_classification_csv(Path(base_dir) / env_cfg["dataset"], env_cfg.get("label", "label"))
        env = ClassificationEnv(X, labels, **kwargs)
    else:
        try:
            env = ENV_TYPES[kind](**kwargs)
        except TypeError as exc:
            raise ConfigError(f"environment {kind!r}: {exc}") from exc
    features = ContextFeatures(env_cfg.get("features", "linear")).fit()
    return env, features


def _policy_features(spec: PolicySpec, default: ContextFeatures) -> ContextFeatures:
    return default if spec.features is None else ContextFeatures(spec.features).fit()


def _validate_policies(config: ExperimentConfig, env, features):
    for spec in config.policies:
        n_out = _policy_features(spec, features).n_output_features(env.n_features)
        for point in spec.grid_points():
            try:
                clone(spec.build(point)).start(env.n_arms, n_out)
            except BanditError as exc:
                raise ConfigError(f"policy {spec.name!r} at {point}: {exc}") from exc


def _run_one(task):
    spec, point, env, features, seed, kwargs = task
    return run_replication(spec.build(point), env, kwargs["horizon"], seed, features,
                           seed_base=kwargs["seed_base"], target_coef=kwargs["target_coef"],
                           name=spec.name, use_warm_start=kwargs["warm_start"],
                           track_mse=kwargs["track_mse"])


def _map(tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, tasks, chunksize=1))


def select_best(grid_rows: list[dict]) -> int:
    """Index of the grid row with the lowest mean final regret (first one on ties)."""
    if not grid_rows:
        raise ConfigError("empty grid")
    return int(np.argmin([row["mean_final_regret"] for row in grid_rows]))


def _stats(traces, window, threshold) -> dict:
    finals = np.array([tr.final_regret for tr in traces])
    se = float(finals.std(ddof=1) / np.sqrt(len(finals))) if len(finals) > 1 else 0.0
    return {
        "mean_final_regret": float(finals.mean()),
        "se_final_regret": se,
        "optimal_assignment_rate": optimal_assignment_rate(traces, window, threshold),
    }


def _jsonable(value):
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def run_experiment(config: ExperimentConfig, write: bool = True) -> dict:
    """Run every policy at every grid point on every seed and keep each policy's best point.

    Configuration problems (unknown parameters, unreadable datasets,
    invalid hyperparameter values) raise :class:`ConfigError` before any
    replication starts. When ``write`` is set, the traces of each policy's
    selected grid point, ``summary.json`` and ``regret.svg``/``regret.csv``
    go to ``config.out``. The returned summary carries the traces of the
    selected points under the private key ``"_traces"``.
    """
    env, features = build_environment(config.environment, config.base_dir)
    _validate_policies(config, env, features)
    projection = config.environment["target"] == "projection"
    kwargs = {
        "horizon": config.horizon, "seed_base": config.seed_base,
        "warm_start": bool(config.environment.get("warm_start", True)),
        "track_mse": bool(config.environment.get("track_mse", False)),
    }

    tasks, keys = [], []
    for spec in config.policies:
        feats = _policy_features(spec, features)
        # a mis-specified feature map is judged against the best assignment it can represent
        spec_kwargs = {**kwargs, "target_coef": env.projected_coefficients(feats) if projection else None}
        for g, point in enumerate(spec.grid_points()):
            for seed in config.seeds:
                tasks.append((spec, point, env, feats, seed, spec_kwargs))
                keys.append((spec.name, g))
    results = _map(tasks, config.jobs)
    by_point = {}
    for key, trace in zip(keys, results):
        by_point.setdefault(key, []).append(trace)

    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "name": config.name,
        "horizon": config.horizon,
        "seed_base": config.seed_base,
        "seeds": list(config.seeds),
        "window": config.window,
        "threshold": config.threshold,
        "environment": {k: _jsonable(v) for k, v in config.environment.items()},
        "policies": {},
    }
    selected_traces = []
    for spec in config.policies:
        points = spec.grid_points()
        rows = [{"params": {k: _jsonable(v) for k, v in p.items()},
                 **_stats(by_point[(spec.name, g)], config.window, config.threshold)}
                for g, p in enumerate(points)]
        best = select_best(rows)
        traces = by_point[(spec.name, best)]
        selected_traces.extend(traces)
        entry = {
            "type": spec.type,
            "features": _policy_features(spec, features).kind,
            "params": {k: _jsonable(v) for k, v in spec.build(points[best]).get_params().items()},
            "selected_grid_point": rows[best]["params"],
            "grid": rows,
            "seeds": [tr.seed for tr in traces],
            "final_regret": [tr.final_regret for tr in traces],
            "normalized_regret": [tr.normalized_regret for tr in traces],
            "agreement": [agreement(tr, config.window) for tr in traces],
            **rows[best],
        }
        if kwargs["track_mse"] and traces and traces[0].mse:
            entry["mse"] = {str(a): float(np.mean([tr.mse[a] for tr in traces])) for a in traces[0].mse}
        summary["policies"][spec.name] = entry

    if write:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        for trace in selected_traces:
            trace.write_csv(out)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        emit_charts(selected_traces, out, title=f"{config.name}: cumulative regret")
    summary["_traces"] = selected_traces
    return summary


def read_summary(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read summary {path}: {exc}") from exc
    if doc.get("schema_version") != SUMMARY_SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported summary schema version {doc.get('schema_version')!r}")
    return doc
