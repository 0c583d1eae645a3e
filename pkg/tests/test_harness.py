import json
import xml.etree.ElementTree as ET

import numpy as np
import pandas as pd
import pytest

from balanced_bandits import cli
from balanced_bandits.environments import QuadraticEnv
from balanced_bandits.exceptions import ConfigError
from balanced_bandits.harness.charts import emit_charts, regret_curves, render_svg
from balanced_bandits.harness.experiment import (
    load_config,
    parse_config,
    read_summary,
    run_experiment,
    select_best,
)
from balanced_bandits.harness.metrics import optimal_assignment_rate, pairwise_compare, sign_test
from balanced_bandits.harness.runner import run_replication
from balanced_bandits.harness.trace import RegretTrace
from balanced_bandits.policies import FixedArmPolicy, OraclePolicy, UniformPolicy


def config_doc(**overrides):
    doc = {
        "name": "unit",
        "horizon": 50,
        "replications": 2,
        "environment": {"type": "quadratic", "features": "quadratic"},
        "policies": [
            {"name": "LinTS", "type": "linear", "params": {"kind": "LinTS"}, "grid": {"alpha": [0.5, 1.0]}},
            {"name": "uniform", "type": "uniform"},
        ],
    }
    doc.update(overrides)
    return doc


def test_horizon_zero_gives_empty_traces(tmp_path):
    summary = run_experiment(parse_config(config_doc(horizon=0, out=str(tmp_path)), "."))
    assert all(len(tr) == 0 for tr in summary["_traces"])
    assert summary["horizon"] == 0
    assert summary["policies"]["uniform"]["mean_final_regret"] == 0.0
    assert (tmp_path / "summary.json").exists()
    ET.fromstring((tmp_path / "regret.svg").read_text())


def test_oracle_policy_has_zero_regret():
    for env in (QuadraticEnv(),):
        trace = run_replication(OraclePolicy(), env, 300, 0)
        assert trace.final_regret == 0.0
        assert optimal_assignment_rate([trace], 200) == 1.0


def test_uniform_regret_matches_monte_carlo_expectation():
    env = QuadraticEnv()
    X = env.sample_contexts(1_000_000, np.random.default_rng(123))
    means = env.mean_rewards_batch(X)
    per_step = np.mean(means.max(axis=1) - means.mean(axis=1))
    finals = [run_replication(UniformPolicy(), env, 1000, s).final_regret for s in range(20)]
    assert abs(np.mean(finals) - 1000 * per_step) <= 0.15 * 1000 * per_step


def test_uniform_policy_never_finds_the_assignment():
    traces = [run_replication(UniformPolicy(), QuadraticEnv(), 600, s) for s in range(5)]
    assert optimal_assignment_rate(traces, 500) == 0.0


def test_accounting_identity_and_monotone_cumulative_regret():
    trace = run_replication(FixedArmPolicy(arm=1), QuadraticEnv(), 200, 3)
    # the cumulative column is the left-to-right running sum, so compare against the same order
    assert trace.final_regret == sum(trace.regret.tolist())
    assert np.all(np.diff(trace.cumulative_regret) >= 0)


def test_trace_csv_round_trip(tmp_path):
    trace = run_replication(UniformPolicy(), QuadraticEnv(), 30, 4, name="uni_form")
    back = RegretTrace.read_csv(trace.write_csv(tmp_path))
    assert back.policy == "uni_form" and back.seed == 4
    assert back.to_csv() == trace.to_csv()


def test_assignment_rate_threshold():
    trace = RegretTrace("p", 0, t=np.arange(100), context_hash=[""] * 100, arm=np.zeros(100, int),
                        reward=np.zeros(100), optimal_reward=np.zeros(100), regret=np.zeros(100),
                        optimal_arm=np.zeros(100, int), target_arm=np.r_[np.ones(4, int), np.zeros(96, int)])
    assert optimal_assignment_rate([trace], window=100) == 1.0
    assert optimal_assignment_rate([trace], window=50) == 1.0
    assert optimal_assignment_rate([trace], window=100, threshold=0.97) == 0.0
    assert optimal_assignment_rate([]) == 0.0


def test_invalid_grid_is_rejected_before_running(tmp_path):
    bad = config_doc(out=str(tmp_path / "never"))
    bad["policies"][0]["grid"] = {"alpha": [0.5, -1.0]}
    with pytest.raises(ConfigError):
        run_experiment(parse_config(bad, "."))
    unknown = config_doc()
    unknown["policies"][0]["params"] = {"kind": "LinTS", "bogus": 1}
    with pytest.raises(ConfigError):
        run_experiment(parse_config(unknown, "."))
    assert not (tmp_path / "never").exists()


@pytest.mark.parametrize("change", [
    {"horizon": -1},
    {"environment": {"type": "casino"}},
    {"policies": []},
    {"window": 0},
])
def test_config_validation(change):
    with pytest.raises(ConfigError):
        parse_config(config_doc(**change))


def test_unreadable_dataset_is_a_config_error(tmp_path):
    doc = config_doc(environment={"type": "classification", "dataset": "nope.csv"})
    with pytest.raises(ConfigError):
        run_experiment(parse_config(doc, tmp_path))


def test_default_grids_follow_the_experiment_values():
    doc = config_doc()
    doc["policies"] = [{"name": n, "type": "linear", "params": {"kind": n}}
                       for n in ("LinTS", "LinUCB", "BLTS", "BLUCB")]
    grids = {p.name: p.grid for p in parse_config(doc).policies}
    assert grids["LinTS"] == {"alpha": [0.25, 0.5, 1.0]}
    assert grids["LinUCB"] == {"alpha": [1.0, 2.0, 4.0]}
    assert grids["BLTS"]["gamma"] == [0.01, 0.05, 0.1, 0.2]
    assert len(parse_config(doc).policies[3].grid_points()) == 12


def test_selection_is_a_function_of_the_summary(tmp_path):
    run_experiment(parse_config(config_doc(out=str(tmp_path)), "."))
    summary = read_summary(tmp_path / "summary.json")
    for entry in summary["policies"].values():
        assert entry["grid"][select_best(entry["grid"])]["params"] == entry["selected_grid_point"]
    assert select_best([{"mean_final_regret": 2.0}, {"mean_final_regret": 1.0},
                        {"mean_final_regret": 1.0}]) == 1


def test_repeated_runs_are_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        run_experiment(parse_config(config_doc(out=str(out)), "."))
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir())
    assert files == sorted(p.name for p in outs[1].iterdir())
    for name in files:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_parallel_jobs_do_not_change_results(tmp_path):
    serial = run_experiment(parse_config(config_doc(), "."), write=False)
    parallel = run_experiment(parse_config(config_doc(jobs=2), "."), write=False)
    assert [t.to_csv() for t in serial["_traces"]] == [t.to_csv() for t in parallel["_traces"]]


def test_summary_is_versioned(tmp_path):
    path = tmp_path / "summary.json"
    path.write_text(json.dumps({"schema_version": 0, "policies": {}}))
    with pytest.raises(ConfigError):
        read_summary(path)


# comparisons


def summary_of(per_policy):
    return {"name": "exp", "policies": {
        name: {"seeds": list(range(len(v))), "normalized_regret": list(v)} for name, v in per_policy.items()}}


def test_identical_policies_tie():
    vals = [0.3, 0.1, 0.5]
    rows = pairwise_compare([summary_of({"a": vals, "b": vals})])["exp"]
    assert all(r["outcome"] == "tie" and r["p_value"] == 1.0 for r in rows)


def test_report_is_antisymmetric():
    rng = np.random.default_rng(0)
    report = pairwise_compare([summary_of({k: rng.uniform(size=8) for k in "abc"})])["exp"]
    index = {(r["policy"], r["opponent"]): r for r in report}
    flip = {"win": "loss", "loss": "win", "tie": "tie"}
    for (a, b), row in index.items():
        assert index[(b, a)]["outcome"] == flip[row["outcome"]]
        assert index[(b, a)]["seed_wins"] == row["seed_losses"]
        assert index[(b, a)]["p_value"] == row["p_value"]


def test_dominated_on_every_seed_gets_smallest_bucket():
    good = np.linspace(0.1, 0.2, 20)
    rows = pairwise_compare([summary_of({"good": good, "bad": good + 0.05})])["exp"]
    row = next(r for r in rows if r["policy"] == "good")
    assert row["outcome"] == "win" and row["p_bucket"] == "p<0.001"


def test_sign_test_counts():
    assert sign_test([1, 2, 3, 4], [2, 2, 1, 5])[:3] == (2, 1, 1)


# charts


def test_empty_trace_set_gives_valid_svg():
    root = ET.fromstring(render_svg({}))
    assert root.tag.endswith("svg")


def test_single_seed_band_has_zero_width():
    trace = run_replication(UniformPolicy(), QuadraticEnv(), 40, 0)
    curve = regret_curves([trace])[trace.policy]
    np.testing.assert_array_equal(curve["se"], 0.0)


def test_chart_mean_matches_independent_recomputation(tmp_path):
    traces = [run_replication(UniformPolicy(), QuadraticEnv(), 60, s, name="U") for s in range(4)]
    for tr in traces:
        tr.write_csv(tmp_path)
    _, table = emit_charts(traces, tmp_path / "charts")
    frames = [pd.read_csv(p) for p in sorted(tmp_path.glob("trace_U_*.csv"))]
    expected = np.mean([f["cumulative_regret"].to_numpy() for f in frames], axis=0)
    got = pd.read_csv(table)
    np.testing.assert_allclose(got["mean_cumulative_regret"], expected, rtol=1e-12)
    svg_a = (tmp_path / "charts" / "regret.svg").read_bytes()
    emit_charts(traces, tmp_path / "again")
    assert (tmp_path / "again" / "regret.svg").read_bytes() == svg_a


# command line


def write_config(tmp_path, **overrides):
    doc = config_doc(**overrides)
    lines = [f'name = "{doc["name"]}"', f'horizon = {doc["horizon"]}', f'replications = {doc["replications"]}',
             'out = "out"', "[environment]", 'type = "quadratic"', 'features = "quadratic"',
             "[[policies]]", 'name = "LinTS"', 'type = "linear"', 'params = { kind = "LinTS" }',
             "grid = { alpha = [0.5] }", "[[policies]]", 'name = "uniform"', 'type = "uniform"']
    path = tmp_path / "run.toml"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_cli_run_compare_chart(tmp_path, capsys):
    path = write_config(tmp_path)
    assert cli.main(["run", str(path), "--seeds", "3", "--horizon", "40", "--jobs", "1"]) == 0
    out = tmp_path / "out"
    assert sorted(p.name for p in out.glob("trace_*.csv")) == [
        f"trace_{p}_{s}.csv" for p in ("LinTS", "uniform") for s in range(3)]
    assert load_config(path).horizon == 50
    assert json.loads((out / "summary.json").read_text())["horizon"] == 40
    assert cli.main(["compare", str(out / "summary.json"), "--out", str(tmp_path / "cmp.json")]) == 0
    assert "unit" in json.loads((tmp_path / "cmp.json").read_text())
    assert cli.main(["chart", str(out), "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "regret.svg").exists()


def test_cli_exit_codes(tmp_path, monkeypatch):
    assert cli.main(["run", str(tmp_path / "missing.toml")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("horizon = [", encoding="utf-8")
    assert cli.main(["run", str(bad)]) == 2
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["run", str(write_config(tmp_path)), "--seeds", "x"]) == 2

    def boom(config, write=True):
        raise FloatingPointError("diverged")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["run", str(write_config(tmp_path))]) == 3


def test_cli_dataset_validation(tmp_path, capsys):
    good = tmp_path / "good.csv"
    good.write_text("f1,f2,label\n0.1,1,a\n0.2,2,b\n0.3,3,a\n", encoding="utf-8")
    assert cli.main(["datasets", "validate", str(good)]) == 0
    assert "3 rows, 2 features, 2 classes" in capsys.readouterr().out
    assert cli.main(["datasets", "validate", str(tmp_path / "none.csv")]) == 2
