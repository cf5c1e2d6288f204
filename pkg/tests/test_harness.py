import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeorch.config import load_config, parse_config
from edgeorch.decision import BETTER_SCORE, INITIAL_PLACEMENT, NODE_OFF, PREDICTED_OFF
from edgeorch.errors import InvalidConfig, MisalignedSeries
from edgeorch.harness import (
    comparison_rows,
    compare_policies,
    run_scenario,
    score_predictions,
    write_comparison,
    write_outputs,
)


def scenario(policy="reactive", nodes=None, services=None, duration=600, **extra):
    cfg = {
        "seed": 1,
        "duration_ticks": duration,
        "training_days": 0.1,  # 144 ticks
        "fleet": {"nodes": nodes or [
            {"id": "a", "cpu_millicores": 2000, "mem_mib": 2048},
            {"id": "b", "cpu_millicores": 2000, "mem_mib": 2048},
        ]},
        "services": services or [{"id": "s1", "cpu_millicores": 500, "mem_mib": 512}],
        "policy": {"policy": policy, "hysteresis": "inf"},
        "predictor": {"hidden": 4, "epochs": 1, "batch_size": 64},
    }
    cfg.update(extra)
    return parse_config(cfg)


def outage_nodes(start=300, length=40):
    return [
        {"id": "a", "cpu_millicores": 2000, "mem_mib": 2048, "outages": [[start, length]]},
        {"id": "b", "cpu_millicores": 2000, "mem_mib": 2048},
    ]


# ---- prediction scoring


def test_perfect_predictions():
    truth = np.array([[True, False], [False, True]])
    s = score_predictions(truth, truth)
    assert s.accuracy == 1.0 and s.precision == 1.0 and s.recall == 1.0


def test_all_on_predictions_have_zero_recall():
    truth = np.array([True, False, True, False])
    s = score_predictions(np.ones(4, bool), truth)
    assert s.recall == 0.0
    assert math.isnan(s.precision)


def test_hand_built_confusion_matrix():
    pred = np.array([
        [1, 1, 0, 0, 1, 1, 1, 0, 1, 1],
        [0, 0, 0, 1, 1, 1, 1, 1, 1, 1],
        [1, 0, 1, 0, 1, 0, 1, 0, 1, 0],
    ], dtype=bool)
    true = np.array([
        [1, 1, 1, 0, 0, 1, 1, 1, 1, 1],
        [0, 0, 1, 1, 1, 1, 1, 1, 0, 1],
        [1, 1, 1, 1, 1, 0, 0, 0, 1, 0],
    ], dtype=bool)
    # counted by hand, OFF positive: tp = both OFF, fp = pred OFF/true ON, fn = pred ON/true OFF
    s = score_predictions(pred, true)
    # row by row (tp, fp, fn, tn): (1, 2, 1, 6), (2, 1, 1, 6), (3, 2, 1, 4)
    assert (s.tp, s.fp, s.fn, s.tn) == (6, 5, 3, 16)
    assert s.precision == pytest.approx(6 / 11)
    assert s.recall == pytest.approx(6 / 9)
    assert s.accuracy == pytest.approx(22 / 30)


def test_misaligned_series():
    with pytest.raises(MisalignedSeries):
        score_predictions(np.ones(3, bool), np.ones(4, bool))


# ---- runs


def test_always_on_reactive_has_no_downtime():
    m = run_scenario(scenario()).metrics
    assert m.total_downtime == 0
    assert m.migration_count() - m.migration_count(INITIAL_PLACEMENT) == 0


def test_reactive_outage_costs_exactly_d():
    cfg = scenario(nodes=outage_nodes())
    m = run_scenario(cfg).metrics
    assert m.migration_count(NODE_OFF) == 1
    assert m.total_downtime == cfg.policy.migration_ticks


def test_oracle_outage_costs_nothing():
    m = run_scenario(scenario("proactive_oracle", nodes=outage_nodes())).metrics
    assert m.migration_count(PREDICTED_OFF) == 1
    assert m.migration_count(NODE_OFF) == 0
    assert m.total_downtime == 0


def test_unrecoverable_outage_counts_pending():
    nodes = [{"id": "a", "cpu_millicores": 1000, "mem_mib": 1024, "outages": [[300, 50]]}]
    m = run_scenario(scenario(nodes=nodes)).metrics
    s = m.services["s1"]
    # back on the only node after the outage, then a D-tick restart
    assert s.pending_ticks == 50
    assert s.migrating_unavailable_ticks == 2


def test_identical_seed_identical_log():
    cfg = scenario("proactive_oracle", nodes=outage_nodes())
    assert run_scenario(cfg).event_log.text() == run_scenario(cfg).event_log.text()


def test_log_completeness():
    cfg = scenario("proactive_oracle", nodes=outage_nodes())
    result = run_scenario(cfg)
    logged = [line for line in result.event_log.lines if '"topic":"de.actions"' in line]
    assert len(logged) == len(result.engine.executed) == result.metrics.migration_count()


def test_metrics_conservation_and_bounds():
    cfg = scenario("reactive", nodes=outage_nodes(), services=[
        {"id": "s1", "cpu_millicores": 1500, "mem_mib": 1500},
        {"id": "s2", "cpu_millicores": 1500, "mem_mib": 1500},
    ])
    m = run_scenario(cfg).metrics
    for s in m.services.values():
        total = s.running_ticks + s.migrating_unavailable_ticks + s.pending_ticks + s.off_host_ticks
        assert total == cfg.total_ticks - s.placement_tick
        assert 0 <= s.downtime_ticks <= cfg.total_ticks


def test_seed_isolation_across_policies():
    cfg = scenario(nodes=[{"id": "a", "cpu_millicores": 2000, "mem_mib": 2048, "flip_noise_p": 0.05},
                          {"id": "b", "cpu_millicores": 2000, "mem_mib": 2048, "windows": ["00:00-06:00"]}])
    results = compare_policies(cfg, ["reactive", "proactive_oracle"])
    truths = [r.fleet.truth(0, cfg.total_ticks) for r in results.values()]
    assert (truths[0] == truths[1]).all()


@pytest.mark.parametrize("policy", ["reactive", "proactive_oracle", "proactive_lstm"])
def test_infinite_hysteresis_means_no_rebalancing(policy):
    nodes = [{"id": f"n{k}", "cpu_millicores": 1000 * (k + 1), "mem_mib": 1024 * (k + 1)} for k in range(3)]
    services = [{"id": f"s{k}", "cpu_millicores": 300, "mem_mib": 300} for k in range(4)]
    m = run_scenario(scenario(policy, nodes=nodes, services=services, duration=400)).metrics
    assert m.migration_count(BETTER_SCORE) == 0


def test_invalid_configs():
    with pytest.raises(InvalidConfig):
        parse_config({"duration_ticks": 10, "fleet": {"nodes": []}})
    with pytest.raises(InvalidConfig):
        scenario(extra_field=1)
    with pytest.raises(InvalidConfig):
        scenario(services=[{"id": "x", "cpu_millicores": 1, "mem_mib": 1}] * 2)
    with pytest.raises(InvalidConfig):
        scenario("proactive_lstm", training_days=0.01)


def test_load_config_yaml_and_json(tmp_path):
    cfg = scenario()
    (tmp_path / "s.json").write_text(cfg.model_dump_json())
    assert load_config(tmp_path / "s.json") == cfg
    (tmp_path / "bad.yaml").write_text("seed: [unclosed")
    with pytest.raises(InvalidConfig):
        load_config(tmp_path / "bad.yaml")


def test_outputs_written(tmp_path):
    result = run_scenario(scenario("proactive_lstm", nodes=outage_nodes()))
    write_outputs(result, tmp_path, dump_store=True)
    assert {p.name for p in tmp_path.iterdir()} == {"events.jsonl", "metrics.csv", "model.json", "store.jsonl"}
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert [r["id"] for r in rows] == ["s1", "__fleet__", "__predictor__"]
    assert 0.0 <= float(rows[-1]["accuracy"]) <= 1.0


def test_comparison_csv(tmp_path):
    results = compare_policies(scenario(nodes=outage_nodes()), ["reactive", "proactive_oracle"])
    rows = write_comparison(results, tmp_path)
    assert [r["policy"] for r in rows] == ["reactive", "proactive_oracle"]
    assert rows[0]["downtime_ticks"] == 2 and rows[1]["downtime_ticks"] == 0
    assert (tmp_path / "comparison.csv").exists() and (tmp_path / "reactive" / "events.jsonl").exists()
    assert comparison_rows(results) == rows


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.1), st.integers(1, 4))
def test_safety_and_capacity_under_churn(seed, noise, n_services):
    nodes = [
        {"id": f"n{k}", "cpu_millicores": 1500, "mem_mib": 1500, "flip_noise_p": noise,
         "windows": [f"{(4 * k) % 24:02d}:00-{(4 * k + 14) % 24:02d}:00"]}
        for k in range(4)
    ]
    services = [{"id": f"s{k}", "cpu_millicores": 400 + 100 * k, "mem_mib": 500} for k in range(n_services)]
    for policy in ("reactive", "proactive_oracle"):
        # check_invariants raises on any violation
        run_scenario(scenario(policy, nodes=nodes, services=services, duration=1000, seed=seed), check_invariants=True)
