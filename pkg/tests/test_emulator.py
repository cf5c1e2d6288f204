import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeorch.emulator import (
    OFF,
    ON,
    AvailabilitySchedule,
    Fleet,
    NodeSpec,
    NoiseStream,
    StateReport,
    build_fleet,
    emit_reports,
    inject_outage,
    node_status_at,
    parse_hhmm,
    parse_window,
    status_series,
)
from edgeorch.errors import InvalidFleetConfig, MalformedReport, UnknownNode
from edgeorch.sim import EventLoop, MessageBus, fork_rng

from conftest import always_on


def _fleet_cfg(*entries):
    return {"nodes": list(entries)}


def test_explicit_nodes_in_config_order():
    cfg = _fleet_cfg(
        {"id": "zeta", "cpu_millicores": 1000, "mem_mib": 512, "windows": ["08:00-18:00"]},
        {"id": "alpha", "cpu_millicores": 2000, "mem_mib": 1024},
    )
    nodes = build_fleet(cfg, fork_rng(0, "fleet"))
    assert [n.node_id for n in nodes] == ["zeta", "alpha"]
    assert nodes[0].schedule.on_windows == [(480, 1080)]
    assert nodes[1].schedule.on_windows == [(0, 1440)]


@pytest.mark.parametrize(
    "cfg",
    [
        {"nodes": []},
        {},
        {"nodes": [{"id": "a", "cpu_millicores": 0, "mem_mib": 10}]},
        {"nodes": [{"id": "a", "cpu_millicores": 10, "mem_mib": 10, "windows": ["25:00-26:00"]}]},
        {"nodes": [{"id": "a", "cpu_millicores": 10, "mem_mib": 10, "flip_noise_p": 1.5}]},
        {"nodes": [{"id": "a", "cpu_millicores": 10, "mem_mib": 10}, {"id": "a", "cpu_millicores": 10, "mem_mib": 10}]},
    ],
)
def test_bad_fleet_configs(cfg):
    with pytest.raises(InvalidFleetConfig):
        build_fleet(cfg, fork_rng(0, "fleet"))


def test_generated_fleet_is_deterministic():
    cfg = {"generator": {"count": 6, "outages_per_day": 1.0, "flip_noise_p": 0.01}}
    a = build_fleet(cfg, fork_rng(3, "fleet"), duration=5000)
    b = build_fleet(cfg, fork_rng(3, "fleet"), duration=5000)
    assert a == b
    assert [n.node_id for n in a] == [f"node{i:02d}" for i in range(6)]
    assert a != build_fleet(cfg, fork_rng(4, "fleet"), duration=5000)


def test_wrapping_window_is_split():
    assert parse_window("22:00-02:00") == [(0, 120), (1320, 1440)]
    assert parse_window([100, 200]) == [(100, 200)]
    assert parse_hhmm("24:00") == 1440


def test_window_membership():
    sched = AvailabilitySchedule([(480, 1080)])
    assert node_status_at(sched, 720) == ON
    assert node_status_at(sched, 1200) == OFF
    assert node_status_at(sched, 1440 + 480) == ON
    assert node_status_at(sched, 1080) == OFF


def test_unsorted_windows_rejected():
    with pytest.raises(InvalidFleetConfig):
        AvailabilitySchedule([(500, 600), (100, 550)])


def test_forced_flip_inverts_base_status():
    sched = AvailabilitySchedule([(480, 1080)], flip_noise_p=1.0)
    noise = NoiseStream(fork_rng(1, "n"))
    base = AvailabilitySchedule([(480, 1080)])
    for t in range(0, 3000, 7):
        assert node_status_at(sched, t, noise) != node_status_at(base, t)


def test_flip_rate_monte_carlo():
    sched = AvailabilitySchedule([(0, 1440)], flip_noise_p=0.1)
    on = status_series(sched, 0, 10_000, NoiseStream(fork_rng(5, "noise/x")))
    assert abs((~on).mean() - 0.1) <= 0.01


def test_status_series_matches_pointwise():
    sched = AvailabilitySchedule([(100, 400), (900, 1300)], flip_noise_p=0.05, outages=[(2000, 50)])
    series = status_series(sched, 0, 4000, NoiseStream(fork_rng(2, "noise/n")))
    point = NoiseStream(fork_rng(2, "noise/n"))
    assert [node_status_at(sched, t, point) == ON for t in range(4000)] == series.tolist()


def test_reports_all_on():
    fleet = Fleet([always_on("a"), always_on("b"), always_on("c")], 0)
    states, resources = emit_reports(fleet, 0)
    assert [s.state for s in states] == [ON] * 3
    assert len(resources) == 3


def test_off_node_gets_state_report_only():
    fleet = Fleet([always_on("a", outages=[(0, 5)]), always_on("b")], 0)
    states, resources = emit_reports(fleet, 2)
    assert states[0] == StateReport(2, "a", OFF)
    assert [r.container_id for r in resources] == ["b"]


def test_reports_published_on_bus():
    loop = EventLoop()
    bus = MessageBus(loop)
    got = []
    bus.subscribe("node.state", got.append)
    bus.subscribe("node.resources", got.append)
    emit_reports(Fleet([always_on("a"), always_on("b")], 0), 0, bus)
    loop.drain()
    assert [m.topic for m in got] == ["node.resources", "node.resources", "node.state", "node.state"]


def test_free_memory_after_binding():
    fleet = Fleet([always_on("a", cpu=1000, mem=1024)], 0)
    fleet.bind("svc", "a", 100, 512)
    assert fleet.free("a") == (900, 512)
    assert fleet.host_of("svc") == "a"
    with pytest.raises(ValueError):
        fleet.bind("big", "a", 100, 600)
    fleet.unbind("svc")
    assert fleet.free("a") == (1000, 1024)


def test_inject_outage():
    fleet = Fleet([always_on("a")], 0)
    fleet.truth(0, 200)
    inject_outage(fleet, "a", 100, 10)
    assert fleet.status("a", 105) == OFF
    assert fleet.status("a", 110) == ON
    with pytest.raises(UnknownNode):
        inject_outage(fleet, "ghost", 100, 10)


def test_overlapping_outages_union():
    fleet = Fleet([always_on("a", outages=[(10, 10), (15, 10)])], 0)
    row = fleet.truth(0, 40)[0]
    assert np.flatnonzero(~row).tolist() == list(range(10, 25))


def test_state_report_from_dict():
    assert StateReport.from_dict({"timestamp": 3, "container_id": "a", "state": "ON"}) == StateReport(3, "a", ON)
    for bad in ({"timestamp": 3}, {"timestamp": -1, "container_id": "a", "state": ON},
                {"timestamp": 1, "container_id": "a", "state": "MAYBE"}, None):
        with pytest.raises(MalformedReport):
            StateReport.from_dict(bad)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.floats(0, 1), st.integers(0, 5000))
def test_status_is_pure_function_of_seed_and_tick(seed, p, t):
    sched = AvailabilitySchedule([(300, 900)], flip_noise_p=p)
    a = Fleet([NodeSpec("n", 1, 1, sched)], seed)
    b = Fleet([NodeSpec("n", 1, 1, sched)], seed)
    b.truth(0, t + 100)  # materialise a longer prefix first
    assert a.status("n", t) == b.status("n", t)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 800), st.integers(1, 800)), max_size=6))
def test_resource_conservation(requests):
    fleet = Fleet([always_on("a", cpu=2000, mem=2000)], 0)
    placed = []
    for k, (cpu, mem) in enumerate(requests):
        try:
            fleet.bind(f"s{k}", "a", cpu, mem)
            placed.append((cpu, mem))
        except ValueError:
            pass
        free_cpu, free_mem = fleet.free("a")
        assert free_cpu == 2000 - sum(c for c, _ in placed) >= 0
        assert free_mem == 2000 - sum(m for _, m in placed) >= 0
