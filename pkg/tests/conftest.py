from pathlib import Path

import pytest

from edgeorch.emulator import AvailabilitySchedule, Fleet, NodeSpec

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def always_on(node_id: str, cpu: int = 4000, mem: int = 8192, outages=()) -> NodeSpec:
    return NodeSpec(node_id, cpu, mem, AvailabilitySchedule([(0, 1440)], 0.0, list(outages)))


def windowed(node_id: str, start: int, end: int, cpu: int = 4000, mem: int = 8192, noise: float = 0.0) -> NodeSpec:
    return NodeSpec(node_id, cpu, mem, AvailabilitySchedule([(start, end)], noise))


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIOS


@pytest.fixture
def small_fleet() -> Fleet:
    return Fleet([always_on("a"), always_on("b"), windowed("c", 480, 1080)], root_seed=7)
