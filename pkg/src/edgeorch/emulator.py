"""Volatile extreme-edge fleet: capacities, daily ON windows, churn and telemetry."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import InvalidFleetConfig, MalformedReport, UnknownNode
from .sim import DAY_TICKS, TOPIC_NODE_RESOURCES, TOPIC_NODE_STATE, MessageBus, RngStream, fork_rng

ON = "ON"
OFF = "OFF"
_HHMM = re.compile(r"^(\d{1,2}):(\d{2})$")


@dataclass
class AvailabilitySchedule:
    on_windows: list[tuple[int, int]] = field(default_factory=list)
    flip_noise_p: float = 0.0
    outages: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.on_windows = [(int(a), int(b)) for a, b in self.on_windows]
        self.outages = [(int(s), int(d)) for s, d in self.outages]
        if not 0.0 <= self.flip_noise_p <= 1.0:
            raise InvalidFleetConfig(f"flip_noise_p {self.flip_noise_p} outside [0, 1]")
        prev_end = 0
        for start, end in self.on_windows:
            if not 0 <= start < end <= DAY_TICKS:
                raise InvalidFleetConfig(f"malformed window [{start}, {end})")
            if start < prev_end:
                raise InvalidFleetConfig("windows must be sorted and non-overlapping")
            prev_end = end
        for start, duration in self.outages:
            if start < 0 or duration < 0:
                raise InvalidFleetConfig(f"malformed outage ({start}, {duration})")

    def day_mask(self) -> np.ndarray:
        mask = np.zeros(DAY_TICKS, dtype=bool)
        for start, end in self.on_windows:
            mask[start:end] = True
        return mask

    def in_window(self, t: int) -> bool:
        tod = t % DAY_TICKS
        return any(start <= tod < end for start, end in self.on_windows)

    def in_outage(self, t: int) -> bool:
        return any(start <= t < start + duration for start, duration in self.outages)


@dataclass
class NodeSpec:
    node_id: str
    cpu_capacity: int
    mem_capacity: int
    schedule: AvailabilitySchedule = field(default_factory=AvailabilitySchedule)

    def __post_init__(self) -> None:
        if not self.node_id:
            raise InvalidFleetConfig("node id must be non-empty")
        if self.cpu_capacity <= 0 or self.mem_capacity <= 0:
            raise InvalidFleetConfig(f"node {self.node_id}: capacities must be positive")


@dataclass(frozen=True)
class StateReport:
    timestamp: int
    container_id: str
    state: str

    def to_dict(self) -> dict:
        return {"timestamp": self.timestamp, "container_id": self.container_id, "state": self.state}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StateReport":
        try:
            timestamp, container_id, state = data["timestamp"], data["container_id"], data["state"]
        except (KeyError, TypeError) as exc:
            raise MalformedReport(f"missing field in report: {exc}") from None
        if isinstance(timestamp, bool) or not isinstance(timestamp, int) or timestamp < 0:
            raise MalformedReport(f"bad timestamp {timestamp!r}")
        if not isinstance(container_id, str) or not container_id:
            raise MalformedReport(f"bad container_id {container_id!r}")
        if state not in (ON, OFF):
            raise MalformedReport(f"bad state {state!r}")
        return cls(timestamp, container_id, state)


@dataclass(frozen=True)
class ResourceReport:
    timestamp: int
    container_id: str
    free_cpu: int
    free_mem: int


class NoiseStream:
    """Per-node uniform draws indexed by tick.

    Draw ``t`` is always the t-th value of the node's own stream, so the
    status at any tick is a pure function of (schedule, t, seed).
    """

    def __init__(self, rng: RngStream, chunk: int = 4096):
        self._rng = rng
        self._chunk = chunk
        self._draws = np.empty(0)

    def _ensure(self, n: int) -> None:
        if n > len(self._draws):
            extra = max(n - len(self._draws), self._chunk)
            self._draws = np.concatenate([self._draws, self._rng.random(extra)])

    def draw(self, t: int) -> float:
        self._ensure(t + 1)
        return float(self._draws[t])

    def draws(self, t0: int, t1: int) -> np.ndarray:
        self._ensure(t1)
        return self._draws[t0:t1]


def node_status_at(schedule: AvailabilitySchedule, t: int, rng: NoiseStream | None = None) -> str:
    if t < 0:
        raise ValueError("tick must be non-negative")
    on = schedule.in_window(t)
    if schedule.flip_noise_p > 0.0:
        if rng is None:
            raise ValueError("noisy schedule needs a noise stream")
        if rng.draw(t) < schedule.flip_noise_p:
            on = not on
    # outages override windows and noise
    if schedule.in_outage(t):
        on = False
    return ON if on else OFF


def status_series(schedule: AvailabilitySchedule, t0: int, t1: int, rng: NoiseStream | None = None) -> np.ndarray:
    """Vectorised ``node_status_at`` over [t0, t1); True means ON."""
    ticks = np.arange(t0, t1)
    on = schedule.day_mask()[ticks % DAY_TICKS]
    if schedule.flip_noise_p > 0.0:
        if rng is None:
            raise ValueError("noisy schedule needs a noise stream")
        on = on ^ (rng.draws(t0, t1) < schedule.flip_noise_p)
    for start, duration in schedule.outages:
        lo, hi = max(start, t0), min(start + duration, t1)
        if lo < hi:
            on[lo - t0 : hi - t0] = False
    return on


# ---------------------------------------------------------------- config


def parse_hhmm(text: str) -> int:
    m = _HHMM.match(text.strip())
    if not m:
        raise InvalidFleetConfig(f"bad time of day {text!r}")
    hours, minutes = int(m.group(1)), int(m.group(2))
    if minutes >= 60 or hours > 24 or (hours == 24 and minutes):
        raise InvalidFleetConfig(f"bad time of day {text!r}")
    return hours * 60 + minutes


def _split_wrapping(start: int, end: int) -> list[tuple[int, int]]:
    if start == end:
        raise InvalidFleetConfig("empty window")
    if start < end:
        return [(start, end)]
    parts = [(start, DAY_TICKS)]
    if end > 0:
        parts.insert(0, (0, end))
    return parts


def parse_window(spec: Any) -> list[tuple[int, int]]:
    """Parse ``"HH:MM-HH:MM"`` or ``[start, end]``; wrapping windows are split at midnight."""
    if isinstance(spec, str):
        try:
            a, b = spec.split("-")
        except ValueError:
            raise InvalidFleetConfig(f"bad window {spec!r}") from None
        return _split_wrapping(parse_hhmm(a), parse_hhmm(b))
    if isinstance(spec, (list, tuple)) and len(spec) == 2:
        start, end = int(spec[0]), int(spec[1])
        if not (0 <= start <= DAY_TICKS and 0 <= end <= DAY_TICKS):
            raise InvalidFleetConfig(f"bad window {spec!r}")
        return _split_wrapping(start % DAY_TICKS, end)
    raise InvalidFleetConfig(f"bad window {spec!r}")


def _merge(windows: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for start, end in sorted(windows):
        if out and start <= out[-1][1]:
            raise InvalidFleetConfig("windows overlap")
        out.append((start, end))
    return out


def _ticks(value: Any) -> int:
    return parse_hhmm(value) if isinstance(value, str) else int(value)


def _range(value: Any, name: str) -> tuple[int, int]:
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise InvalidFleetConfig(f"{name} must be [low, high]")
        lo, hi = _ticks(value[0]), _ticks(value[1])
    else:
        lo = hi = _ticks(value)
    if lo > hi or lo < 0:
        raise InvalidFleetConfig(f"{name}: bad range {value!r}")
    return lo, hi


def _outages(items: Any) -> list[tuple[int, int]]:
    out = []
    for item in items or []:
        if isinstance(item, Mapping):
            out.append((int(item["start"]), int(item["duration"])))
        else:
            start, duration = item
            out.append((int(start), int(duration)))
    return out


def _explicit_node(entry: Mapping[str, Any]) -> NodeSpec:
    try:
        node_id = str(entry["id"])
        cpu, mem = int(entry["cpu_millicores"]), int(entry["mem_mib"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidFleetConfig(f"bad node entry {entry!r}: {exc}") from None
    windows: list[tuple[int, int]] = []
    for spec in entry.get("windows", ["00:00-24:00"]):
        windows.extend(parse_window(spec))
    schedule = AvailabilitySchedule(
        on_windows=_merge(windows),
        flip_noise_p=float(entry.get("flip_noise_p", 0.0)),
        outages=_outages(entry.get("outages")),
    )
    return NodeSpec(node_id, cpu, mem, schedule)


def _generated_nodes(gen: Mapping[str, Any], rng: RngStream, duration: int | None) -> list[NodeSpec]:
    count = int(gen.get("count", 0))
    prefix = str(gen.get("id_prefix", "node"))
    width = max(2, len(str(count - 1)))
    cpu_lo, cpu_hi = _range(gen.get("cpu_millicores", [2000, 8000]), "cpu_millicores")
    mem_lo, mem_hi = _range(gen.get("mem_mib", [2048, 8192]), "mem_mib")
    len_lo, len_hi = _range(gen.get("window_len_range", [360, 960]), "window_len_range")
    if len_lo <= 0 or len_hi > DAY_TICKS:
        raise InvalidFleetConfig("window_len_range must lie in (0, 1440]")
    always_on = int(gen.get("always_on", 0))
    noise = float(gen.get("flip_noise_p", 0.0))
    outage_rate = float(gen.get("outages_per_day", 0.0))
    out_lo, out_hi = _range(gen.get("outage_len_range", [10, 60]), "outage_len_range")
    nodes = []
    for i in range(count):
        cpu = int(rng.integers(cpu_lo, cpu_hi + 1))
        mem = int(rng.integers(mem_lo, mem_hi + 1))
        start = int(rng.integers(0, DAY_TICKS))
        length = int(rng.integers(len_lo, len_hi + 1))
        if i < always_on or length >= DAY_TICKS:
            windows = [(0, DAY_TICKS)]
        else:
            windows = _split_wrapping(start, (start + length) % DAY_TICKS)
        outages: list[tuple[int, int]] = []
        if outage_rate > 0 and duration:
            n_out = int(rng.generator.poisson(outage_rate * duration / DAY_TICKS))
            for _ in range(n_out):
                outages.append((int(rng.integers(0, duration)), int(rng.integers(out_lo, out_hi + 1))))
            outages.sort()
        schedule = AvailabilitySchedule(on_windows=windows, flip_noise_p=noise, outages=outages)
        nodes.append(NodeSpec(f"{prefix}{i:0{width}d}", cpu, mem, schedule))
    return nodes


def build_fleet(config: Mapping[str, Any], rng: RngStream, duration: int | None = None) -> list[NodeSpec]:
    """NodeSpecs from a fleet section: explicit ``nodes`` first, then any ``generator`` block."""
    if not isinstance(config, Mapping):
        raise InvalidFleetConfig("fleet section must be a mapping")
    nodes = [_explicit_node(entry) for entry in config.get("nodes") or []]
    if config.get("generator"):
        nodes.extend(_generated_nodes(config["generator"], rng, duration))
    if not nodes:
        raise InvalidFleetConfig("fleet must contain at least one node")
    ids = [n.node_id for n in nodes]
    if len(set(ids)) != len(ids):
        raise InvalidFleetConfig("duplicate node ids")
    return nodes


# ---------------------------------------------------------------- runtime


class Fleet:
    """Live emulator state: ground truth plus the services bound to each node."""

    def __init__(self, nodes: list[NodeSpec], root_seed: int):
        self.nodes = {n.node_id: n for n in nodes}
        self.order = sorted(self.nodes)
        self.index = {nid: i for i, nid in enumerate(self.order)}
        self.noise = {nid: NoiseStream(fork_rng(root_seed, f"noise/{nid}")) for nid in self.order}
        self._truth = np.zeros((len(self.order), 0), dtype=bool)
        self._used_cpu = {nid: 0 for nid in self.order}
        self._used_mem = {nid: 0 for nid in self.order}
        self._bindings: dict[str, tuple[str, int, int]] = {}
        self.now = 0

    # ground truth
    def materialize(self, t_end: int) -> None:
        have = self._truth.shape[1]
        if t_end <= have:
            return
        t_end = max(t_end, 2 * have)
        block = np.stack(
            [status_series(self.nodes[nid].schedule, have, t_end, self.noise[nid]) for nid in self.order]
        )
        self._truth = np.concatenate([self._truth, block], axis=1)

    def truth(self, t0: int, t1: int) -> np.ndarray:
        """Boolean ON matrix, rows in lexicographic node order, columns [t0, t1)."""
        self.materialize(t1)
        return self._truth[:, t0:t1]

    def is_on(self, node_id: str, t: int) -> bool:
        self.materialize(t + 1)
        return bool(self._truth[self.index[node_id], t])

    def status(self, node_id: str, t: int) -> str:
        return ON if self.is_on(node_id, t) else OFF

    def inject_outage(self, node_id: str, start: int, duration: int) -> None:
        if node_id not in self.nodes:
            raise UnknownNode(node_id)
        if start < self.now:
            raise ValueError(f"outage start {start} is before current tick {self.now}")
        schedule = self.nodes[node_id].schedule
        schedule.outages.append((int(start), int(duration)))
        have = self._truth.shape[1]
        if have:
            row = self.index[node_id]
            self._truth[row] = status_series(schedule, 0, have, self.noise[node_id])

    # resources
    def bind(self, service_id: str, node_id: str, cpu: int, mem: int) -> None:
        if node_id not in self.nodes:
            raise UnknownNode(node_id)
        self.unbind(service_id)
        spec = self.nodes[node_id]
        if self._used_cpu[node_id] + cpu > spec.cpu_capacity or self._used_mem[node_id] + mem > spec.mem_capacity:
            raise ValueError(f"binding {service_id} would overcommit {node_id}")
        self._bindings[service_id] = (node_id, cpu, mem)
        self._used_cpu[node_id] += cpu
        self._used_mem[node_id] += mem

    def unbind(self, service_id: str) -> None:
        bound = self._bindings.pop(service_id, None)
        if bound:
            node_id, cpu, mem = bound
            self._used_cpu[node_id] -= cpu
            self._used_mem[node_id] -= mem

    def host_of(self, service_id: str) -> str | None:
        bound = self._bindings.get(service_id)
        return bound[0] if bound else None

    def free(self, node_id: str) -> tuple[int, int]:
        spec = self.nodes[node_id]
        return spec.cpu_capacity - self._used_cpu[node_id], spec.mem_capacity - self._used_mem[node_id]


def emit_reports(
    fleet: Fleet, t: int, bus: MessageBus | None = None
) -> tuple[list[StateReport], list[ResourceReport]]:
    """Node-initiated telemetry for tick ``t``: a state report per node, resources for ON nodes."""
    fleet.now = max(fleet.now, t)
    fleet.materialize(t + 1)
    column = fleet._truth[:, t]
    states: list[StateReport] = []
    resources: list[ResourceReport] = []
    for row, nid in enumerate(fleet.order):
        on = bool(column[row])
        states.append(StateReport(t, nid, ON if on else OFF))
        if on:
            free_cpu, free_mem = fleet.free(nid)
            resources.append(ResourceReport(t, nid, free_cpu, free_mem))
    if bus is not None:
        for report in states:
            bus.publish(TOPIC_NODE_STATE, report)
        for report in resources:
            bus.publish(TOPIC_NODE_RESOURCES, report)
    return states, resources


def inject_outage(fleet: Fleet, node_id: str, start: int, duration: int) -> None:
    fleet.inject_outage(node_id, start, duration)
