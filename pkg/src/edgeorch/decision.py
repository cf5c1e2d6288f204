"""Decision engine and actuator: node scoring, placement and proactive migration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .emulator import OFF, ON, ResourceReport, StateReport
from .errors import DestinationLost, NodeNotEligible, NoFeasibleNode, UnknownNode
from .sim import TOPIC_DE_ACTIONS, TOPIC_NODE_RESOURCES, TOPIC_NODE_STATE, TOPIC_PREDICTION, BusMessage, MessageBus

PREDICTED_OFF = "PREDICTED_OFF"
NODE_OFF = "NODE_OFF"
BETTER_SCORE = "BETTER_SCORE"
INITIAL_PLACEMENT = "INITIAL_PLACEMENT"
REASONS = (PREDICTED_OFF, NODE_OFF, BETTER_SCORE, INITIAL_PLACEMENT)

RUNNING = "Running"
MIGRATING = "Migrating"
PENDING = "Pending"

DEFAULT_WEIGHTS = (0.5, 0.5)


@dataclass(frozen=True)
class ServiceSpec:
    service_id: str
    cpu_request: int
    mem_request: int

    def __post_init__(self) -> None:
        if self.cpu_request <= 0 or self.mem_request <= 0:
            raise ValueError(f"service {self.service_id}: requests must be positive")


@dataclass
class NodeView:
    node_id: str
    state: str = OFF
    free_cpu: int = 0
    free_mem: int = 0
    tainted: bool = False
    taint_reason: str | None = None
    taint_until: int | None = None

    @property
    def eligible(self) -> bool:
        return self.state == ON and not self.tainted

    def clone(self) -> "NodeView":
        return NodeView(
            self.node_id, self.state, self.free_cpu, self.free_mem, self.tainted, self.taint_reason, self.taint_until
        )


@dataclass(frozen=True)
class MigrationAction:
    service_id: str
    from_node: str | None
    to_node: str
    reason: str
    start_tick: int
    duration: int

    def to_event(self) -> dict:
        return {
            "tick": self.start_tick,
            "service_id": self.service_id,
            "from": self.from_node,
            "to": self.to_node,
            "reason": self.reason,
            "duration": self.duration,
        }


@dataclass
class ServiceRecord:
    spec: ServiceSpec
    status: str = PENDING
    node: str | None = None  # host, or destination while migrating
    last_host: str | None = None
    migration: MigrationAction | None = None
    source_lost: bool = False
    ever_placed: bool = False


@dataclass
class ClusterView:
    nodes: dict[str, NodeView] = field(default_factory=dict)
    services: dict[str, ServiceRecord] = field(default_factory=dict)
    predictions: dict[int, frozenset] = field(default_factory=dict)
    latest_prediction: object | None = None

    @classmethod
    def of(cls, nodes: Iterable[NodeView], services: Iterable[ServiceSpec] = ()) -> "ClusterView":
        view = cls({n.node_id: n for n in nodes})
        for spec in services:
            view.services[spec.service_id] = ServiceRecord(spec)
        return view

    @property
    def placements(self) -> dict[str, str]:
        return {sid: rec.node for sid, rec in self.services.items() if rec.node is not None}

    def node(self, node_id: str) -> NodeView:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def add_prediction(self, response) -> None:
        self.latest_prediction = response
        self.predictions[response.target_tick] = frozenset(response.off_nodes())

    def prune_predictions(self, now: int) -> None:
        for target in [t for t in self.predictions if t < now]:
            del self.predictions[target]

    def predicted_off_nodes(self, now: int) -> set[str]:
        """Nodes marked OFF by any outstanding prediction (target >= now)."""
        out: set[str] = set()
        for target, offs in self.predictions.items():
            if target >= now:
                out |= offs
        return out

    def predicted_off(self, node_id: str, now: int) -> bool:
        return node_id in self.predicted_off_nodes(now)


# ---------------------------------------------------------------- scoring


def _maxima(view: ClusterView) -> tuple[int, int]:
    c_max = m_max = 0
    for n in view.nodes.values():
        if n.eligible:
            c_max = max(c_max, n.free_cpu)
            m_max = max(m_max, n.free_mem)
    return c_max, m_max


def _raw_score(node: NodeView, maxima: tuple[int, int], weights) -> float:
    c_max, m_max = maxima
    w_cpu, w_mem = weights
    score = 0.0
    if c_max > 0:
        score += w_cpu * node.free_cpu / c_max
    if m_max > 0:
        score += w_mem * node.free_mem / m_max
    return score


def score_node(view: ClusterView, node_id: str, weights=DEFAULT_WEIGHTS) -> float:
    """Weighted free CPU and memory, each normalised by the best eligible node."""
    node = view.node(node_id)
    if not node.eligible:
        raise NodeNotEligible(f"{node_id} is {'tainted' if node.tainted else node.state}")
    return _raw_score(node, _maxima(view), weights)


def feasible_nodes(
    view: ClusterView, service: ServiceSpec, weights=DEFAULT_WEIGHTS, exclude: Iterable[str] = ()
) -> list[str]:
    """Eligible nodes that fit ``service``, best score first, ties by node id."""
    maxima = _maxima(view)
    skip = set(exclude)
    scored = [
        (-_raw_score(n, maxima, weights), n.node_id)
        for n in view.nodes.values()
        if n.eligible
        and n.node_id not in skip
        and n.free_cpu >= service.cpu_request
        and n.free_mem >= service.mem_request
    ]
    scored.sort()
    return [nid for _, nid in scored]


def place(view: ClusterView, service: ServiceSpec, weights=DEFAULT_WEIGHTS, exclude: Iterable[str] = ()) -> str:
    """Pick the best feasible node and debit the service's requests from it."""
    candidates = feasible_nodes(view, service, weights, exclude)
    if not candidates:
        raise NoFeasibleNode(service.service_id)
    chosen = view.nodes[candidates[0]]
    chosen.free_cpu -= service.cpu_request
    chosen.free_mem -= service.mem_request
    return chosen.node_id


def taint(view: ClusterView, node_id: str, reason: str = "manual", until: int | None = None) -> None:
    node = view.node(node_id)
    node.tainted = True
    node.taint_reason = reason
    if until is None or node.taint_until is None:
        node.taint_until = until
    else:
        node.taint_until = max(node.taint_until, until)


def untaint(view: ClusterView, node_id: str) -> None:
    node = view.node(node_id)
    node.tainted = False
    node.taint_reason = None
    node.taint_until = None


def expire_taints(view: ClusterView, now: int) -> None:
    for node in view.nodes.values():
        if node.tainted and node.taint_until is not None and node.taint_until <= now:
            untaint(view, node.node_id)


# ---------------------------------------------------------------- planning


def plan(
    view: ClusterView,
    hysteresis: float = 0.2,
    now: int = 0,
    migration_ticks: int = 2,
    weights=DEFAULT_WEIGHTS,
) -> list[MigrationAction]:
    """At most one action per service, services visited in id order.

    Works on a scratch copy of the node table so that earlier actions in
    the round debit resources (and taint their sources) before later ones
    choose destinations.
    """
    scratch = ClusterView(nodes={nid: n.clone() for nid, n in view.nodes.items()})
    off_soon = view.predicted_off_nodes(now)
    actions: list[MigrationAction] = []

    def unsafe(nid: str) -> bool:
        return nid in off_soon

    def choose(spec: ServiceSpec, exclude: set[str], fallback: bool) -> str | None:
        candidates = feasible_nodes(scratch, spec, weights, exclude)
        safe = [nid for nid in candidates if not unsafe(nid)]
        if safe:
            return safe[0]
        if fallback and candidates:
            return candidates[0]
        return None

    def commit(rec: ServiceRecord, dest: str, reason: str, source: str | None, duration: int) -> None:
        spec = rec.spec
        target = scratch.nodes[dest]
        target.free_cpu -= spec.cpu_request
        target.free_mem -= spec.mem_request
        if source is not None and source in scratch.nodes:
            src = scratch.nodes[source]
            if rec.status == RUNNING and rec.node == source:
                src.free_cpu += spec.cpu_request
                src.free_mem += spec.mem_request
            if src.state == ON:
                src.tainted = True
        actions.append(MigrationAction(spec.service_id, source, dest, reason, now, duration))

    for sid in sorted(view.services):
        rec = view.services[sid]
        spec = rec.spec
        if rec.status == MIGRATING:
            continue
        if rec.status == PENDING:
            dest = choose(spec, set(), fallback=True)
            if dest is None:
                continue
            if not rec.ever_placed:
                commit(rec, dest, INITIAL_PLACEMENT, None, 0)
            else:
                source = rec.last_host if rec.last_host != dest else None
                commit(rec, dest, NODE_OFF, source, migration_ticks)
            continue
        host = rec.node
        host_view = scratch.nodes[host]
        if host_view.state != ON:
            dest = choose(spec, {host}, fallback=True)
            if dest is not None:
                commit(rec, dest, NODE_OFF, host, migration_ticks)
        elif unsafe(host):
            dest = choose(spec, {host}, fallback=False)
            if dest is not None:
                commit(rec, dest, PREDICTED_OFF, host, migration_ticks)
        elif not math.isinf(hysteresis):
            dest = choose(spec, {host}, fallback=False)
            if dest is None:
                continue
            # like-for-like: the alternative as it would look once hosting the service
            maxima = _maxima(scratch)
            after = scratch.nodes[dest].clone()
            after.free_cpu -= spec.cpu_request
            after.free_mem -= spec.mem_request
            alt = _raw_score(after, maxima, weights)
            current = _raw_score(host_view, maxima, weights)
            if alt > current + hysteresis:
                commit(rec, dest, BETTER_SCORE, host, migration_ticks)
    return actions


# ---------------------------------------------------------------- actuation

Binder = Callable[[str, str | None, ServiceSpec], None]


def _noop_binder(service_id: str, node_id: str | None, spec: ServiceSpec) -> None:
    pass


def execute(
    view: ClusterView,
    actions: list[MigrationAction],
    publish: Callable[[dict], None] | None = None,
    binder: Binder = _noop_binder,
) -> ClusterView:
    """Apply planned actions: credit sources, debit destinations, taint sources.

    ``binder(service_id, node_id, spec)`` mirrors each (re)binding into the
    emulated infrastructure; ``node_id`` None means unbind.
    """
    for action in actions:
        rec = view.services[action.service_id]
        spec = rec.spec
        if rec.status == RUNNING and rec.node is not None:
            src = view.nodes[rec.node]
            src.free_cpu += spec.cpu_request
            src.free_mem += spec.mem_request
        dest = view.node(action.to_node)
        if dest.free_cpu < spec.cpu_request or dest.free_mem < spec.mem_request:
            raise NoFeasibleNode(f"{action.to_node} cannot host {spec.service_id}")
        dest.free_cpu -= spec.cpu_request
        dest.free_mem -= spec.mem_request
        binder(spec.service_id, action.to_node, spec)
        rec.node = action.to_node
        rec.ever_placed = True
        if action.duration == 0:
            rec.status = RUNNING
            rec.migration = None
        else:
            rec.status = MIGRATING
            rec.migration = action
            source = view.nodes.get(action.from_node) if action.from_node else None
            rec.source_lost = source is None or source.state != ON or action.reason == NODE_OFF
            if source is not None and source.state == ON:
                taint(view, source.node_id, f"migration:{spec.service_id}", action.start_tick + action.duration)
        if publish is not None:
            publish(action.to_event())
    return view


def _release(view: ClusterView, rec: ServiceRecord, binder: Binder) -> None:
    node = view.nodes.get(rec.node) if rec.node else None
    if node is not None:
        node.free_cpu += rec.spec.cpu_request
        node.free_mem += rec.spec.mem_request
    binder(rec.spec.service_id, None, rec.spec)


def check_migration(view: ClusterView, rec: ServiceRecord, now: int) -> bool:
    """True once the migration has completed; raises DestinationLost mid-flight."""
    action = rec.migration
    if action.from_node and view.nodes.get(action.from_node, NodeView("")).state != ON:
        rec.source_lost = True
    if now >= action.start_tick + action.duration:
        return True
    if view.nodes[action.to_node].state != ON:
        raise DestinationLost(f"{action.to_node} went OFF while receiving {action.service_id}")
    return False


def advance_migrations(
    view: ClusterView, now: int, binder: Binder = _noop_binder, log: Callable[[dict], None] | None = None
) -> list[str]:
    """Complete due migrations and abort those whose destination died; returns aborted ids."""
    aborted = []
    for sid in sorted(view.services):
        rec = view.services[sid]
        if rec.status != MIGRATING:
            continue
        try:
            done = check_migration(view, rec, now)
        except DestinationLost:
            _release(view, rec, binder)
            rec.last_host = rec.migration.from_node or rec.migration.to_node
            rec.status, rec.node, rec.migration = PENDING, None, None
            aborted.append(sid)
            if log:
                log({"topic": "migration.aborted", "tick": now, "service_id": sid, "error": "DestinationLost"})
            continue
        if done:
            rec.status = RUNNING
            rec.migration = None
            rec.source_lost = False
            if log:
                log({"topic": "migration.completed", "tick": now, "service_id": sid, "node": rec.node})
    return aborted


def reconcile(view: ClusterView, binder: Binder = _noop_binder) -> list[str]:
    """Move every Running service whose host is OFF to Pending; returns their ids."""
    displaced = []
    for sid in sorted(view.services):
        rec = view.services[sid]
        if rec.status == RUNNING and view.nodes[rec.node].state != ON:
            _release(view, rec, binder)
            rec.last_host = rec.node
            rec.status, rec.node = PENDING, None
            displaced.append(sid)
    return displaced


@dataclass
class PolicyConfig:
    policy: str = "proactive_lstm"
    w_cpu: float = 0.5
    w_mem: float = 0.5
    hysteresis: float = 0.2
    migration_ticks: int = 2

    @property
    def weights(self) -> tuple[float, float]:
        return (self.w_cpu, self.w_mem)


class DecisionEngine:
    """Bus-driven DE: keeps a ClusterView current and runs one planning round per tick."""

    def __init__(
        self,
        bus: MessageBus,
        node_ids: Iterable[str],
        services: Iterable[ServiceSpec],
        config: PolicyConfig | None = None,
        binder: Binder = _noop_binder,
        log: Callable[[dict], None] | None = None,
    ):
        self.bus = bus
        self.config = config or PolicyConfig()
        self.view = ClusterView.of([NodeView(nid) for nid in node_ids], services)
        self.binder = binder
        self.log = log
        self.executed: list[MigrationAction] = []
        self.aborted: list[str] = []
        self.active = False
        bus.subscribe(TOPIC_NODE_STATE, self._on_state)
        bus.subscribe(TOPIC_NODE_RESOURCES, self._on_resources)
        bus.subscribe(TOPIC_PREDICTION, self._on_prediction)

    def _on_state(self, msg: BusMessage) -> None:
        report: StateReport = msg.payload
        node = self.view.nodes.get(report.container_id)
        if node is not None:
            node.state = report.state

    def _on_resources(self, msg: BusMessage) -> None:
        report: ResourceReport = msg.payload
        node = self.view.nodes.get(report.container_id)
        if node is not None:
            node.free_cpu = report.free_cpu
            node.free_mem = report.free_mem

    def _on_prediction(self, msg: BusMessage) -> None:
        self.view.add_prediction(msg.payload)

    def _publish(self, event: dict) -> None:
        self.bus.publish(TOPIC_DE_ACTIONS, event)

    def step(self, now: int) -> list[MigrationAction]:
        view = self.view
        view.prune_predictions(now)
        expire_taints(view, now)
        self.aborted.extend(advance_migrations(view, now, self.binder, self.log))
        reconcile(view, self.binder)
        actions = plan(view, self.config.hysteresis, now, self.config.migration_ticks, self.config.weights)
        execute(view, actions, self._publish, self.binder)
        self.executed.extend(actions)
        return actions
