"""Scenario runner: wires emulator, monitoring, predictor and DE on one event loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import POLICIES, ScenarioConfig, parse_config
from .decision import (
    MIGRATING,
    REASONS,
    RUNNING,
    DecisionEngine,
    ServiceSpec,
)
from .emulator import Fleet, build_fleet, emit_reports
from .errors import InvalidConfig, MisalignedSeries
from .monitoring import MonitoringService, StatusMatrix, TimeSeriesStore
from .predictor import LstmModel, PredictionResponse, build_dataset, save_model, train_model
from .sim import TOPIC_DE_ACTIONS, TOPIC_PREDICTION, BusMessage, EventLog, EventLoop, MessageBus, fork_rng

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- prediction scoring


@dataclass
class PredictionScore:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else math.nan

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else math.nan

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else math.nan


def score_predictions(predicted_on: Any, actual_on: Any) -> PredictionScore:
    """Confusion counts with OFF as the positive class; inputs are aligned ON/OFF booleans."""
    pred = np.asarray(predicted_on, dtype=bool)
    true = np.asarray(actual_on, dtype=bool)
    if pred.shape != true.shape:
        raise MisalignedSeries(f"prediction shape {pred.shape} != truth shape {true.shape}")
    p_off, t_off = ~pred, ~true
    return PredictionScore(
        tp=int(np.sum(p_off & t_off)),
        fp=int(np.sum(p_off & true)),
        fn=int(np.sum(pred & t_off)),
        tn=int(np.sum(pred & true)),
    )


def score_responses(responses: Sequence[PredictionResponse], fleet: Fleet, until: int) -> dict[int, PredictionScore]:
    """Score every response whose target falls before ``until``, grouped by horizon."""
    groups: dict[int, tuple[list, list]] = {}
    for resp in responses:
        if resp.target_tick >= until:
            continue
        rows = [fleet.index[nid] for nid in resp.node_ids]
        truth = fleet.truth(resp.target_tick, resp.target_tick + 1)[rows, 0]
        pred, true = groups.setdefault(resp.horizon, ([], []))
        pred.append(resp.on)
        true.append(truth)
    return {h: score_predictions(np.concatenate(p), np.concatenate(t)) for h, (p, t) in sorted(groups.items())}


class OracleModel:
    """Reads the emulator's ground truth ``horizon`` ticks ahead."""

    seq_len = 1

    def __init__(self, fleet: Fleet, horizon: int):
        self.fleet = fleet
        self.horizon = horizon
        self.node_order = list(fleet.order)

    def predict(self, window: StatusMatrix, issued_at: int) -> PredictionResponse:
        target = issued_at + self.horizon
        truth = self.fleet.truth(target, target + 1)[:, 0]
        return PredictionResponse(issued_at, target, tuple(self.node_order), truth.astype(float))


# ---------------------------------------------------------------- accounting


@dataclass
class ServiceMetrics:
    service_id: str
    placement_tick: int
    running_ticks: int = 0
    migrating_unavailable_ticks: int = 0
    pending_ticks: int = 0
    off_host_ticks: int = 0
    migrations: dict[str, int] = field(default_factory=lambda: {r: 0 for r in REASONS})
    aborted: int = 0

    @property
    def downtime_ticks(self) -> int:
        return self.migrating_unavailable_ticks + self.pending_ticks + self.off_host_ticks


@dataclass
class RunMetrics:
    policy: str
    duration_ticks: int
    start_tick: int
    services: dict[str, ServiceMetrics]
    fleet_availability: float
    predictor: PredictionScore | None = None

    @property
    def total_downtime(self) -> int:
        return sum(m.downtime_ticks for m in self.services.values())

    def migration_count(self, reason: str | None = None) -> int:
        return sum(m.migrations[reason] if reason else sum(m.migrations.values()) for m in self.services.values())

    def rows(self) -> list[dict[str, Any]]:
        rows = []
        for sid in sorted(self.services):
            m = self.services[sid]
            span = self.duration_ticks - m.placement_tick
            row = {
                "id": sid,
                "running_ticks": m.running_ticks,
                "migrating_unavailable_ticks": m.migrating_unavailable_ticks,
                "pending_ticks": m.pending_ticks,
                "off_host_ticks": m.off_host_ticks,
                "downtime_ticks": m.downtime_ticks,
                **{f"migrations_{r}": m.migrations[r] for r in REASONS},
                "aborted_migrations": m.aborted,
                "availability": m.running_ticks / span if span else math.nan,
                "precision": "",
                "recall": "",
                "accuracy": "",
            }
            rows.append(row)
        fleet_row = {key: "" for key in rows[0]} if rows else {}
        fleet_row.update(
            {
                "id": "__fleet__",
                "running_ticks": sum(m.running_ticks for m in self.services.values()),
                "migrating_unavailable_ticks": sum(m.migrating_unavailable_ticks for m in self.services.values()),
                "pending_ticks": sum(m.pending_ticks for m in self.services.values()),
                "off_host_ticks": sum(m.off_host_ticks for m in self.services.values()),
                "downtime_ticks": self.total_downtime,
                **{f"migrations_{r}": self.migration_count(r) for r in REASONS},
                "aborted_migrations": sum(m.aborted for m in self.services.values()),
                "availability": self.fleet_availability,
                "precision": "",
                "recall": "",
                "accuracy": "",
            }
        )
        pred_row = {key: "" for key in fleet_row}
        pred_row["id"] = "__predictor__"
        if self.predictor is not None:
            pred_row.update(
                precision=self.predictor.precision, recall=self.predictor.recall, accuracy=self.predictor.accuracy
            )
        return rows + [fleet_row, pred_row]

    def write_csv(self, path: str | Path) -> None:
        rows = self.rows()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


class _Accountant:
    def __init__(self, services: Sequence[ServiceSpec], start: int):
        self.metrics = {s.service_id: ServiceMetrics(s.service_id, start) for s in services}

    def account(self, t: int, engine: DecisionEngine, fleet: Fleet, actions) -> None:
        for action in actions:
            self.metrics[action.service_id].migrations[action.reason] += 1
        for sid, rec in engine.view.services.items():
            m = self.metrics[sid]
            if rec.status == RUNNING:
                if fleet.is_on(rec.node, t):
                    m.running_ticks += 1
                else:
                    m.off_host_ticks += 1
            elif rec.status == MIGRATING:
                src = rec.migration.from_node
                if not rec.source_lost and src is not None and fleet.is_on(src, t):
                    m.running_ticks += 1
                else:
                    m.migrating_unavailable_ticks += 1
            else:
                m.pending_ticks += 1


# ---------------------------------------------------------------- runner


@dataclass
class RunResult:
    metrics: RunMetrics
    event_log: EventLog
    model: LstmModel | None
    store: TimeSeriesStore
    loss_history: list[float]
    engine: DecisionEngine
    fleet: Fleet


def make_fleet(config: ScenarioConfig) -> Fleet:
    nodes = build_fleet(config.fleet, fork_rng(config.seed, "fleet"), config.total_ticks)
    return Fleet(nodes, config.seed)


def train_from_store(store: TimeSeriesStore, node_ids, t0: int, t1: int, config: ScenarioConfig):
    hyper = config.predictor.to_hyper()
    data = build_dataset(store, node_ids, t0, t1, hyper.seq_len, hyper.horizon)
    return train_model(data, hyper)


def run_scenario(config: ScenarioConfig | dict, model: LstmModel | None = None, check_invariants: bool = False) -> RunResult:
    """Run one policy end to end; deterministic for a given config and seed.

    ``proactive_lstm`` first emulates the training period and fits the model
    on the stored telemetry (unless ``model`` is given); every policy then
    orchestrates from the end of the training period to ``total_ticks``.
    """
    config = parse_config(config)
    policy = config.policy.policy
    if policy not in POLICIES:
        raise InvalidConfig(f"unknown policy {policy}")
    fleet = make_fleet(config)
    services = [s.to_spec() for s in config.services]
    duration = config.total_ticks
    start = config.train_ticks
    horizon = config.predictor.horizon
    report_every = config.report_interval

    loop = EventLoop()
    bus = MessageBus(loop)
    events = EventLog()
    store = TimeSeriesStore(fleet.order)
    monitor = MonitoringService(bus, store, interval=config.prediction_interval)

    history: list[float] = []
    warm = max(0, start - horizon)
    if policy == "proactive_lstm":
        for t in range(warm):
            loop.advance_to(t)
            if t % report_every == 0:
                emit_reports(fleet, t, bus)
            loop.drain()
        if model is None:
            model, history = train_from_store(store, fleet.order, 0, start - 1, config)
        elif list(model.node_order) != fleet.order:
            raise InvalidConfig("supplied model was trained on a different node set")
        monitor.model = model
        monitor.start = max(warm, model.seq_len)
    elif policy == "proactive_oracle":
        monitor.model = OracleModel(fleet, horizon)
        monitor.interval = config.oracle_prediction_interval
        monitor.start = max(warm, 1)

    engine = DecisionEngine(bus, fleet.order, services, config.policy.to_policy(), binder=_binder(fleet), log=events.record)

    def record(msg: BusMessage) -> None:
        if msg.topic == TOPIC_DE_ACTIONS:
            events.record({"topic": msg.topic, "seq": msg.seq, **msg.payload})
        else:
            events.record({"topic": msg.topic, "seq": msg.seq, **msg.payload.to_dict()})

    bus.subscribe(TOPIC_DE_ACTIONS, record)
    bus.subscribe(TOPIC_PREDICTION, record)

    accountant = _Accountant(services, start)
    prev = None
    first = start if policy == "reactive" else warm
    for t in range(first, duration):
        loop.advance_to(t)
        if t % report_every == 0:
            emit_reports(fleet, t, bus)
        loop.drain()
        column = fleet.truth(t, t + 1)[:, 0]
        if t >= start:
            changed = range(len(column)) if t == start else np.flatnonzero(column != prev)
            for row in changed:
                events.record({"topic": "node.transition", "tick": t, "node": fleet.order[row], "state": "ON" if column[row] else "OFF"})
        prev = column
        monitor.on_tick(t)
        loop.drain()
        if t < start:
            continue
        actions = engine.step(t)
        loop.drain()
        accountant.account(t, engine, fleet, actions)
        if check_invariants:
            check_run_invariants(engine, fleet, t)

    for sid in engine.aborted:
        accountant.metrics[sid].aborted += 1

    truth = fleet.truth(start, duration)
    score = None
    if monitor.issued:
        by_h = score_responses(monitor.issued, fleet, duration)
        if by_h:
            score = by_h.get(horizon) or next(iter(by_h.values()))
    metrics = RunMetrics(
        policy=policy,
        duration_ticks=duration,
        start_tick=start,
        services=accountant.metrics,
        fleet_availability=float(truth.mean()) if truth.size else math.nan,
        predictor=score,
    )
    return RunResult(metrics, events, model if policy == "proactive_lstm" else None, store, history, engine, fleet)


def _binder(fleet: Fleet):
    def bind(service_id: str, node_id: str | None, spec: ServiceSpec) -> None:
        if node_id is None:
            fleet.unbind(service_id)
        else:
            fleet.bind(service_id, node_id, spec.cpu_request, spec.mem_request)

    return bind


class InvariantViolation(AssertionError):
    pass


def check_run_invariants(engine: DecisionEngine, fleet: Fleet, t: int) -> None:
    """Post-reconcile safety and capacity checks for one tick."""
    view = engine.view
    for sid, rec in view.services.items():
        if rec.status == RUNNING and view.nodes[rec.node].state != "ON":
            raise InvariantViolation(f"t={t}: {sid} Running on OFF node {rec.node}")
    for nid in fleet.order:
        free_cpu, free_mem = fleet.free(nid)
        if free_cpu < 0 or free_mem < 0:
            raise InvariantViolation(f"t={t}: {nid} overcommitted ({free_cpu}, {free_mem})")
        node = view.nodes[nid]
        if node.free_cpu < 0 or node.free_mem < 0:
            raise InvariantViolation(f"t={t}: view of {nid} overcommitted")


def write_outputs(result: RunResult, out_dir: str | Path, dump_store: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.event_log.write(out / "events.jsonl")
    result.metrics.write_csv(out / "metrics.csv")
    if result.model is not None:
        save_model(result.model, out / "model.json")
    if dump_store:
        result.store.dump(out / "store.jsonl")


COMPARISON_FIELDS = (
    "policy",
    "downtime_ticks",
    "pending_ticks",
    "migrating_unavailable_ticks",
    "off_host_ticks",
    *(f"migrations_{r}" for r in REASONS),
    "aborted_migrations",
    "precision",
    "recall",
    "accuracy",
)


def compare_policies(config: ScenarioConfig | dict, policies: Sequence[str] = POLICIES) -> dict[str, RunResult]:
    """Run each policy on the same fleet realisation (same seed, same churn draws)."""
    config = parse_config(config)
    results = {}
    for policy in policies:
        log.info("running %s", policy)
        results[policy] = run_scenario(config.with_policy(policy))
    return results


def comparison_rows(results: dict[str, RunResult]) -> list[dict[str, Any]]:
    rows = []
    for policy, result in results.items():
        fleet_row = next(r for r in result.metrics.rows() if r["id"] == "__fleet__")
        pred = result.metrics.predictor
        row = {"policy": policy}
        for key in COMPARISON_FIELDS[1:]:
            if key in ("precision", "recall", "accuracy"):
                row[key] = getattr(pred, key) if pred else math.nan
            else:
                row[key] = fleet_row[key]
        rows.append(row)
    return rows


def write_comparison(results: dict[str, RunResult], out_dir: str | Path) -> list[dict[str, Any]]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for policy, result in results.items():
        write_outputs(result, out / policy)
    rows = comparison_rows(results)
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(COMPARISON_FIELDS))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return rows
