"""Telemetry store and the prediction relay between the analytic engine and the DE."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .emulator import ON, StateReport
from .errors import ConflictingReport, InsufficientHistory, MalformedReport, ModelUnavailable, UnknownNode
from .sim import TOPIC_NODE_STATE, TOPIC_PREDICTION, BusMessage, MessageBus


@dataclass
class StatusMatrix:
    node_ids: list[str]
    ticks: np.ndarray
    values: np.ndarray  # int8, shape (len(node_ids), len(ticks)), 1 = ON

    def column(self, tick: int) -> np.ndarray:
        return self.values[:, int(np.searchsorted(self.ticks, tick))]


class _Series:
    """Growable sorted (tick, state) arrays for one node."""

    __slots__ = ("ticks", "states", "n")

    def __init__(self) -> None:
        self.ticks = np.empty(64, dtype=np.int64)
        self.states = np.empty(64, dtype=np.int8)
        self.n = 0

    def insert(self, tick: int, state: int) -> None:
        if self.n == len(self.ticks):
            self.ticks = np.resize(self.ticks, 2 * self.n)
            self.states = np.resize(self.states, 2 * self.n)
        if self.n == 0 or tick > self.ticks[self.n - 1]:
            self.ticks[self.n] = tick
            self.states[self.n] = state
        else:
            pos = int(np.searchsorted(self.ticks[: self.n], tick))
            self.ticks[pos + 1 : self.n + 1] = self.ticks[pos : self.n].copy()
            self.states[pos + 1 : self.n + 1] = self.states[pos : self.n].copy()
            self.ticks[pos] = tick
            self.states[pos] = state
        self.n += 1

    def locf(self, query: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.ticks[: self.n], query, side="right") - 1
        out = np.zeros(len(query), dtype=np.int8)
        seen = idx >= 0
        out[seen] = self.states[: self.n][idx[seen]]
        return out


class TimeSeriesStore:
    """Append-only ON/OFF history keyed by (container_id, timestamp)."""

    def __init__(self, node_ids: Iterable[str] = ()):
        self._rows: dict[tuple[str, int], str] = {}
        self._series: dict[str, _Series] = {}
        self._order: list[tuple[str, int]] = []
        for nid in node_ids:
            self.register(nid)

    def __len__(self) -> int:
        return len(self._rows)

    def register(self, node_id: str) -> None:
        self._series.setdefault(node_id, _Series())

    @property
    def node_ids(self) -> list[str]:
        return sorted(self._series)

    def ingest(self, report: StateReport | Mapping[str, Any]) -> bool:
        """Store one report; returns False for an exact duplicate."""
        if not isinstance(report, StateReport):
            report = StateReport.from_dict(report)
        elif not isinstance(report.timestamp, (int, np.integer)) or report.state not in ("ON", "OFF"):
            raise MalformedReport(f"malformed report {report!r}")
        key = (report.container_id, int(report.timestamp))
        existing = self._rows.get(key)
        if existing is not None:
            if existing != report.state:
                raise ConflictingReport(f"{key} already stored as {existing}, got {report.state}")
            return False
        self._rows[key] = report.state
        self._order.append(key)
        series = self._series.get(report.container_id)
        if series is None:
            series = self._series[report.container_id] = _Series()
        series.insert(key[1], 1 if report.state == ON else 0)
        return True

    def query_range(self, node_ids: Sequence[str], t0: int, t1: int, step: int = 1) -> StatusMatrix:
        """LOCF-resampled status matrix over ticks t0..t1 inclusive; unreported ticks read OFF."""
        if t0 > t1:
            raise ValueError(f"t0 {t0} > t1 {t1}")
        if step < 1:
            raise ValueError("step must be >= 1")
        ticks = np.arange(t0, t1 + 1, step, dtype=np.int64)
        values = np.empty((len(node_ids), len(ticks)), dtype=np.int8)
        for row, nid in enumerate(node_ids):
            series = self._series.get(nid)
            if series is None:
                raise UnknownNode(nid)
            values[row] = series.locf(ticks)
        return StatusMatrix(list(node_ids), ticks, values)

    def reports(self) -> list[StateReport]:
        """Rows in ingestion order."""
        return [StateReport(ts, cid, self._rows[(cid, ts)]) for cid, ts in self._order]

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for cid, ts in self._order:
                fh.write(json.dumps({"timestamp": ts, "container_id": cid, "state": self._rows[(cid, ts)]}))
                fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "TimeSeriesStore":
        store = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedReport(f"line {lineno}: {exc}") from None
                store.ingest(data)
        return store


def ingest_report(store: TimeSeriesStore, report: StateReport | Mapping[str, Any]) -> bool:
    return store.ingest(report)


def query_range(store: TimeSeriesStore, node_ids: Sequence[str], t0: int, t1: int, step: int = 1) -> StatusMatrix:
    return store.query_range(node_ids, t0, t1, step)


class ModelHandle(Protocol):
    node_order: list[str]
    seq_len: int

    def predict(self, window: StatusMatrix, issued_at: int): ...


def request_and_forward_prediction(store: TimeSeriesStore, model: ModelHandle | None, t: int, bus: MessageBus):
    """Pull the latest seq_len-tick window, ask the model, publish the answer."""
    if model is None:
        raise ModelUnavailable("no model loaded")
    if t < model.seq_len:
        raise InsufficientHistory(f"need {model.seq_len} ticks of history at t={t}")
    window = store.query_range(model.node_order, t - model.seq_len + 1, t, 1)
    response = model.predict(window, t)
    bus.publish(TOPIC_PREDICTION, response)
    return response


class MonitoringService:
    """Subscribes to node reports and relays predictions every ``interval`` ticks.

    Predictions are issued at ``start + k * interval - 1`` for k >= 1, i.e.
    after each full interval following ``start``.
    """

    def __init__(
        self,
        bus: MessageBus,
        store: TimeSeriesStore | None = None,
        model: ModelHandle | None = None,
        interval: int = 15,
        start: int = 0,
    ):
        if interval < 1:
            raise ValueError("prediction interval must be >= 1")
        self.bus = bus
        self.store = store if store is not None else TimeSeriesStore()
        self.model = model
        self.interval = interval
        self.start = start
        self.issued: list = []
        bus.subscribe(TOPIC_NODE_STATE, self._on_state)

    def _on_state(self, msg: BusMessage) -> None:
        self.store.ingest(msg.payload)

    def due(self, t: int) -> bool:
        elapsed = t + 1 - self.start
        return elapsed >= self.interval and elapsed % self.interval == 0

    def on_tick(self, t: int):
        if self.model is None or not self.due(t):
            return None
        response = request_and_forward_prediction(self.store, self.model, t, self.bus)
        self.issued.append(response)
        return response
