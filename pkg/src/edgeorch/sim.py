"""Discrete-event core: integer clock, seeded RNG streams and the topic bus.

Everything runs on one logical loop. Handlers run to completion and the
only coupling between components is the bus contract (FIFO per topic,
delivery on the publishing tick or later, no replay).
"""
from __future__ import annotations

import hashlib
import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from .errors import SchedulingInPast, UnknownTopic

TICK_SECONDS = 60
DAY_TICKS = 1440

TOPIC_NODE_STATE = "node.state"
TOPIC_NODE_RESOURCES = "node.resources"
TOPIC_PREDICTION = "prediction.response"
TOPIC_DE_ACTIONS = "de.actions"
TOPICS = (TOPIC_NODE_STATE, TOPIC_NODE_RESOURCES, TOPIC_PREDICTION, TOPIC_DE_ACTIONS)

Handler = Callable[["BusMessage"], None]


@dataclass
class SimClock:
    now: int = 0
    tick_seconds: int = TICK_SECONDS

    def seconds(self, tick: int | None = None) -> int:
        return (self.now if tick is None else tick) * self.tick_seconds


@dataclass
class BusMessage:
    topic: str
    payload: Any
    publish_tick: int
    seq: int
    recipients: tuple[Handler, ...] = field(default=(), repr=False, compare=False)


class EventLoop:
    """Tick-ordered delivery queue.

    Events at the same tick are delivered in (topic, seq) order, which
    keeps every topic FIFO.
    """

    def __init__(self, clock: SimClock | None = None):
        self.clock = clock or SimClock()
        self._queue: list[tuple[int, str, int, int, BusMessage]] = []
        self._counter = 0

    def schedule(self, at: int, event: BusMessage) -> None:
        if at < self.clock.now:
            raise SchedulingInPast(f"cannot schedule at {at}, clock is at {self.clock.now}")
        self._counter += 1
        heapq.heappush(self._queue, (at, event.topic, event.seq, self._counter, event))

    def pending(self) -> int:
        return len(self._queue)

    def drain(self) -> int:
        """Deliver every event due at or before the current tick."""
        delivered = 0
        queue = self._queue
        now = self.clock.now
        while queue and queue[0][0] <= now:
            event = heapq.heappop(queue)[4]
            for handler in event.recipients:
                handler(event)
            delivered += 1
        return delivered

    def advance_to(self, tick: int) -> None:
        """Move the clock forward, delivering everything scheduled on the way."""
        if tick < self.clock.now:
            raise SchedulingInPast(f"clock cannot move back from {self.clock.now} to {tick}")
        while True:
            self.drain()
            if not self._queue or self._queue[0][0] > tick:
                break
            self.clock.now = self._queue[0][0]
        self.clock.now = tick
        self.drain()


class MessageBus:
    """In-process broker with a fixed topic set.

    Subscribers only see messages published after they subscribe.
    """

    def __init__(self, loop: EventLoop, topics: Iterable[str] = TOPICS):
        self.loop = loop
        self._subscribers: dict[str, list[Handler]] = {t: [] for t in topics}
        self._seq: dict[str, int] = {t: 0 for t in topics}

    def subscribe(self, topic: str, handler: Handler) -> None:
        self._check(topic)
        self._subscribers[topic].append(handler)

    def publish(self, topic: str, payload: Any) -> int:
        self._check(topic)
        self._seq[topic] += 1
        seq = self._seq[topic]
        msg = BusMessage(
            topic=topic,
            payload=payload,
            publish_tick=self.loop.clock.now,
            seq=seq,
            recipients=tuple(self._subscribers[topic]),
        )
        self.loop.schedule(self.loop.clock.now, msg)
        return seq

    def _check(self, topic: str) -> None:
        if topic not in self._subscribers:
            raise UnknownTopic(topic)


@dataclass
class RngStream:
    root_seed: int
    label: str
    generator: np.random.Generator = field(repr=False)

    def random(self, size=None):
        return self.generator.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:16], "little")


def fork_rng(root_seed: int, label: str) -> RngStream:
    """Independent stream keyed by (root_seed, label).

    Streams never share state, so drawing from one leaves the others as
    they were.
    """
    seq = np.random.SeedSequence(entropy=[int(root_seed) & (2**64 - 1), _label_key(label)])
    return RngStream(root_seed=int(root_seed), label=label, generator=np.random.Generator(np.random.PCG64(seq)))


_STR_CACHE: dict[str, str] = {}


def _encode_str(text: str) -> str:
    out = _STR_CACHE.get(text)
    if out is None:
        out = json.dumps(text)
        if len(_STR_CACHE) < 65536:
            _STR_CACHE[text] = out
    return out


def _encode_float(value: float) -> str:
    if math.isinf(value):
        return '"inf"' if value > 0 else '"-inf"'
    if math.isnan(value):
        return '"nan"'
    return f"{value:.6f}"


def _encode(obj: Any) -> str:
    kind = type(obj)
    # exact-type fast paths first; bool is checked before int by identity
    if kind is str:
        return _encode_str(obj)
    if kind is float:
        return _encode_float(obj)
    if kind is int:
        return str(obj)
    if kind is dict:
        items = sorted(obj.items()) if all(type(k) is str for k in obj) else sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(_encode_str(k) + ":" + _encode(v) for k, v in items) + "}"
    if obj is None or kind is bool:
        return json.dumps(obj)
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_encode(v) for v in obj) + "]"
    if isinstance(obj, np.bool_):
        return json.dumps(bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _encode_float(float(obj))
    if isinstance(obj, str):
        return _encode_str(str(obj))
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps_line(obj: dict) -> str:
    """One log line: sorted keys, floats fixed at six decimals."""
    return _encode(obj)


class EventLog:
    def __init__(self) -> None:
        self.lines: list[str] = []

    def record(self, obj: dict) -> None:
        self.lines.append(dumps_line(obj))

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.text(), encoding="utf-8")
