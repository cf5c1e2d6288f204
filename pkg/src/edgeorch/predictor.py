"""Node availability forecasting: features, datasets, inference and model files."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .emulator import OFF, ON
from .errors import (
    CorruptModelFile,
    DimensionMismatch,
    InvalidHyper,
    NodeOrderMismatch,
    VersionMismatch,
    WindowTooShort,
    WrongWindowLength,
)
from .lstm import P_CLAMP, Hyper, LstmParams, lstm_forward, train
from .monitoring import StatusMatrix, TimeSeriesStore
from .sim import DAY_TICKS

MODEL_VERSION = 1
THRESHOLD = 0.5


def encode_time(t: int, day_len: int = DAY_TICKS) -> tuple[float, float]:
    if day_len <= 0:
        raise ValueError("day_len must be positive")
    phi = 2.0 * math.pi * (t % day_len) / day_len
    return math.sin(phi), math.cos(phi)


def encode_ticks(ticks: np.ndarray, day_len: int = DAY_TICKS) -> np.ndarray:
    """(len(ticks), 2) array of (sin, cos) time-of-day features."""
    phi = 2.0 * np.pi * (np.asarray(ticks) % day_len) / day_len
    return np.stack([np.sin(phi), np.cos(phi)], axis=1)


def features(window: StatusMatrix, day_len: int = DAY_TICKS) -> np.ndarray:
    """Per-tick feature rows ``[sin, cos, status_0 .. status_{N-1}]``."""
    return np.concatenate([encode_ticks(window.ticks, day_len), window.values.T.astype(float)], axis=1)


@dataclass(frozen=True)
class TrainingSample:
    sequence: np.ndarray
    label: np.ndarray
    end_tick: int


@dataclass
class TrainingSet:
    """Sliding windows over a status matrix.

    ``X[k]`` covers ticks ``end_ticks[k] - seq_len + 1 .. end_ticks[k]`` and
    ``Y[k]`` is the status vector at ``end_ticks[k] + horizon``.
    """

    node_ids: list[str]
    X: np.ndarray
    Y: np.ndarray
    end_ticks: np.ndarray
    seq_len: int
    horizon: int

    def __len__(self) -> int:
        return len(self.X)

    def __getitem__(self, k: int) -> TrainingSample:
        return TrainingSample(np.asarray(self.X[k]), self.Y[k], int(self.end_ticks[k]))

    def __iter__(self) -> Iterator[TrainingSample]:
        for k in range(len(self)):
            yield self[k]


def dataset_from_matrix(matrix: StatusMatrix, seq_len: int, horizon: int, day_len: int = DAY_TICKS) -> TrainingSet:
    ticks = matrix.ticks
    if len(ticks) < seq_len + horizon:
        raise WindowTooShort(f"{len(ticks)} ticks cannot hold seq_len {seq_len} + horizon {horizon}")
    feats = features(matrix, day_len)
    count = len(ticks) - seq_len - horizon + 1
    windows = sliding_window_view(feats, (seq_len, feats.shape[1]))[:, 0]
    X = windows[:count]
    Y = matrix.values.T[seq_len - 1 + horizon : seq_len - 1 + horizon + count].astype(float)
    end_ticks = ticks[seq_len - 1 : seq_len - 1 + count]
    return TrainingSet(list(matrix.node_ids), X, Y, end_ticks, seq_len, horizon)


def build_dataset(
    store: TimeSeriesStore,
    node_ids: Sequence[str],
    t0: int,
    t1: int,
    seq_len: int,
    horizon: int,
    day_len: int = DAY_TICKS,
) -> TrainingSet:
    """One sample per end tick in [t0 + seq_len - 1, t1 - horizon], chronological."""
    if t1 - t0 < seq_len + horizon:
        raise WindowTooShort(f"window [{t0}, {t1}] shorter than seq_len + horizon = {seq_len + horizon}")
    matrix = store.query_range(sorted(node_ids), t0, t1, 1)
    return dataset_from_matrix(matrix, seq_len, horizon, day_len)


@dataclass
class PredictionResponse:
    issued_at: int
    target_tick: int
    node_ids: tuple[str, ...]
    probabilities: np.ndarray

    def __post_init__(self) -> None:
        if self.target_tick <= self.issued_at:
            raise ValueError("target_tick must come after issued_at")

    @property
    def horizon(self) -> int:
        return self.target_tick - self.issued_at

    @property
    def on(self) -> np.ndarray:
        return self.probabilities >= THRESHOLD

    @property
    def statuses(self) -> list[str]:
        return [ON if v else OFF for v in self.on]

    def off_nodes(self) -> list[str]:
        return [nid for nid, v in zip(self.node_ids, self.on) if not v]

    def to_dict(self) -> dict:
        return {
            "issued_at": self.issued_at,
            "target_tick": self.target_tick,
            "predictions": {
                nid: {"probability": float(p), "state": s}
                for nid, p, s in zip(self.node_ids, self.probabilities, self.statuses)
            },
        }


@dataclass
class LstmModel:
    """Trained parameters plus what inference needs to rebuild the inputs."""

    params: LstmParams
    node_order: list[str]
    seq_len: int
    horizon: int
    day_len: int = DAY_TICKS

    def predict(self, window: StatusMatrix, issued_at: int | None = None) -> PredictionResponse:
        return predict(self, window, issued_at)


def predict(model: LstmModel, window: StatusMatrix, issued_at: int | None = None) -> PredictionResponse:
    if len(window.ticks) != model.seq_len:
        raise WrongWindowLength(f"window has {len(window.ticks)} ticks, model expects {model.seq_len}")
    if list(window.node_ids) != list(model.node_order):
        raise NodeOrderMismatch("window rows are not in the model's node order")
    if issued_at is None:
        issued_at = int(window.ticks[-1])
    probs, _ = lstm_forward(model.params, features(window, model.day_len))
    # a saturated sigmoid can round to exactly 0 or 1
    probs = np.clip(probs, P_CLAMP, 1.0 - P_CLAMP)
    return PredictionResponse(issued_at, issued_at + model.horizon, tuple(model.node_order), probs)


def predict_batch(model: LstmModel, data: TrainingSet) -> np.ndarray:
    """Probabilities for every sample in ``data`` (one batched forward pass per chunk)."""
    if list(data.node_ids) != list(model.node_order):
        raise NodeOrderMismatch("dataset node order differs from the model's")
    out = []
    for start in range(0, len(data), 4096):
        probs, _ = lstm_forward(model.params, np.asarray(data.X[start : start + 4096]))
        out.append(np.clip(probs, P_CLAMP, 1.0 - P_CLAMP))
    return np.concatenate(out) if out else np.empty((0, len(model.node_order)))


def train_model(data: TrainingSet, hyper: Hyper) -> tuple[LstmModel, list[float]]:
    if data.seq_len != hyper.seq_len or data.horizon != hyper.horizon:
        raise InvalidHyper("dataset was built with a different seq_len or horizon")
    params, history = train(data.X, data.Y, hyper)
    return LstmModel(params, list(data.node_ids), hyper.seq_len, hyper.horizon), history


def save_model(model: LstmModel, path: str | Path) -> None:
    p = model.params
    doc = {
        "version": MODEL_VERSION,
        "dims": {"input": p.input, "hidden": p.hidden, "output": p.output},
        "node_order": list(model.node_order),
        "seq_len": model.seq_len,
        "horizon": model.horizon,
        "day_len": model.day_len,
        "weights": {name: arr.tolist() for name, arr in zip(p.names(), p.arrays())},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path: str | Path) -> LstmModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModelFile(f"{path}: {exc}") from None
    if not isinstance(doc, dict) or "version" not in doc:
        raise CorruptModelFile(f"{path}: not a model file")
    if doc["version"] != MODEL_VERSION:
        raise VersionMismatch(f"{path}: version {doc['version']}, expected {MODEL_VERSION}")
    try:
        dims = doc["dims"]
        weights = doc["weights"]
        params = LstmParams(**{name: np.array(weights[name], dtype=float) for name in LstmParams.names()})
        if (params.input, params.hidden, params.output) != (dims["input"], dims["hidden"], dims["output"]):
            raise DimensionMismatch("dims header does not match weights")
        params.check()
        model = LstmModel(
            params,
            [str(n) for n in doc["node_order"]],
            int(doc["seq_len"]),
            int(doc["horizon"]),
            int(doc.get("day_len", DAY_TICKS)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelFile(f"{path}: {exc}") from None
    if len(model.node_order) != params.output or params.input != params.output + 2:
        raise CorruptModelFile(f"{path}: node_order inconsistent with dims")
    return model
