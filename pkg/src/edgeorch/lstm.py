"""Single-layer LSTM with a sigmoid readout, written directly in numpy.

Gates per step (h and c start at zero)::

    i = sigmoid(W_i x + U_i h + b_i)    f = sigmoid(W_f x + U_f h + b_f)
    g = tanh(W_g x + U_g h + b_g)       o = sigmoid(W_o x + U_o h + b_o)
    c = f * c + i * g                   h = o * tanh(c)

and the output is ``sigmoid(W_y h_last + b_y)``. Gradients come from
backpropagation through the whole sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyBatch, EmptyDataset, EmptySequence, InvalidHyper
from .sim import fork_rng

P_CLAMP = 1e-7
GATES = ("i", "f", "g", "o")


@dataclass
class LstmParams:
    W_i: np.ndarray
    W_f: np.ndarray
    W_g: np.ndarray
    W_o: np.ndarray
    U_i: np.ndarray
    U_f: np.ndarray
    U_g: np.ndarray
    U_o: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray
    W_y: np.ndarray
    b_y: np.ndarray

    @property
    def hidden(self) -> int:
        return self.W_i.shape[0]

    @property
    def input(self) -> int:
        return self.W_i.shape[1]

    @property
    def output(self) -> int:
        return self.W_y.shape[0]

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in self.names()]

    @classmethod
    def zeros(cls, input: int, hidden: int, output: int) -> "LstmParams":
        shapes = _shapes(input, hidden, output)
        return cls(**{name: np.zeros(shape) for name, shape in shapes.items()})

    @classmethod
    def initial(cls, input: int, hidden: int, output: int, seed: int) -> "LstmParams":
        """Weights uniform in [-0.1, 0.1], biases zero except the forget gate at 1."""
        rng = fork_rng(seed, "lstm/init")
        values = {}
        for name, shape in _shapes(input, hidden, output).items():
            if name.startswith("b_"):
                values[name] = np.full(shape, 1.0 if name == "b_f" else 0.0)
            else:
                values[name] = rng.uniform(-0.1, 0.1, shape)
        return cls(**values)

    def copy(self) -> "LstmParams":
        return LstmParams(*(a.copy() for a in self.arrays()))

    def check(self) -> None:
        expected = _shapes(self.input, self.hidden, self.output)
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")

    def stacked(self) -> tuple[np.ndarray, ...]:
        return (
            np.concatenate([self.W_i, self.W_f, self.W_g, self.W_o]),
            np.concatenate([self.U_i, self.U_f, self.U_g, self.U_o]),
            np.concatenate([self.b_i, self.b_f, self.b_g, self.b_o]),
            self.W_y,
            self.b_y,
        )

    @classmethod
    def from_stacked(cls, Wx, U, b, Wy, by) -> "LstmParams":
        Ws, Us, bs = np.split(Wx, 4), np.split(U, 4), np.split(b, 4)
        return cls(*Ws, *Us, *bs, Wy, by)


def _shapes(input: int, hidden: int, output: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for gate in GATES:
        shapes[f"W_{gate}"] = (hidden, input)
    for gate in GATES:
        shapes[f"U_{gate}"] = (hidden, hidden)
    for gate in GATES:
        shapes[f"b_{gate}"] = (hidden,)
    shapes["W_y"] = (output, hidden)
    shapes["b_y"] = (output,)
    return shapes


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def _gate_affine(H: int) -> tuple[np.ndarray, np.ndarray]:
    # sigmoid(z) = 0.5 * tanh(0.5 z) + 0.5, so all four gates share one tanh call
    scale = np.full(4 * H, 0.5)
    scale[2 * H : 3 * H] = 1.0
    offset = np.full(4 * H, 0.5)
    offset[2 * H : 3 * H] = 0.0
    return scale, offset


def _forward(stack, x: np.ndarray):
    Wx, U, b, Wy, by = stack
    batch, steps, _ = x.shape
    H = U.shape[1]
    scale, offset = _gate_affine(H)
    proj = (x @ Wx.T + b) * scale
    Us = U.T * scale
    h = np.zeros((batch, H))
    c = np.zeros((batch, H))
    hs = np.empty((steps + 1, batch, H))
    cs = np.empty((steps + 1, batch, H))
    tcs = np.empty((steps, batch, H))
    acts = np.empty((steps, batch, 4 * H))
    hs[0] = h
    cs[0] = c
    for t in range(steps):
        a = acts[t]
        np.tanh(proj[:, t] + h @ Us, out=a)
        a *= scale
        a += offset
        c = a[:, H : 2 * H] * c + a[:, :H] * a[:, 2 * H : 3 * H]
        tc = np.tanh(c, out=tcs[t])
        h = a[:, 3 * H :] * tc
        hs[t + 1] = h
        cs[t + 1] = c
    probs = _sigmoid(h @ Wy.T + by)
    return probs, (x, hs, cs, tcs, acts)


def _backward(stack, cache, dlogit: np.ndarray):
    Wx, U, b, Wy, by = stack
    x, hs, cs, tcs, acts = cache
    steps, batch = x.shape[1], x.shape[0]
    H = U.shape[1]
    i, f, g, o = acts[..., :H], acts[..., H : 2 * H], acts[..., 2 * H : 3 * H], acts[..., 3 * H :]
    # per-step local derivatives, computed for all steps at once
    dc_from_h = o * (1.0 - tcs * tcs)
    coeff = np.empty((steps, batch, 3, H))
    coeff[:, :, 0] = g * i * (1.0 - i)
    coeff[:, :, 1] = cs[:-1] * f * (1.0 - f)
    coeff[:, :, 2] = i * (1.0 - g * g)
    do_from_h = tcs * o * (1.0 - o)
    dWy = dlogit.T @ hs[-1]
    dby = dlogit.sum(axis=0)
    dh = dlogit @ Wy
    dc = np.zeros_like(dh)
    dZ = np.empty((steps, batch, 4, H))
    for t in range(steps - 1, -1, -1):
        dc = dc + dh * dc_from_h[t]
        np.multiply(dc[:, None, :], coeff[t], out=dZ[t, :, :3])
        np.multiply(dh, do_from_h[t], out=dZ[t, :, 3])
        dc = dc * f[t]
        dh = dZ[t].reshape(batch, 4 * H) @ U
    flat = dZ.reshape(-1, 4 * H)
    dWx = flat.T @ x.transpose(1, 0, 2).reshape(-1, x.shape[2])
    dU = flat.T @ hs[:-1].reshape(-1, H)
    db = flat.sum(axis=0)
    return dWx, dU, db, dWy, dby


def _as_batch(sequence: np.ndarray, width: int) -> np.ndarray:
    x = np.asarray(sequence, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise DimensionMismatch(f"sequence must be 2-D or 3-D, got shape {x.shape}")
    if x.shape[1] == 0 or x.shape[0] == 0:
        raise EmptySequence("sequence has no steps")
    if x.shape[2] != width:
        raise DimensionMismatch(f"feature width {x.shape[2]} does not match model input {width}")
    return x


def lstm_forward(params: LstmParams, sequence: np.ndarray):
    """Probabilities for a (steps, input) sequence or a (batch, steps, input) stack.

    Returns ``(probabilities, cache)``; the cache holds inputs, hidden and
    cell states, tanh(cell) and gate activations for the backward pass.
    """
    if len(sequence) == 0:
        raise EmptySequence("sequence has no steps")
    x = _as_batch(sequence, params.input)
    probs, cache = _forward(params.stacked(), x)
    if np.ndim(sequence) == 2:
        probs = probs[0]
    return probs, cache


def bce(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs, P_CLAMP, 1.0 - P_CLAMP)
    y = labels
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _loss_and_grad_stacked(stack, x: np.ndarray, y: np.ndarray):
    probs, cache = _forward(stack, x)
    loss = bce(probs, y)
    inside = (probs >= P_CLAMP) & (probs <= 1.0 - P_CLAMP)
    # d(BCE)/d(logit) = p - y wherever the clamp is inactive
    dlogit = np.where(inside, probs - y, 0.0) / y.size
    return loss, _backward(stack, cache, dlogit)


def _unpack_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 2:
        x, y = batch
    else:
        items = list(batch)
        if not items:
            raise EmptyBatch("batch is empty")
        x = np.stack([s.sequence for s in items])
        y = np.stack([s.label for s in items])
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0:
        raise EmptyBatch("batch is empty")
    return x, y


def loss_and_grad(params: LstmParams, batch) -> tuple[float, LstmParams]:
    """Mean BCE over samples and nodes, with gradients shaped like ``params``.

    ``batch`` is either an ``(X, Y)`` pair of arrays or an iterable of
    samples exposing ``.sequence`` and ``.label``.
    """
    x, y = _unpack_batch(batch)
    x = _as_batch(x, params.input)
    if y.shape != (x.shape[0], params.output):
        raise DimensionMismatch(f"labels have shape {y.shape}, expected {(x.shape[0], params.output)}")
    loss, grads = _loss_and_grad_stacked(params.stacked(), x, y)
    return loss, LstmParams.from_stacked(*grads)


@dataclass(frozen=True)
class Hyper:
    hidden: int = 32
    seq_len: int = 24
    horizon: int = 15
    lr: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0

    def validate(self) -> None:
        if self.hidden < 1 or self.seq_len < 1 or self.horizon < 1 or self.batch_size < 1:
            raise InvalidHyper(f"sizes must be positive: {self}")
        if self.epochs < 0:
            raise InvalidHyper("epochs must be non-negative")
        if not (self.lr > 0 and np.isfinite(self.lr)):
            raise InvalidHyper(f"learning rate must be positive, got {self.lr}")


def train(X: np.ndarray, Y: np.ndarray, hyper: Hyper) -> tuple[LstmParams, list[float]]:
    """Plain minibatch SGD with a seeded initialisation and shuffle order."""
    hyper.validate()
    if len(X) == 0:
        raise EmptyDataset("no training samples")
    if X.ndim != 3 or Y.ndim != 2 or len(X) != len(Y):
        raise DimensionMismatch(f"inconsistent dataset shapes {X.shape} / {Y.shape}")
    if X.shape[1] != hyper.seq_len:
        raise InvalidHyper(f"dataset seq_len {X.shape[1]} differs from hyper seq_len {hyper.seq_len}")
    params = LstmParams.initial(X.shape[2], hyper.hidden, Y.shape[1], hyper.seed)
    stack = [a.copy() for a in params.stacked()]
    order_rng = fork_rng(hyper.seed, "lstm/batches")
    history: list[float] = []
    n = len(X)
    for _ in range(hyper.epochs):
        order = order_rng.generator.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = np.sort(order[start : start + hyper.batch_size])
            xb = np.asarray(X[idx], dtype=float)
            yb = np.asarray(Y[idx], dtype=float)
            loss, grads = _loss_and_grad_stacked(stack, xb, yb)
            for p, g in zip(stack, grads):
                p -= hyper.lr * g
            total += loss * len(idx)
        history.append(total / n)
    return LstmParams.from_stacked(*stack), history


def param_count(params: LstmParams) -> int:
    return sum(a.size for a in params.arrays())


def flatten(params: LstmParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in params.arrays()])


def unflatten(vector: Sequence[float], like: LstmParams) -> LstmParams:
    out, pos = [], 0
    for a in like.arrays():
        out.append(np.asarray(vector[pos : pos + a.size], dtype=float).reshape(a.shape))
        pos += a.size
    return LstmParams(*out)
