"""Dense float64 tensors with reverse-mode automatic differentiation and Adam.

A :class:`Tensor` wraps a numpy array. Operations executed inside a
``with Tape():`` block are recorded on that tape; :func:`backward` replays
the tape in reverse and accumulates gradients into every ``requires_grad``
tensor the loss depends on. Gradients add up across backward calls until
:func:`zero_grads` clears them, so callers zero explicitly before each batch.

Everything is 64-bit and CPU-only. Broadcasting is deliberately restricted
to row-wise bias addition; anything else raises :class:`ShapeError`.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError, ValidationError

__all__ = [
    "Tensor",
    "Tape",
    "AdamState",
    "matmul",
    "transpose",
    "add",
    "mul_scalar",
    "relu",
    "softmax",
    "layer_norm",
    "linear",
    "scaled_dot_attention",
    "cross_entropy",
    "sum_all",
    "mean_rows",
    "concat_cols",
    "reshape",
    "backward",
    "adam_step",
    "zero_grads",
]


class Tensor:
    """Row-major float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Execution-ordered record of operations, replayable in reverse.

    Each entry holds the output tensor, its input tensors, and a backward
    rule mapping the output gradient to one gradient per input. Execution
    order is a topological order by construction, so the reverse sweep in
    :func:`backward` sees every consumer before the producer.
    """

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise ContractError("tape context exited out of order")
        stack.pop()
        return False


_state = threading.local()


def _tape_stack() -> list[Tape]:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = []
        _state.stack = stack
    return stack


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _record(out: Tensor, inputs: tuple[Tensor, ...], rule) -> None:
    tape = _active_tape()
    if tape is not None:
        tape._entries.append((out, inputs, rule))


def _require_2d(t: Tensor, name: str) -> None:
    if t.data.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {t.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an m-by-k and a k-by-n tensor."""
    _require_2d(a, "matmul lhs")
    _require_2d(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def rule(g):
        return g @ bd.T, ad.T @ g

    _record(out, (a, b), rule)
    return out


def transpose(x: Tensor) -> Tensor:
    _require_2d(x, "transpose input")
    out = Tensor(x.data.T.copy())

    def rule(g):
        return (g.T,)

    _record(out, (x,), rule)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias added to every row of a matrix."""
    if a.shape == b.shape:
        out = Tensor(a.data + b.data)

        def rule(g):
            return g, g

    elif a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        out = Tensor(a.data + b.data)

        def rule(g):
            return g, g.sum(axis=0)

    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    _record(out, (a, b), rule)
    return out


def mul_scalar(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(x.data * s)

    def rule(g):
        return (g * s,)

    _record(out, (x,), rule)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0

    def rule(g):
        return (g * mask,)

    _record(out, (x,), rule)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stabilized softmax along ``axis``; every slice sums to 1."""
    nd = x.data.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def rule(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    _record(out, (x,), rule)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then scale and shift."""
    _require_2d(x, "layer_norm input")
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma/beta shapes {gamma.shape}/{beta.shape} do not match width {d}"
        )
    if eps <= 0.0:
        raise ValidationError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)
    gdat = gamma.data

    def rule(g):
        dxhat = g * gdat
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    _record(out, (x, gamma, beta), rule)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the bias broadcast over rows."""
    return add(matmul(x, w), b)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention returning (output, weights).

    Weights are softmax(q k^T / sqrt(dk)) row-wise, with dk the shared key
    width, so each weight row sums to 1.
    """
    _require_2d(q, "attention query")
    _require_2d(k, "attention key")
    _require_2d(v, "attention value")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"attention: query/key widths differ, {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention: key/value row counts differ, {k.shape} vs {v.shape}")
    dk = q.shape[1]
    scores = mul_scalar(matmul(q, transpose(k)), 1.0 / math.sqrt(dk))
    weights = softmax(scores, axis=1)
    out = matmul(weights, v)
    return out, weights


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Computed through the log-sum-exp form so huge logits stay finite.
    Labels are 0-based class indices, one per logits row.
    """
    _require_2d(logits, "cross_entropy logits")
    n, classes = logits.shape
    idx = np.asarray(labels, dtype=np.int64)
    if idx.shape != (n,):
        raise ShapeError(f"cross_entropy: expected {n} labels, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= classes):
        raise ValidationError(
            f"cross_entropy: labels must lie in [0, {classes}), got range "
            f"[{idx.min()}, {idx.max()}]"
        )
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    lse = m[:, 0] + np.log(e.sum(axis=1))
    out = Tensor(np.mean(lse - z[np.arange(n), idx]))
    probs = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        dz = probs.copy()
        dz[np.arange(n), idx] -= 1.0
        return (dz * (float(g) / n),)

    _record(out, (logits,), rule)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())
    shape = x.data.shape

    def rule(g):
        return (np.full(shape, float(g)),)

    _record(out, (x,), rule)
    return out


def mean_rows(x: Tensor) -> Tensor:
    """Mean over rows of an n-by-d matrix, returned as a 1-by-d matrix."""
    _require_2d(x, "mean_rows input")
    n = x.shape[0]
    out = Tensor(x.data.mean(axis=0, keepdims=True))

    def rule(g):
        return (np.repeat(g / n, n, axis=0),)

    _record(out, (x,), rule)
    return out


def concat_cols(parts: list[Tensor]) -> Tensor:
    """Horizontal concatenation of 2-D tensors sharing a row count."""
    if not parts:
        raise ShapeError("concat_cols: need at least one tensor")
    rows = parts[0].shape[0]
    for p in parts:
        _require_2d(p, "concat_cols input")
        if p.shape[0] != rows:
            raise ShapeError(
                f"concat_cols: row counts differ, {p.shape} vs {parts[0].shape}"
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    widths = [p.shape[1] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=1))

    _record(out, tuple(parts), rule)
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    out = Tensor(x.data.reshape(shape))
    orig = x.data.shape

    def rule(g):
        return (g.reshape(orig),)

    _record(out, (x,), rule)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(tensor) into every requires_grad tensor on the tape.

    The loss must be a scalar produced by operations recorded on ``tape``.
    Repeated calls keep adding into ``grad`` buffers; callers zero between
    steps via :func:`zero_grads`.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, rule in reversed(tape._entries):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        if out.requires_grad:
            out.accumulate_grad(g)
        holders.pop(id(out), None)
        in_grads = rule(g)
        for t, ig in zip(inputs, in_grads):
            if ig is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
                holders[key] = t
    for key, t in holders.items():
        if t.requires_grad:
            t.accumulate_grad(grads[key])


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(
        cls,
        params,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place; missing grads count as zero."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError(
            f"adam_step: got {len(params)} params, {len(grads)} grads, "
            f"{len(state.m)} moment buffers"
        )
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(
                f"adam_step: grad shape {g.shape} does not match param {p.data.shape}"
            )
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)
