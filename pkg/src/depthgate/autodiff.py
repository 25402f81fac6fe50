"""Dense float64 tensors with a reverse-mode gradient tape.

Every learned component in this package runs on these primitives. Design
constraints, in rough priority order: 64-bit precision throughout so
finite-difference checks can be tight, a deterministic backward order
(exact reverse of recording order), and loud failures on shape mismatch.
Broadcasting is restricted to leading-axis expansion: two shapes are
compatible only when they are equal or one is a trailing suffix of the
other. Anything fancier must be written out explicitly by the caller.

The tape is explicit. Operations record onto the innermost active
:class:`Tape`; with no active tape they run in inference mode and record
nothing. Calling :meth:`Tape.backward` resets the gradients of every
tensor the tape touches before accumulating, so running it twice on the
same tape yields identical results. Single-threaded by design: concurrent
trainers need one tape each and must not share parameter tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import EmptyInputError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "AdamState",
    "GradCheckReport",
    "constant",
    "parameter",
    "add",
    "mul",
    "matmul",
    "transpose",
    "linear",
    "gelu",
    "softmax",
    "layernorm",
    "concat",
    "slice_rows",
    "reduce_max",
    "reduce_sum",
    "mse_loss",
    "adam_step",
    "grad_check",
]


class Tensor:
    """A float64 array plus gradient metadata.

    ``grad`` is allocated (zero-filled) exactly when ``requires_grad`` is
    set. Data is treated as immutable once the tensor participates in a
    recorded computation; the two sanctioned mutations are gradient
    accumulation during backward and optimizer updates between steps.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


@dataclass
class TapeNode:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], None]


class Tape:
    """Ordered record of operations for reverse-mode differentiation.

    Nodes are appended in execution order, which makes the record
    topological by construction: an operation's inputs are either leaves
    or outputs of earlier nodes. ``backward`` replays the record in exact
    reverse. The record itself is append-only and never mutated by
    backward, so repeated backward calls agree bit for bit.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _STACK.pop()
        assert popped is self, "tape stack corrupted"

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into ``grad`` for every recorded tensor.

        ``loss`` must hold a single element. Gradients of all tensors the
        tape touches are reset to zero first; leaves then receive the sum
        of contributions over every path from the loss.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad:
                    t.grad.fill(0.0)
            node.output.grad.fill(0.0)
        if not loss.requires_grad:
            return
        loss.grad.fill(1.0)
        for node in reversed(self.nodes):
            g = node.output.grad
            if not g.any():
                continue
            node.backward(g)


_STACK: list[Tape | None] = []


def _active_tape() -> Tape | None:
    return _STACK[-1] if _STACK else None


class _suspend_recording:
    """Context that hides any active tape (used for numeric probes)."""

    def __enter__(self):
        _STACK.append(None)

    def __exit__(self, exc_type, exc, tb):
        _STACK.pop()


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
            backward: Callable[[np.ndarray], None]) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.nodes.append(TapeNode(op, tuple(inputs), out, backward))
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers (leading-axis expansion only)

def _check_broadcast(op: str, a: tuple[int, ...], b: tuple[int, ...]) -> None:
    if a == b:
        return
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    if len(small) == len(big) or (len(small) > 0 and big[len(big) - len(small):] != small):
        raise ShapeError(
            f"{op}: shapes {a} and {b} are incompatible; only leading-axis "
            f"broadcast is supported (equal shapes or one a trailing suffix of the other)"
        )


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    reduced = grad.sum(axis=tuple(range(grad.ndim - len(shape))))
    return reduced.reshape(shape)


# ---------------------------------------------------------------------------
# primitive operations

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a.shape, b.shape)
    out = a.data + b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.shape)

    return _record("add", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a.shape, b.shape)
    out = a.data * b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.shape)

    return _record("mul", (a, b), out, bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ g

    return _record("matmul", (a, b), out, bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d tensor, got shape {a.shape}")
    out = a.data.T.copy()

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g.T

    return _record("transpose", (a,), out, bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w + b`` for ``x`` of shape [n, in]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError(
            f"linear expects x [n,in], w [in,out], b [out]; got {x.shape}, {w.shape}, {b.shape}")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"linear: dimensions disagree, x {x.shape}, w {w.shape}, b {b.shape}")
    out = x.data @ w.data + b.data

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.grad += g @ w.data.T
        if w.requires_grad:
            w.grad += x.data.T @ g
        if b.requires_grad:
            b.grad += g.sum(axis=0)

    return _record("linear", (x, w, b), out, bwd)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
            x.grad += g * (cdf + x.data * pdf)

    return _record("gelu", (x,), out, bwd)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, numerically shifted by the row max."""
    if x.data.ndim == 0 or x.shape[-1] == 0:
        raise EmptyInputError(f"softmax needs a non-empty last axis, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            inner = (g * p).sum(axis=-1, keepdims=True)
            x.grad += p * (g - inner)

    return _record("softmax", (x,), p, bwd)


# Small enough that a unit-variance row normalizes to variance 1 within 1e-8,
# large enough to keep the backward stable for any realistic activation.
LAYERNORM_EPS = 1e-12


def layernorm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then scale and shift."""
    d = x.shape[-1] if x.data.ndim else 0
    if d == 0:
        raise EmptyInputError(f"layernorm needs a non-empty last axis, got shape {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layernorm: gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    xh = xc * inv
    out = xh * gain.data + bias.data

    def bwd(g: np.ndarray) -> None:
        lead = tuple(range(g.ndim - 1))
        if bias.requires_grad:
            bias.grad += g.sum(axis=lead)
        if gain.requires_grad:
            gain.grad += (g * xh).sum(axis=lead)
        if x.requires_grad:
            gxh = g * gain.data
            m1 = gxh.mean(axis=-1, keepdims=True)
            m2 = (gxh * xh).mean(axis=-1, keepdims=True)
            x.grad += (gxh - m1 - xh * m2) * inv

    return _record("layernorm", (x, gain, bias), out, bwd)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``; all other dimensions must agree."""
    if len(parts) == 0:
        raise EmptyInputError("concat needs at least one tensor")
    nd = parts[0].data.ndim
    ax = axis if axis >= 0 else axis + nd
    if not 0 <= ax < nd:
        raise ShapeError(f"concat: axis {axis} out of range for {nd}-d tensors")
    base = list(parts[0].shape)
    for t in parts[1:]:
        other = list(t.shape)
        if len(other) != nd or other[:ax] + other[ax + 1:] != base[:ax] + base[ax + 1:]:
            raise ShapeError(
                f"concat along axis {axis}: shape {t.shape} incompatible with {parts[0].shape}")
    out = np.concatenate([t.data for t in parts], axis=ax)
    offsets = np.cumsum([0] + [t.shape[ax] for t in parts])

    def bwd(g: np.ndarray) -> None:
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * nd
                idx[ax] = slice(lo, hi)
                t.grad += g[tuple(idx)]

    return _record("concat", tuple(parts), out, bwd)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` of a 2-d tensor; gradient scatters back into place."""
    if x.data.ndim != 2:
        raise ShapeError(f"slice_rows needs a 2-d tensor, got shape {x.shape}")
    n = x.shape[0]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice_rows: invalid range [{start}, {stop}) for {n} rows")
    out = x.data[start:stop].copy()

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.grad[start:stop] += g

    return _record("slice_rows", (x,), out, bwd)


def reduce_max(x: Tensor, axis: int = 0) -> Tensor:
    """Maximum over ``axis``; ties route the gradient to the lowest index."""
    nd = x.data.ndim
    ax = axis if axis >= 0 else axis + nd
    if not 0 <= ax < nd:
        raise ShapeError(f"reduce_max: axis {axis} out of range for shape {x.shape}")
    if x.shape[ax] == 0:
        raise EmptyInputError(f"reduce_max over an empty axis, shape {x.shape}")
    idx = np.argmax(x.data, axis=ax)  # first occurrence, i.e. lowest index
    out = np.take_along_axis(x.data, np.expand_dims(idx, ax), ax).squeeze(ax)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            scatter = np.zeros_like(x.data)
            np.put_along_axis(scatter, np.expand_dims(idx, ax), np.expand_dims(g, ax), ax)
            x.grad += scatter

    return _record("reduce_max", (x,), out, bwd)


def reduce_sum(x: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    out = np.asarray(x.data.sum())

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.grad += g  # scalar broadcasts over the full shape

    return _record("reduce_sum", (x,), out, bwd)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements, as a 0-d tensor."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes differ, {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise EmptyInputError("mse_loss over zero elements")
    diff = pred.data - target.data
    out = np.asarray((diff * diff).mean())
    scale = 2.0 / pred.size

    def bwd(g: np.ndarray) -> None:
        if pred.requires_grad:
            pred.grad += g * scale * diff
        if target.requires_grad:
            target.grad -= g * scale * diff

    return _record("mse_loss", (pred, target), out, bwd)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    """First/second moment buffers and step counter for one parameter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_param(cls, p: Tensor) -> "AdamState":
        return cls(m=np.zeros_like(p.data), v=np.zeros_like(p.data))


def adam_step(p: Tensor, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update of ``p.data`` in place from the current ``p.grad``.

    Mutating parameter data is only legal between training steps, never
    while a tape recording that parameter is still going to be replayed.
    """
    if p.grad is None:
        raise ShapeError("adam_step needs a parameter with requires_grad set")
    if state.m.shape != p.data.shape:
        raise ShapeError(f"adam state shape {state.m.shape} does not match parameter {p.shape}")
    state.t += 1
    g = p.grad
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# derivative verification

@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    checked: int
    passed: bool


def _scalarize(out) -> Tensor:
    if isinstance(out, Tensor):
        return reduce_sum(out)
    total = reduce_sum(out[0])
    for t in out[1:]:
        total = add(total, reduce_sum(t))
    return total


def grad_check(op: Callable[..., object], inputs: Sequence[Tensor],
               step: float = 1e-5, tol: float = 1e-4,
               max_entries: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of ``sum(op(*inputs))`` against central differences.

    Every entry of every grad-requiring input is probed with a symmetric
    perturbation of ``step`` unless ``max_entries`` caps the count, in
    which case a seeded uniform subset of entries is probed. The relative
    error of an entry is ``|a - n| / max(|a|, |n|, 1)``, which behaves as
    an absolute error for small gradients.
    """
    if not 0.0 < step <= 1e-3:
        raise ValueError(f"step must lie in (0, 1e-3], got {step}")
    checked = [t for t in inputs if t.requires_grad]
    if not checked:
        raise ValueError("grad_check needs at least one input with requires_grad")

    with Tape() as tape:
        loss = _scalarize(op(*inputs))
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: op produced a non-finite value")
    tape.backward(loss)
    analytic = [t.grad.copy() for t in checked]
    if any(not np.isfinite(a).all() for a in analytic):
        raise NumericError("grad_check: analytic gradient is non-finite")

    def probe() -> float:
        with _suspend_recording():
            out = op(*inputs)
        if isinstance(out, Tensor):
            return float(out.data.sum())
        return float(sum(t.data.sum() for t in out))

    entries = [(i, j) for i, t in enumerate(checked) for j in range(t.size)]
    if max_entries is not None and len(entries) > max_entries:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[int(k)] for k in sorted(pick)]

    max_rel = 0.0
    for i, j in entries:
        flat = checked[i].data.reshape(-1)
        saved = flat[j]
        flat[j] = saved + step
        f_plus = probe()
        flat[j] = saved - step
        f_minus = probe()
        flat[j] = saved
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericError("grad_check: perturbed op produced a non-finite value")
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = float(analytic[i].reshape(-1)[j])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
        if rel > max_rel:
            max_rel = rel

    return GradCheckReport(max_rel_err=max_rel, tol=tol, checked=len(entries),
                           passed=max_rel <= tol)
