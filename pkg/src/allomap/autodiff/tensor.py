"""Dense float32 tensors with tape-based reverse-mode differentiation.

Storage is 32-bit; reductions (sums, means, scatter-adds, GEMM) accumulate in
64-bit before casting back. One tape records one forward pass; `backward`
replays adjoints in reverse order, then clears the tape. A second backward on
the same tape is rejected.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    """Operands disagree on shape; the message reports every shape involved."""

    def __init__(self, op: str, *shapes):
        super().__init__(
            f"{op}: incompatible shapes " + " vs ".join(str(tuple(s)) for s in shapes)
        )


class TapeError(RuntimeError):
    pass


_DTYPE = {"value": np.float32}


def dtype():
    """Active storage dtype (float32 in production)."""
    return _DTYPE["value"]


class precision:
    """Temporarily switch tensor storage precision (gradient checkers run
    composed graphs in float64 so tiny difference steps stay above the
    rounding floor)."""

    def __init__(self, dt):
        self._dt = dt

    def __enter__(self):
        self._prev = _DTYPE["value"]
        _DTYPE["value"] = self._dt
        return self

    def __exit__(self, *exc):
        _DTYPE["value"] = self._prev
        return False


class Tensor:
    """N-dimensional float32 value, optionally tracked for gradients."""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of executed differentiable operations."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False


_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "recording", True)


def active_tape() -> Tape:
    """The thread's current tape, creating a fresh one if none is active."""
    tape = getattr(_state, "tape", None)
    if tape is None or tape.consumed:
        tape = Tape()
        _state.tape = tape
    return tape


def reset_tape() -> None:
    """Drop any recorded-but-unconsumed forward graph."""
    _state.tape = Tape()


class no_grad:
    """Context manager disabling tape recording (eval / data generation)."""

    def __enter__(self):
        self._prev = _recording()
        _state.recording = False
        return self

    def __exit__(self, *exc):
        _state.recording = self._prev
        return False


def _record(out: Tensor, inputs: Sequence[Tensor],
            backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    if _recording() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        active_tape().nodes.append(_Node(out, tuple(inputs), backward))
    return out


def backward(loss: Tensor) -> None:
    """Populate gradients of everything reachable from a scalar loss."""
    if loss.data.size != 1:
        raise TapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = getattr(_state, "tape", None)
    if tape is None or tape.consumed or not tape.nodes:
        raise TapeError(
            "no active tape: run a forward pass first "
            "(a tape supports a single backward; double-backward is unsupported)"
        )
    if not any(node.out is loss for node in tape.nodes):
        raise TapeError("loss was not produced on the active tape")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        gout = node.out.grad
        if gout is None:
            continue
        grads = node.backward(gout)
        for tin, g in zip(node.inputs, grads):
            if g is None or not tin.requires_grad:
                continue
            g32 = np.asarray(g, dtype=dtype()).reshape(tin.data.shape)
            if tin.grad is None:
                tin.grad = g32.copy() if g32 is g else g32
            else:
                tin.grad = tin.grad + g32
    tape.nodes.clear()
    tape.consumed = True


# ---------------------------------------------------------------------------
# construction helpers

def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype()), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype()), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# elementwise ops
#
# Shapes must match exactly, or the right operand's shape must be a trailing
# suffix of the left's (bias-style). General broadcasting is out of scope.

def _check_pair(op: str, a: Tensor, b: Tensor) -> bool:
    """True when b broadcasts as a trailing suffix of a; raises otherwise."""
    if a.shape == b.shape:
        return False
    n = len(b.shape)
    if n < len(a.shape) and a.shape[len(a.shape) - n:] == b.shape:
        return True
    raise ShapeMismatch(op, a.shape, b.shape)


def _reduce_to_suffix(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    lead = tuple(range(g.ndim - len(shape)))
    return g.sum(axis=lead, dtype=np.float64).astype(dtype())


def add(a: Tensor, b: Tensor) -> Tensor:
    suffix = _check_pair("add", a, b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        gb = _reduce_to_suffix(g, b.shape) if suffix else g
        return g, gb

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    suffix = _check_pair("sub", a, b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        gb = _reduce_to_suffix(-g, b.shape) if suffix else -g
        return g, gb

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    suffix = _check_pair("mul", a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        ga = g * b.data
        gb = g * a.data
        if suffix:
            gb = _reduce_to_suffix(gb, b.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


def scale(a: Tensor, s: float, shift: float = 0.0) -> Tensor:
    s = float(s)
    out = Tensor(a.data * dtype()(s) + dtype()(shift))
    return _record(out, (a,), lambda g: (g * dtype()(s),))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * out.data * (1.0 - out.data),))


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))
    return _record(out, (a,), lambda g: (g * (1.0 - out.data * out.data),))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0

    return _record(out, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# shape ops

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    return _record(out, (a,), lambda g: (g.transpose(inv),))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ValueError("concat requires at least one tensor")
    ref = parts[0].shape
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            p.shape[d] != ref[d] for d in range(len(ref)) if d != axis % len(ref)
        ):
            raise ShapeMismatch("concat", *[p.shape for p in parts])
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(parts), bwd)


# ---------------------------------------------------------------------------
# index ops (row gather/scatter along axis 0)

def gather(a: Tensor, index: np.ndarray) -> Tensor:
    """out[k] = a[index[k]] over leading axis."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("gather index must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"gather index out of range for leading extent {a.shape[0]}")
    out = Tensor(a.data[idx])

    def bwd(g):
        acc = np.zeros(a.data.shape, dtype=np.float64)
        np.add.at(acc, idx, g.astype(np.float64))
        return (acc.astype(dtype()),)

    return _record(out, (a,), bwd)


def scatter(base: Tensor, index: np.ndarray, src: Tensor) -> Tensor:
    """Copy of base with rows at `index` replaced by rows of src.

    Indices must be unique (one writer per row); the adjoint with respect to
    src is exactly a gather with the same index table.
    """
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("scatter index must be 1-D")
    if np.unique(idx).size != idx.size:
        raise ValueError("scatter requires unique indices")
    if idx.size and (idx.min() < 0 or idx.max() >= base.shape[0]):
        raise IndexError(f"scatter index out of range for leading extent {base.shape[0]}")
    if src.shape[0] != idx.size or src.shape[1:] != base.shape[1:]:
        raise ShapeMismatch("scatter", base.shape, src.shape)
    data = base.data.copy()
    data[idx] = src.data
    out = Tensor(data)

    def bwd(g):
        gbase = g.copy()
        gbase[idx] = 0.0
        return gbase, g[idx]

    return _record(out, (base, src), bwd)


# ---------------------------------------------------------------------------
# matmul and reductions

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D or batched 3-D matrix product, 64-bit accumulation."""
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3):
        raise ShapeMismatch("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2] or (a.data.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeMismatch("matmul", a.shape, b.shape)
    a64 = a.data.astype(np.float64)
    b64 = b.data.astype(np.float64)
    out = Tensor(a64 @ b64)

    def bwd(g):
        g64 = g.astype(np.float64)
        ga = g64 @ b64.swapaxes(-1, -2)
        gb = a64.swapaxes(-1, -2) @ g64
        return ga.astype(dtype()), gb.astype(dtype())

    return _record(out, (a, b), bwd)


def tsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(dtype=np.float64))
    return _record(out, (a,), lambda g: (np.full(a.data.shape, g, dtype=dtype()),))


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.sum(dtype=np.float64) / n)
    return _record(
        out, (a,), lambda g: (np.full(a.data.shape, g / n, dtype=dtype()),)
    )
