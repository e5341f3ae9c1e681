"""Dense float64 tensors with reverse-mode automatic differentiation.

The op surface is the minimum needed to train the graph attention model:
matrix multiply, column concatenation, row gather / segment reductions,
softmax over variable-length segments, GELU, sigmoid, log, elementwise
arithmetic, and scalar reductions.  Everything is double precision, every
op checks its output for NaN/Inf, and all ops are deterministic (identical
inputs produce bitwise-identical outputs).

Recording is explicit: wrap the forward pass in a `Tape` context, then call
`tape.backward(loss)`.  Without an active tape, ops run as plain numpy and
keep no history, which is what evaluation passes use.
"""

from __future__ import annotations

import struct
import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import EmptySegment, NonFinite

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_STATE = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_STATE, "tape", None)


def _checked(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"non-finite values produced by {op}")
    return arr


class Tensor:
    """A dense float64 array, optionally tracked for gradients.

    `grad` is allocated only for leaf tensors created with
    requires_grad=True (parameters and inputs under test); intermediate op
    outputs keep their transient gradients inside the tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_from_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True)
        _checked(arr, "tensor init")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._from_op = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _op(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable, name: str) -> Tensor:
    """Wrap an op result; record it when a tape is active and grads are needed."""
    _checked(out_data, name)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._from_op = True
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(out, inputs, backward)
    else:
        out.requires_grad = False
    return out


class Tape:
    """Execution-ordered op log; replayed in reverse for backprop.

    Append order is a valid topological order (an op's inputs always exist
    before its output), so the reversed sweep sees every consumer before
    the producer and gradients for shared parents accumulate additively.
    """

    def __init__(self):
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._prev: "Tape | None" = None

    def __enter__(self) -> "Tape":
        self._prev = _active_tape()
        _STATE.tape = self
        return self

    def __exit__(self, *exc) -> bool:
        _STATE.tape = self._prev
        return False

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._ops.append((out, inputs, backward))

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(leaf) into each leaf tensor's .grad."""
        if root.data.size != 1:
            raise ValueError("backward root must be a scalar")
        pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for out, inputs, backward in reversed(self._ops):
            grad = pending.pop(id(out), None)
            if grad is None:
                continue
            for tensor, piece in zip(inputs, backward(grad)):
                if piece is None or not tensor.requires_grad:
                    continue
                if tensor._from_op:
                    key = id(tensor)
                    if key in pending:
                        pending[key] = pending[key] + piece
                    else:
                        pending[key] = piece
                else:
                    tensor.grad += piece


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


# --- arithmetic ---

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def add_bias(mat: Tensor, row: Tensor) -> Tensor:
    """Matrix plus a broadcast bias row; the only broadcasting we allow."""
    if mat.data.ndim != 2 or row.data.ndim != 1 or mat.shape[1] != row.shape[0]:
        raise ValueError(f"add_bias shape mismatch: {mat.shape} vs {row.shape}")
    return _op(mat.data + row.data[None, :], (mat, row),
               lambda g: (g, g.sum(axis=0)), "add_bias")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    return _op(a.data * b.data, (a, b),
               lambda g: (g * b.data, g * a.data), "mul")


def affine(t: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """Elementwise scale*t + shift with python-float coefficients."""
    return _op(scale * t.data + shift, (t,), lambda g: (scale * g,), "affine")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _op(a.data @ b.data, (a, b),
               lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


# --- structure ---

def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    mats = [p.data for p in parts]
    if any(m.ndim != 2 for m in mats) or len({m.shape[0] for m in mats}) != 1:
        raise ValueError("concat_cols expects 2-d tensors with equal row counts")
    widths = [m.shape[1] for m in mats]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(mats)))

    return _op(np.concatenate(mats, axis=1), tuple(parts), backward, "concat_cols")


def gather_rows(t: Tensor, index: np.ndarray) -> Tensor:
    """Select rows (2-d) or elements (1-d) by integer index; repeats allowed."""
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        acc = np.zeros_like(t.data)
        np.add.at(acc, index, g)
        return (acc,)

    return _op(t.data[index], (t,), backward, "gather_rows")


def scale_rows(mat: Tensor, vec: Tensor) -> Tensor:
    """Multiply row i of `mat` by scalar vec[i]."""
    if mat.data.ndim != 2 or vec.data.ndim != 1 or mat.shape[0] != vec.shape[0]:
        raise ValueError(f"scale_rows shape mismatch: {mat.shape} vs {vec.shape}")
    return _op(mat.data * vec.data[:, None], (mat, vec),
               lambda g: (g * vec.data[:, None], (g * mat.data).sum(axis=1)), "scale_rows")


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row inner product of two equal-shape matrices -> 1-d tensor."""
    if a.shape != b.shape or a.data.ndim != 2:
        raise ValueError(f"row_dot shape mismatch: {a.shape} vs {b.shape}")
    return _op((a.data * b.data).sum(axis=1), (a, b),
               lambda g: (g[:, None] * b.data, g[:, None] * a.data), "row_dot")


def _segment_bounds(lengths: np.ndarray) -> np.ndarray:
    return np.concatenate(([0], np.cumsum(lengths)))


def segment_sum(mat: Tensor, lengths: np.ndarray, targets: np.ndarray, n_rows: int) -> Tensor:
    """Sum contiguous row segments of `mat` into an [n_rows, D] result.

    Segment i covers lengths[i] consecutive rows and lands in row
    targets[i]; rows of the output without a segment stay zero.
    Accumulation follows row order within each segment, so results are
    reproducible for a fixed edge ordering.
    """
    lengths = np.asarray(lengths, dtype=np.intp)
    targets = np.asarray(targets, dtype=np.intp)
    if lengths.sum() != mat.shape[0]:
        raise ValueError("segment lengths do not cover the matrix")
    bounds = _segment_bounds(lengths)

    def forward():
        out = np.zeros((n_rows, mat.shape[1]))
        if len(lengths):
            out[targets] = np.add.reduceat(mat.data, bounds[:-1], axis=0)
        return out

    def backward(g):
        return (np.repeat(g[targets], lengths, axis=0),)

    return _op(forward(), (mat,), backward, "segment_sum")


def segment_softmax(values: Tensor, lengths: np.ndarray) -> Tensor:
    """Softmax within each contiguous segment of a 1-d tensor.

    Max-subtraction keeps the exponentials stable; each segment's outputs
    sum to 1.  Raises EmptySegment if any segment has zero length.
    """
    lengths = np.asarray(lengths, dtype=np.intp)
    if values.data.ndim != 1 or lengths.sum() != values.shape[0]:
        raise ValueError("segment lengths do not cover the values")
    if np.any(lengths == 0):
        raise EmptySegment("segment_softmax given an empty segment")
    bounds = _segment_bounds(lengths)
    starts = bounds[:-1]
    maxima = np.maximum.reduceat(values.data, starts)
    shifted = np.exp(values.data - np.repeat(maxima, lengths))
    sums = np.add.reduceat(shifted, starts)
    probs = shifted / np.repeat(sums, lengths)

    def backward(g):
        inner = np.add.reduceat(probs * g, starts)
        return (probs * (g - np.repeat(inner, lengths)),)

    return _op(probs, (values,), backward, "segment_softmax")


# --- nonlinearities ---

def gelu(t: Tensor) -> Tensor:
    """x * Phi(x) with the exact standard normal CDF (no tanh approximation)."""
    x = t.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return _op(x * cdf, (t,), lambda g: (g * (cdf + x * pdf),), "gelu")


def sigmoid(t: Tensor) -> Tensor:
    out = np.empty_like(t.data)
    pos = t.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t.data[pos]))
    ez = np.exp(t.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _op(out, (t,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log(t: Tensor) -> Tensor:
    with np.errstate(divide="raise", invalid="raise"):
        try:
            out = np.log(t.data)
        except FloatingPointError as exc:
            raise NonFinite("log of a non-positive value") from exc
    return _op(out, (t,), lambda g: (g / t.data,), "log")


def clamp(t: Tensor, lo: float, hi: float) -> Tensor:
    inside = (t.data > lo) & (t.data < hi)
    return _op(np.clip(t.data, lo, hi), (t,),
               lambda g: (np.where(inside, g, 0.0),), "clamp")


# --- reductions ---

def sum_all(t: Tensor) -> Tensor:
    return _op(np.asarray(t.data.sum()), (t,),
               lambda g: (np.broadcast_to(g, t.data.shape).copy(),), "sum_all")


def mean_all(t: Tensor) -> Tensor:
    n = t.data.size
    return _op(np.asarray(t.data.mean()), (t,),
               lambda g: (np.broadcast_to(g / n, t.data.shape).copy(),), "mean_all")


def logsumexp(values: Tensor) -> Tensor:
    """Stable log-sum-exp of a 1-d tensor -> scalar."""
    if values.data.ndim != 1 or values.shape[0] == 0:
        raise ValueError("logsumexp expects a non-empty 1-d tensor")
    m = values.data.max()
    shifted = np.exp(values.data - m)
    total = shifted.sum()
    return _op(np.asarray(m + np.log(total)), (values,),
               lambda g: (g * shifted / total,), "logsumexp")


def pick(values: Tensor, index: int) -> Tensor:
    if values.data.ndim != 1:
        raise ValueError("pick expects a 1-d tensor")

    def backward(g):
        acc = np.zeros_like(values.data)
        acc[index] = g
        return (acc,)

    return _op(np.asarray(values.data[index]), (values,), backward, "pick")


def flatten(t: Tensor) -> Tensor:
    shape = t.data.shape
    return _op(t.data.reshape(-1), (t,), lambda g: (g.reshape(shape),), "flatten")


# --- verification ---

def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               max_coords: int = 32, seed: int = 0) -> float:
    """Compare analytic gradients of scalar f() against central differences.

    Returns max over sampled coordinates of
    |analytic - numeric| / max(1, |numeric|).
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = f()
        tape.backward(out)
    analytic = [p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        count = min(max_coords, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + eps
            hi = float(f().data)
            flat[c] = keep - eps
            lo = float(f().data)
            flat[c] = keep
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(grad.reshape(-1)[c] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


# --- checkpoint I/O ---

_MAGIC = b"TNSR"
_VERSION = 1


def save_tensors(path, named: dict[str, Tensor]) -> None:
    """Write named tensors: magic, version, count, then per tensor a
    length-prefixed name, u32 rank, u32 dims, and little-endian f64 data."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(named)))
        for name, tensor in named.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            dims = tensor.data.shape
            fh.write(struct.pack("<I", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(tensor.data.astype("<f8").tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: not a tensor checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(dims)
        offset += 8 * size
        out[name] = data.copy()
    return out
