"""Dense 64-bit matrices with tape-based reverse-mode differentiation, Adam and init."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import _kernels as K
from .errors import EmptySegment, NonScalarLoss, SegmentOutOfRange, ShapeMismatch

LEAKY_SLOPE = 0.2


class Var:
    """A matrix value living on a tape."""

    __slots__ = ("value", "tape", "requires_grad", "name", "_grad")

    def __init__(self, value, tape: "Tape", requires_grad: bool = False, name: str | None = None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(-1, 1)
        elif value.ndim != 2:
            raise ShapeMismatch(f"matrices must be 2-D, got shape {value.shape}")
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name
        self._grad = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Records operations in creation order for a single backward sweep.

    With ``record=False`` the tape evaluates ops eagerly and keeps nothing,
    which is how frozen weights are used at inference time.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._entries: list[tuple[Var, tuple[Var, ...], Callable]] = []
        self.params: dict[str, Var] = {}

    def __len__(self):
        return len(self._entries)

    def param(self, name: str, value) -> Var:
        var = Var(np.array(value, dtype=np.float64), self, requires_grad=self.record, name=name)
        self.params[name] = var
        return var

    def constant(self, value) -> Var:
        return Var(value, self, requires_grad=False)

    def push(self, value: np.ndarray, inputs: Sequence[Var], vjp: Callable) -> Var:
        needs = self.record and any(x.requires_grad for x in inputs)
        out = Var(value, self, requires_grad=needs)
        if needs:
            self._entries.append((out, tuple(inputs), vjp))
        return out

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        if loss.value.size != 1:
            raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
        try:
            loss._grad = np.ones_like(loss.value)
            for out, inputs, vjp in reversed(self._entries):
                g = out._grad
                if g is None:
                    continue
                for x, gx in zip(inputs, vjp(g)):
                    if gx is None or not x.requires_grad:
                        continue
                    x._grad = gx if x._grad is None else x._grad + gx
            return {
                name: (p._grad if p._grad is not None else np.zeros_like(p.value))
                for name, p in self.params.items()
            }
        finally:
            for out, inputs, _ in self._entries:
                out._grad = None
                for x in inputs:
                    x._grad = None
            for p in self.params.values():
                p._grad = None
            self._entries.clear()


def backward(loss: Var) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` for every parameter on its tape."""
    return loss.tape.backward(loss)


def _lift(x, tape: Tape) -> Var:
    return x if isinstance(x, Var) else tape.constant(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Var:
    """``a + b``; ``b`` may be a ``(1, d)`` row broadcast over the rows of ``a``."""
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.shape == b.shape:
        return tape.push(a.value + b.value, (a, b), lambda g: (g, g))
    if b.shape == (1, a.shape[1]):
        return tape.push(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ShapeMismatch(f"cannot add {a.shape} and {b.shape}")


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot subtract {b.shape} from {a.shape}")
    return tape.push(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot multiply {a.shape} and {b.shape} elementwise")
    av, bv = a.value, b.value
    return tape.push(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Var, c: float) -> Var:
    return a.tape.push(a.value * c, (a,), lambda g: (g * c,))


def add_scalar(a: Var, c: float) -> Var:
    return a.tape.push(a.value + c, (a,), lambda g: (g,))


def relu(a: Var) -> Var:
    mask = a.value > 0
    return a.tape.push(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a: Var, slope: float = LEAKY_SLOPE) -> Var:
    factor = np.where(a.value > 0, 1.0, slope)
    return a.tape.push(a.value * factor, (a,), lambda g: (g * factor,))


def identity(a: Var) -> Var:
    return a


def total(a: Var) -> Var:
    """Sum of all entries as a ``(1, 1)`` matrix."""
    shape = a.shape
    return a.tape.push(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


# ---------------------------------------------------------------- structural

def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return tape.push(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def concat_cols(a: Var, b: Var) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"row counts differ: {a.shape} vs {b.shape}")
    split = a.shape[1]
    return tape.push(np.hstack([a.value, b.value]), (a, b), lambda g: (g[:, :split], g[:, split:]))


def gather_rows(a: Var, index) -> Var:
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise SegmentOutOfRange("row index out of range")
    return a.tape.push(a.value[index], (a,), lambda g: (K.segment_sum(g, index, n),))


def row_scale(a, s) -> Var:
    """Multiply row ``i`` of ``a`` by ``s[i, 0]``."""
    tape = _tape_of(a, s)
    a, s = _lift(a, tape), _lift(s, tape)
    if s.shape != (a.shape[0], 1):
        raise ShapeMismatch(f"row scales {s.shape} do not fit {a.shape}")
    av, sv = a.value, s.value
    return tape.push(av * sv, (a, s), lambda g: (g * sv, (g * av).sum(axis=1, keepdims=True)))


def _check_segments(seg: np.ndarray, n_rows: int, n_seg: int) -> np.ndarray:
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape != (n_rows,):
        raise ShapeMismatch(f"need one segment id per row ({n_rows}), got {seg.shape}")
    if seg.size and (seg.min() < 0 or seg.max() >= n_seg):
        raise SegmentOutOfRange(f"segment ids must lie in [0, {n_seg})")
    return seg


def _require_nonempty(seg: np.ndarray, n_seg: int) -> None:
    if n_seg and np.bincount(seg, minlength=n_seg).min() == 0:
        raise EmptySegment("every segment needs at least one row")


def segment_sum(x: Var, seg, n_seg: int) -> Var:
    seg = _check_segments(seg, x.shape[0], n_seg)
    return x.tape.push(K.segment_sum(x.value, seg, n_seg), (x,), lambda g: (g[seg],))


def segment_max(x: Var, seg, n_seg: int) -> Var:
    """Columnwise max per segment; gradient goes to the lowest-index argmax row."""
    seg = _check_segments(seg, x.shape[0], n_seg)
    _require_nonempty(seg, n_seg)
    out, arg = K.segment_max(x.value, seg, n_seg)
    n, d = x.shape
    cols = np.broadcast_to(np.arange(d), arg.shape)

    def vjp(g):
        gx = np.zeros((n, d))
        np.add.at(gx, (arg, cols), g)
        return (gx,)

    return x.tape.push(out, (x,), vjp)


def segment_softmax(x: Var, seg, n_seg: int) -> Var:
    """Softmax of a column vector within each segment."""
    if x.shape[1] != 1:
        raise ShapeMismatch(f"segment_softmax expects a column vector, got {x.shape}")
    seg = _check_segments(seg, x.shape[0], n_seg)
    _require_nonempty(seg, n_seg)
    y = K.segment_softmax(x.value[:, 0], seg, n_seg)[:, None]

    def vjp(g):
        inner = K.segment_sum(g * y, seg, n_seg)
        return (y * (g - inner[seg]),)

    return x.tape.push(y, (x,), vjp)


def propagate(x: Var, src, dst, weight, n_out: int) -> Var:
    """Weighted message passing ``out[dst] += weight * x[src]`` with constant weights."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    w = np.asarray(weight, dtype=np.float64)[:, None]
    n_in = x.shape[0]
    out = K.segment_sum(x.value[src] * w, dst, n_out)
    return x.tape.push(out, (x,), lambda g: (K.segment_sum(g[dst] * w, src, n_in),))


def pairwise_distances(a: Var, b: Var) -> Var:
    """Euclidean distance between every row of ``a`` and every row of ``b``."""
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"row widths differ: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    dist = K.pairwise_distances(av, bv)

    def vjp(g):
        # the norm is not differentiable at 0; use the zero subgradient there.
        # Rows that differ only by summation-order rounding count as equal,
        # otherwise the noise picks an arbitrary unit direction.
        scale = max(np.abs(av).max(initial=0.0), np.abs(bv).max(initial=0.0))
        w = np.divide(g, dist, out=np.zeros_like(g), where=dist > 1e-12 * (1.0 + scale))
        ga = av * w.sum(axis=1, keepdims=True) - w @ bv
        gb = bv * w.sum(axis=0)[:, None] - w.T @ av
        return ga, gb

    return a.tape.push(dist, (a, b), vjp)


# ---------------------------------------------------------------- training

def glorot_init(rows: int, cols: int, rng_seed: int) -> np.ndarray:
    if rows <= 0 or cols <= 0:
        raise ValueError("dimensions must be positive")
    limit = np.sqrt(6.0 / (rows + cols))
    return np.random.default_rng(rng_seed).uniform(-limit, limit, size=(rows, cols))


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Returns fresh arrays; inputs are untouched."""
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name in sorted(params):
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise ShapeMismatch(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_params[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_m[name], new_v[name] = m, v
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)
    return new_params, new_state
