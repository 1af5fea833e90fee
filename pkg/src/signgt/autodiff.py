"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` (one per thread,
entered with ``with Tape() as tape:``). Outside a tape nothing is recorded,
which is how finite-difference evaluations stay cheap.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import InvalidShapeError, NonFiniteError, ShapeError, TapeError

ArrayLike = Union[np.ndarray, float, int, Sequence]

_local = threading.local()


class Tensor:
    """A dense float64 array that can take part in differentiation."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tape_node: Optional[TapeNode] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __abs__(self) -> "Tensor":
        return absolute(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


@dataclass(eq=False)
class TapeNode:
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]
    name: str = ""


@dataclass(eq=False)
class Tape:
    """Ordered record of the operations executed while the tape is active."""

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, node: TapeNode) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node.output.tape_node = None
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _check_finite(data: np.ndarray, name: str) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{name} produced non-finite values")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, inputs: tuple, backward, name: str) -> Tensor:
    _check_finite(data, name)
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = requires_grad
    out.grad = None
    out.tape_node = None
    tape = active_tape()
    if requires_grad and tape is not None:
        node = TapeNode(inputs, out, backward, name)
        tape.record(node)
        out.tape_node = node
    return out


# ---------------------------------------------------------------------------
# construction


def tensor_new(
    shape: Sequence[int],
    init: str = "zeros",
    *,
    c: float = 0.0,
    lo: float = -1.0,
    hi: float = 1.0,
    seed: Union[int, np.random.Generator, None] = None,
    requires_grad: bool = False,
) -> Tensor:
    """Create a tensor filled according to ``init``.

    ``init`` is one of ``"zeros"``, ``"constant"`` (value ``c``), ``"uniform"``
    (on ``[lo, hi)``) or ``"glorot"`` (uniform on +-sqrt(6/(fan_in+fan_out))).
    Random fills are deterministic for a given integer seed.
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise InvalidShapeError(f"all dimensions must be >= 1, got {shape}")
    if init == "zeros":
        data = np.zeros(shape)
    elif init == "constant":
        data = np.full(shape, float(c))
    elif init in ("uniform", "glorot"):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        if init == "glorot":
            fan_in = shape[0]
            fan_out = shape[1] if len(shape) > 1 else shape[0]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            lo, hi = -bound, bound
        data = rng.uniform(lo, hi, size=shape)
    else:
        raise ValueError(f"unknown init {init!r}")
    return Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return _emit(A @ B, (a, b), backward, "matmul")


def matmul_const(m, x: Tensor) -> Tensor:
    """Left-multiply ``x`` by a constant dense or sparse matrix."""
    if m.ndim != 2 or x.data.ndim != 2 or m.shape[1] != x.shape[0]:
        raise ShapeError(f"matmul shape mismatch {m.shape} @ {x.shape}")
    out = m @ x.data
    if sp.issparse(out):
        out = out.toarray()
    out = np.asarray(out, dtype=np.float64)
    mt = m.T

    def backward(g):
        r = mt @ g
        return (np.asarray(r),)

    return _emit(out, (x,), backward, "matmul_const")


def transpose(a: Tensor) -> Tensor:
    return _emit(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


# ---------------------------------------------------------------------------
# elementwise


def _same_shape(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name} requires identical shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _emit(A * B, (a, b), lambda g: (g * B, g * A), "mul")


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,), "scale")


def sign(a: Tensor) -> Tensor:
    """Entrywise sign with ``sign(0) = +1``; its derivative is taken as 0."""
    out = np.where(a.data < 0, -1.0, 1.0)
    return _emit(out, (a,), lambda g: (np.zeros_like(g),), "sign")


def absolute(a: Tensor) -> Tensor:
    # subgradient 0 at the origin
    s = np.sign(a.data)
    return _emit(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,), "exp")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


_UNARY = {
    "sign": sign,
    "abs": absolute,
    "exp": exp,
    "tanh": tanh,
    "relu": relu,
    "neg": neg,
}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, a: Tensor, b: Optional[Tensor] = None, c: float = 1.0) -> Tensor:
    """Dispatch an entrywise op by name; ``scale`` multiplies by ``c``."""
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind in _BINARY:
        if b is None:
            raise ShapeError(f"{kind} needs a second operand")
        return _BINARY[kind](a, b)
    if kind == "scale":
        return scale(a, c)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# row-vector broadcasting (the only broadcasting supported)


def _check_rowvec(a: Tensor, b: Tensor, name: str) -> None:
    if a.data.ndim != 2 or b.shape != (1, a.shape[1]):
        raise ShapeError(f"{name}: expected row vector of shape (1, {a.shape[-1]}), got {b.shape}")


def add_rowvec(a: Tensor, b: Tensor) -> Tensor:
    _check_rowvec(a, b, "add_rowvec")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)), "add_rowvec")


def mul_rowvec(a: Tensor, b: Tensor) -> Tensor:
    _check_rowvec(a, b, "mul_rowvec")
    A, B = a.data, b.data
    return _emit(
        A * B, (a, b), lambda g: (g * B, (g * A).sum(axis=0, keepdims=True)), "mul_rowvec"
    )


# ---------------------------------------------------------------------------
# row-wise normalisations


def _check_rows(a: Tensor, name: str) -> None:
    if a.data.ndim != 2 or a.shape[1] < 1:
        raise ShapeError(f"{name} expects a 2-D tensor with at least one column, got {a.shape}")


def softmax_rows(a: Tensor) -> Tensor:
    _check_rows(a, "softmax_rows")
    _check_finite(a.data, "softmax_rows input")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _emit(out, (a,), backward, "softmax_rows")


def log_softmax_rows(a: Tensor) -> Tensor:
    _check_rows(a, "log_softmax_rows")
    _check_finite(a.data, "log_softmax_rows input")
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _emit(out, (a,), backward, "log_softmax_rows")


def standardize_rows(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Shift and scale each row to mean 0, variance 1 (population variance)."""
    _check_rows(a, "standardize_rows")
    x = a.data
    mu = x.mean(axis=1, keepdims=True)
    with np.errstate(over="ignore", invalid="ignore"):
        var = x.var(axis=1, keepdims=True)
    # an overflowed variance would otherwise collapse the row to zeros
    _check_finite(var, "standardize_rows")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv

    def backward(g):
        gm = g.mean(axis=1, keepdims=True)
        gx = (g * xhat).mean(axis=1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _emit(xhat, (a,), backward, "standardize_rows")


# ---------------------------------------------------------------------------
# reductions, indexing, concatenation


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit(
        np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g.reshape(-1)[0]),), "sum"
    )


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _emit(
        np.array([[a.data.mean()]]),
        (a,),
        lambda g: (np.full(shape, g.reshape(-1)[0] / n),),
        "mean",
    )


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean over rows, giving a ``1 x d`` row vector."""
    _check_rows(a, "mean_rows")
    n = a.shape[0]
    shape = a.shape
    return _emit(
        a.data.mean(axis=0, keepdims=True),
        (a,),
        lambda g: (np.broadcast_to(g / n, shape).copy(),),
        "mean_rows",
    )


def take_rows(a: Tensor, index: Sequence[int]) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _emit(a.data[idx], (a,), backward, "take_rows")


def pick(a: Tensor, cols: Sequence[int]) -> Tensor:
    """Select one column per row, returning an ``m x 1`` tensor."""
    cols = np.asarray(cols, dtype=np.int64)
    if a.data.ndim != 2 or cols.shape != (a.shape[0],):
        raise ShapeError(f"pick needs one column index per row of {a.shape}")
    rows = np.arange(a.shape[0])
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[rows, cols] = g[:, 0]
        return (out,)

    return _emit(a.data[rows, cols][:, None], (a,), backward, "pick")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _emit(a.data[:, start:stop].copy(), (a,), backward, "slice_cols")


def _concat(tensors: Sequence[Tensor], axis: int, name: str) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError(f"{name} of an empty list")
    other = 1 - axis
    if any(t.data.ndim != 2 or t.shape[other] != tensors[0].shape[other] for t in tensors):
        raise ShapeError(f"{name} shape mismatch: {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        if axis == 1:
            return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return _emit(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, name
    )


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    return _concat(tensors, 1, "concat_cols")


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    return _concat(tensors, 0, "concat_rows")


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor, tape: Tape) -> dict:
    """Back-propagate from a scalar ``loss`` through ``tape``.

    Leaf tensors that require gradients get their ``grad`` buffers
    accumulated (``+=``). Returns a ``{leaf: gradient}`` map and clears the tape.
    """
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    node = loss.tape_node
    if node is None or not tape.nodes or not any(n is node for n in reversed(tape.nodes)):
        raise TapeError("loss is not recorded on this tape")

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.tape_node is None:
                if inp.shape != gi.shape:
                    gi = gi.reshape(inp.shape)
                leaves[id(inp)] = inp
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi
    tape.clear()
    return {t: t.grad for t in leaves.values()}


# ---------------------------------------------------------------------------
# finite-difference checking


def _scalar(value) -> float:
    v = value.data if isinstance(value, Tensor) else np.asarray(value)
    if v.size != 1:
        raise ShapeError("grad_check function must return a scalar")
    v = float(v.reshape(-1)[0])
    if not np.isfinite(v):
        raise NonFiniteError("grad_check evaluation is non-finite")
    return v


def numeric_grad(f: Callable, x, h: float = 1e-5) -> list:
    """Central-difference gradients of scalar ``f(x)`` for each tensor in ``x``."""
    if h <= 0:
        raise ValueError("h must be positive")
    xs = [x] if isinstance(x, Tensor) else list(x)
    out = []
    for t in xs:
        flat = t.data.reshape(-1)
        g = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f(x))
            flat[i] = orig - h
            fm = _scalar(f(x))
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * h)
        out.append(g.reshape(t.shape))
    return out


def analytic_grad(f: Callable, x) -> list:
    """Reverse-mode gradients of scalar ``f(x)``; leaves flags and buffers as found."""
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved = [(t.requires_grad, t.grad) for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    try:
        with Tape() as tape:
            loss = f(x)
        _scalar(loss)
        backward(loss, tape)
        return [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in xs]
    finally:
        for t, (rg, g) in zip(xs, saved):
            t.requires_grad = rg
            t.grad = g


def grad_check(f: Callable, x, h: float = 1e-5) -> float:
    """Largest per-coordinate relative error between analytic and central-difference gradients.

    ``x`` is a Tensor or a list of Tensors; ``f(x)`` must return a scalar.
    Relative error uses the denominator ``max(|analytic|, |numeric|, 1e-8)``.
    """
    analytic = analytic_grad(f, x)
    numeric = numeric_grad(f, x, h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
