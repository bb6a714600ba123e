"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: every operation returns a ``Tensor`` that remembers its
parent tensors and a closure pushing the output adjoint back to them.
``backward`` replays the recorded graph once, in reverse topological
order.  The graph is rebuilt on every forward pass; nothing is cached.

All values are float64.  The op set is deliberately small: what the
recurrent encoder, the CTC bridge and the distillation term need, and
nothing more.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    """An op received non-conformable operands."""

    def __init__(self, op: str, shape_a, shape_b):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(f"{op}: shapes {self.shape_a} and {self.shape_b} are not conformable")


class Tensor:
    """Graph node wrapping a float64 ndarray.

    ``parents`` and ``vjp`` are empty/None for leaves.  ``grad`` is filled
    in by :func:`backward`; it stays None for tensors the output does not
    depend on.
    """

    __slots__ = ("data", "parents", "vjp", "grad")

    def __init__(self, data, parents: tuple = (), vjp: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, leaf={self.vjp is None})"

    # operator sugar; scalars go through scale()
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return add(self, scale(other, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def _accum(t: Tensor, g: np.ndarray):
    # non-inplace so pass-through vjps may share arrays safely
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeMismatch(op, a.data.shape, b.data.shape) from None


# ---------------------------------------------------------------------------
# ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape == b.data.shape:  # fast path: no broadcast bookkeeping

        def vjp(g):
            _accum(a, g)
            _accum(b, g)

    else:
        _check_broadcast("add", a, b)

        def vjp(g):
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(a.data + b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        _check_broadcast("mul", a, b)

    def vjp(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(a.data * b.data, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch("matmul", a.data.shape, b.data.shape)

    def vjp(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return Tensor(a.data @ b.data, (a, b), vjp)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def vjp(g):
        _accum(x, c * g)

    return Tensor(c * x.data, (x,), vjp)


def shift(x: Tensor, c: float) -> Tensor:
    """x + constant (gradient passes through)."""

    def vjp(g):
        _accum(x, g)

    return Tensor(x.data + float(c), (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def vjp(g):
        _accum(x, g * (1.0 - y * y))

    return Tensor(y, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))

    def vjp(g):
        _accum(x, g * y * (1.0 - y))

    return Tensor(y, (x,), vjp)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def vjp(g):
        _accum(x, g * y)

    return Tensor(y, (x,), vjp)


def log(x: Tensor) -> Tensor:
    def vjp(g):
        _accum(x, g / x.data)

    return Tensor(np.log(x.data), (x,), vjp)


def softmax(x: Tensor) -> Tensor:
    """Row softmax over the last axis."""
    y = softmax_np(x.data)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accum(x, y * (g - dot))

    return Tensor(y, (x,), vjp)


def log_softmax(x: Tensor) -> Tensor:
    y = log_softmax_np(x.data)
    p = np.exp(y)

    def vjp(g):
        _accum(x, g - p * g.sum(axis=-1, keepdims=True))

    return Tensor(y, (x,), vjp)


def tsum(x: Tensor) -> Tensor:
    def vjp(g):
        _accum(x, np.broadcast_to(g, x.data.shape))

    return Tensor(x.data.sum(), (x,), vjp)


def mean(x: Tensor) -> Tensor:
    return scale(tsum(x), 1.0 / x.data.size)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accum(p, piece)

    return Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), vjp)


def take(x: Tensor, key) -> Tensor:
    """Slice / index; the adjoint scatters back into a zero array."""

    def vjp(g):
        full = np.zeros_like(x.data)
        full[key] = g
        _accum(x, full)

    return Tensor(x.data[key], (x,), vjp)


def custom_node(value, parents: tuple, vjp: Callable) -> Tensor:
    """Attach an externally-differentiated result (e.g. a DP loss) to the graph."""
    return Tensor(value, parents, vjp)


# ---------------------------------------------------------------------------
# numpy twins used by inference paths and custom nodes


def softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def logsumexp_np(z: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(z, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(z - m), axis=axis, keepdims=True)) + m
    return out if axis is None else np.squeeze(out, axis=axis)


# ---------------------------------------------------------------------------
# backward


def backward(out: Tensor) -> None:
    """Accumulate gradients of ``out`` (a scalar) into every reachable tensor."""
    if out.data.size != 1:
        raise ValueError(f"backward requires a scalar output, got shape {out.data.shape}")

    # iterative DFS post-order: parents precede children in `order`
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))

    out.grad = np.ones_like(out.data)
    for node in reversed(order):
        if node.vjp is not None and node.grad is not None:
            node.vjp(node.grad)


# ---------------------------------------------------------------------------
# parameter vectors


class ParameterVector:
    """Ordered, named float64 segments over one flat vector.

    The flat vector is the canonical storage; segments are reshaped views
    into it.  ``with_flat`` produces a sibling sharing names/shapes, which
    is how optimizer steps hand back updated parameters.
    """

    def __init__(self, names: list[str], shapes: list[tuple], vector: np.ndarray):
        if len(names) != len(set(names)):
            raise ValueError("segment names must be unique")
        self.names = list(names)
        self.shapes = [tuple(s) for s in shapes]
        sizes = [int(np.prod(s)) if s else 1 for s in self.shapes]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.vector = np.asarray(vector, dtype=np.float64).ravel()
        if self.vector.size != self.offsets[-1]:
            raise ValueError(
                f"flat vector has {self.vector.size} entries, layout needs {self.offsets[-1]}"
            )

    @classmethod
    def from_segments(cls, segments: Sequence[tuple[str, np.ndarray]]) -> "ParameterVector":
        names = [name for name, _ in segments]
        shapes = [np.asarray(a).shape for _, a in segments]
        vector = (
            np.concatenate([np.asarray(a, dtype=np.float64).ravel() for _, a in segments])
            if segments
            else np.zeros(0)
        )
        return cls(names, shapes, vector)

    @property
    def total_len(self) -> int:
        return self.vector.size

    def segment(self, name: str) -> np.ndarray:
        i = self.names.index(name)
        return self.vector[self.offsets[i] : self.offsets[i + 1]].reshape(self.shapes[i])

    def segments(self):
        for i, name in enumerate(self.names):
            yield name, self.vector[self.offsets[i] : self.offsets[i + 1]].reshape(self.shapes[i])

    def with_flat(self, vector: np.ndarray) -> "ParameterVector":
        return ParameterVector(self.names, self.shapes, vector)

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.names, self.shapes, self.vector.copy())

    def flat(self) -> np.ndarray:
        return self.vector.copy()

    def tensors(self) -> dict[str, Tensor]:
        """Fresh leaf tensors for one forward pass."""
        return {name: Tensor(arr) for name, arr in self.segments()}

    def grad_from(self, tensors: dict[str, Tensor]) -> np.ndarray:
        """Flat gradient in layout order; zeros for parameters the loss never touched."""
        pieces = []
        for i, name in enumerate(self.names):
            g = tensors[name].grad
            size = self.offsets[i + 1] - self.offsets[i]
            pieces.append(np.zeros(size) if g is None else np.asarray(g).ravel())
        return np.concatenate(pieces) if pieces else np.zeros(0)

    def __eq__(self, other):
        return (
            isinstance(other, ParameterVector)
            and self.names == other.names
            and self.shapes == other.shapes
            and np.array_equal(self.vector, other.vector)
        )


# ---------------------------------------------------------------------------
# finite differences


def finite_diff_check(
    f: Callable[[ParameterVector], tuple[float, np.ndarray]],
    theta: ParameterVector,
    h: float = 1e-5,
    num_probes: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between f's analytic gradient and central differences.

    ``f`` maps a ParameterVector to ``(value, flat_gradient)``.  Probing all
    coordinates is the default; pass ``num_probes`` to sample a subset.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    value, grad = f(theta)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise ValueError("f returned non-finite value or gradient at theta")
    n = theta.total_len
    if num_probes is None or num_probes >= n:
        coords = np.arange(n)
    else:
        coords = np.random.default_rng(seed).choice(n, size=num_probes, replace=False)

    worst = 0.0
    base = theta.vector
    for i in coords:
        bumped = base.copy()
        bumped[i] = base[i] + h
        up = f(theta.with_flat(bumped))[0]
        bumped[i] = base[i] - h
        down = f(theta.with_flat(bumped))[0]
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError(f"f non-finite at probe coordinate {i}")
        central = (up - down) / (2.0 * h)
        err = abs(grad[i] - central) / (abs(grad[i]) + abs(central) + 1e-12)
        worst = max(worst, err)
    return worst
