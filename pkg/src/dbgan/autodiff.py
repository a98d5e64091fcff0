"""Dense reverse-mode automatic differentiation over numpy arrays.

Every backward rule is written with the same differentiable primitives as the
forward pass. Gradients computed with ``create_graph=True`` are therefore
ordinary graph nodes and can be differentiated again, which is what the
gradient penalty needs.

All arithmetic is float64. Broadcasting is limited to scalar/tensor
combinations; anything else is a shape error.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from . import kernels

_state = threading.local()


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    prev = is_grad_enabled()
    _state.enabled = enabled
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float64 array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward", "_op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self):
        return transpose(self)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    __hash__ = object.__hash__

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: Tensor, shape) -> Tensor:
    # gradient flowing to a scalar operand that was broadcast over a tensor
    if g.shape == shape:
        return g
    return sum(g)


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")

    def backward(g):
        return _unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)

    return _node(a.data * b.data, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def spmm(mat: sp.spmatrix, x) -> Tensor:
    """Constant sparse matrix times a dense tensor; only ``x`` is differentiated."""
    x = as_tensor(x)
    if x.data.ndim != 2 or mat.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {mat.shape} and {x.shape}")
    mat = sp.csr_matrix(mat)

    def backward(g):
        return (spmm(mat.T.tocsr(), g),)

    return _node(kernels.csr_spmm(mat, x.data), (x,), backward, "spmm")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _node(a.data.T, (a,), lambda g: (transpose(g),), "transpose")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)

    def backward(g):
        return (mul(g, Tensor(mask)),)

    return _node(a.data * mask, (a,), backward, "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = expit(a.data)
    holder = []

    def backward(g):
        s = holder[0]
        return (mul(g, mul(s, sub(1.0, s))),)

    out = _node(out_data, (a,), backward, "sigmoid")
    holder.append(out if out.requires_grad else Tensor(out_data))
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log of non-positive value (min {a.data.min():.3g})")

    def backward(g):
        return (mul(g, reciprocal(a)),)

    return _node(np.log(a.data), (a,), backward, "log")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (mul(g, mul(2.0, a)),), "square")


def sqrt(a) -> Tensor:
    """Square root; the derivative at exactly 0 is taken as 0."""
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError(f"sqrt of negative value (min {a.data.min():.3g})")
    holder = []

    def backward(g):
        return (mul(g, mul(0.5, reciprocal(holder[0]))),)

    out = _node(np.sqrt(a.data), (a,), backward, "sqrt")
    holder.append(out if out.requires_grad else Tensor(out.data))
    return out


def reciprocal(a) -> Tensor:
    """``1/a`` elementwise, with 0 mapped to 0 (and zero derivative there)."""
    a = as_tensor(a)
    nz = a.data != 0
    out_data = np.zeros_like(a.data)
    np.divide(1.0, a.data, out=out_data, where=nz)
    holder = []

    def backward(g):
        r = holder[0]
        return (neg(mul(g, mul(r, r))),)

    out = _node(out_data, (a,), backward, "reciprocal")
    holder.append(out if out.requires_grad else Tensor(out_data))
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)

    def backward(g):
        return (mul(g, Tensor(inside)),)

    return _node(np.clip(a.data, lo, hi), (a,), backward, "clip")


def sum(a, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy
    """Sum of all entries (scalar) or along ``axis`` of a matrix (kept as a 1-wide axis)."""
    a = as_tensor(a)
    if axis is None:
        shape = a.shape

        def backward(g):
            return (mul(g, Tensor(np.ones(shape))),)

        return _node(np.asarray(a.data.sum()), (a,), backward, "sum")
    if a.data.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"sum over axis {axis} needs a matrix, got {a.shape}")
    rows, cols = a.shape
    if axis == 1:

        def backward(g):
            return (matmul(g, Tensor(np.ones((1, cols)))),)

        return _node(a.data.sum(axis=1, keepdims=True), (a,), backward, "sum1")

    def backward0(g):
        return (matmul(Tensor(np.ones((rows, 1))), g),)

    return _node(a.data.sum(axis=0, keepdims=True), (a,), backward0, "sum0")


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / count)


def row_norm(a) -> Tensor:
    """Euclidean norm of each row of a matrix, shape (n, 1)."""
    return sqrt(sum(square(a), axis=1))


def concat_rows(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1 or any(p.data.ndim != 2 for p in parts):
        raise ShapeError(f"concat_rows: mismatched shapes {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        return tuple(row_slice(g, int(bounds[i]), int(bounds[i + 1])) for i in range(len(parts)))

    return _node(np.concatenate([p.data for p in parts], axis=0), parts, backward, "concat")


def row_slice(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    n, k = a.shape

    def backward(g):
        pieces = []
        if start > 0:
            pieces.append(Tensor(np.zeros((start, k))))
        pieces.append(g)
        if stop < n:
            pieces.append(Tensor(np.zeros((n - stop, k))))
        return (concat_rows(pieces) if len(pieces) > 1 else g,)

    return _node(a.data[start:stop].copy(), (a,), backward, "row_slice")


def take_rows(a, idx) -> Tensor:
    """Gather rows ``a[idx]`` (indices may repeat)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]

    def backward(g):
        return (scatter_rows(g, idx, n),)

    return _node(a.data[idx], (a,), backward, "take_rows")


def scatter_rows(a, idx, n: int) -> Tensor:
    """Adjoint of :func:`take_rows`: sum rows of ``a`` into an ``n``-row zero matrix."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((n, a.shape[1]))
    np.add.at(out, idx, a.data)

    def backward(g):
        return (take_rows(g, idx),)

    return _node(out, (a,), backward, "scatter_rows")


# ---------------------------------------------------------------- engine


def _topo_order(root: Tensor) -> List[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _propagate(output: Tensor, create_graph: bool) -> Dict[int, Tensor]:
    if output.shape != ():
        raise ShapeError(f"gradient source must be a scalar, got shape {output.shape}")
    grads: Dict[int, Tensor] = {id(output): Tensor(1.0)}
    order = _topo_order(output)
    with _grad_mode(create_graph):
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)
    keep = {id(n): n for n in order}
    return {k: v for k, v in grads.items() if k in keep}


def grad(output: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> List[Tensor]:
    """Gradients of scalar ``output`` with respect to each tensor in ``inputs``.

    Raises ``ValueError`` if an input is not an ancestor of ``output``.
    """
    grads = _propagate(output, create_graph)
    out = []
    for x in inputs:
        g = grads.get(id(x))
        if g is None:
            raise ValueError(f"{x!r} is not an ancestor of the output")
        out.append(g if create_graph else Tensor(g.data))
    return out


GradientMap = Dict[Tensor, np.ndarray]


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> GradientMap:
    """Gradients of ``loss`` for every reachable leaf that requires grad.

    When ``params`` is given, the map also holds zero gradients for listed
    parameters that the loss does not reach.
    """
    grads = _propagate(loss, create_graph=False)
    order = _topo_order(loss)
    result: GradientMap = {}
    for node in order:
        if node.is_leaf and node.requires_grad and id(node) in grads:
            result[node] = grads[id(node)].data
    if params is not None:
        for p in params:
            if p not in result:
                result[p] = np.zeros_like(p.data)
    return result


def input_gradient(output: Tensor, x: Tensor) -> Tensor:
    """``d output / d x`` as a differentiable tensor (double backprop)."""
    return grad(output, [x], create_graph=True)[0]


def finite_difference_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5) -> float:
    """Compare ``backward`` against central differences of ``f`` at ``x``.

    Returns ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``, or
    the absolute difference when both gradients vanish.
    """
    x = np.array(x, dtype=np.float64)
    xt = Tensor(x.copy(), requires_grad=True)
    analytic = backward(f(xt), [xt])[xt]
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    # grad mode stays on so f may itself take input gradients (penalties)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(Tensor(x)).item()
        flat[i] = orig - step
        lo = f(Tensor(x)).item()
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * step)
    diff = np.max(np.abs(analytic - numeric)) if x.size else 0.0
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    return float(diff / scale) if scale > 0 else float(diff)
