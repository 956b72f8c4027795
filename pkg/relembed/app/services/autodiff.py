"""
Reverse-mode differentiation over numpy arrays.

Every operation returns a DiffTensor whose trace points at its inputs and
carries a closure that pushes the output gradient back into them. Graphs
are rebuilt for every batch (define-by-run); nothing is cached between calls.
"""
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from ..errors import DomainError, NonScalarLossError, ShapeMismatchError

SOFTPLUS_THRESHOLD = 30.0

ArrayLike = Union[np.ndarray, float, int, Sequence]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(tensor: "DiffTensor", grad: np.ndarray) -> None:
    if tensor.requires_grad:
        tensor.grad += grad


class DiffTensor:
    """
    Value buffer + gradient accumulator + trace node.

    Leaves created with requires_grad=True own a copy of their values and
    accumulate gradients across backward calls until zeroed. Interior nodes
    have their gradient reset at the start of every backward pass.
    """

    # Make numpy defer to our reflected operators (array + tensor -> tensor)
    __array_priority__ = 1000

    def __init__(self, values: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if requires_grad:
            self.values = np.array(values, dtype=np.float64, copy=True)
        else:
            self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.values) if requires_grad else None
        self.name = name
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward = None

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    @property
    def T(self) -> "DiffTensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.values.copy())

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"

    # -- backward ----------------------------------------------------------

    def _topological_order(self) -> list:
        order, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Populate .grad of every requires_grad leaf reachable from this scalar."""
        if self.values.size != 1:
            raise NonScalarLossError(f"backward needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = self._topological_order()
        for node in order:
            if node._parents:
                node.grad = np.zeros_like(node.values)
        seed = np.ones_like(self.values)
        if self._parents:
            self.grad = seed
        else:
            self.grad += seed
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operators ---------------------------------------------------------

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return pow_(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> "DiffTensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "DiffTensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims: bool = False) -> "DiffTensor":
        return max_(self, axis=axis, keepdims=keepdims)

    def exp(self) -> "DiffTensor":
        return exp(self)

    def log(self) -> "DiffTensor":
        return log(self)

    def sqrt(self) -> "DiffTensor":
        return sqrt(self)

    def reshape(self, *shape) -> "DiffTensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> DiffTensor:
    return value if isinstance(value, DiffTensor) else DiffTensor(value)


def _result(values: np.ndarray, parents: Iterable[DiffTensor], backward, op: str) -> DiffTensor:
    parents = tuple(parents)
    out = DiffTensor(values)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = np.zeros_like(out.values)
        out._parents = parents
        out._backward = backward
    return out


def _check_broadcast(a: DiffTensor, b: DiffTensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.values + b.values, (a, b), backward, "add")


def sub(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.values - b.values, (a, b), backward, "sub")


def mul(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.values, a.shape))
        _accumulate(b, _unbroadcast(g * a.values, b.shape))

    return _result(a.values * b.values, (a, b), backward, "mul")


def div(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.values / b.values

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.values, a.shape))
        _accumulate(b, _unbroadcast(-g * out / b.values, b.shape))

    return _result(out, (a, b), backward, "div")


def pow_(a, exponent: float) -> DiffTensor:
    a = as_tensor(a)
    exponent = float(exponent)
    out = a.values ** exponent

    def backward(g):
        _accumulate(a, g * exponent * a.values ** (exponent - 1.0))

    return _result(out, (a,), backward, "pow")


def exp(a) -> DiffTensor:
    a = as_tensor(a)
    out = np.exp(a.values)

    def backward(g):
        _accumulate(a, g * out)

    return _result(out, (a,), backward, "exp")


def log(a) -> DiffTensor:
    """Natural log; non-positive input is an error."""
    a = as_tensor(a)
    if np.any(a.values <= 0):
        raise DomainError("log of non-positive value")

    def backward(g):
        _accumulate(a, g / a.values)

    return _result(np.log(a.values), (a,), backward, "log")


def safe_log(a, eps: float = 1e-12) -> DiffTensor:
    """log(max(a, eps)); the gradient is zero where the floor is active."""
    a = as_tensor(a)
    floored = np.maximum(a.values, eps)

    def backward(g):
        _accumulate(a, g * (a.values > eps) / floored)

    return _result(np.log(floored), (a,), backward, "safe_log")


def sqrt(a) -> DiffTensor:
    a = as_tensor(a)
    if np.any(a.values < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(a.values)

    def backward(g):
        _accumulate(a, g * 0.5 / out)

    return _result(out, (a,), backward, "sqrt")


def abs_(a) -> DiffTensor:
    a = as_tensor(a)

    def backward(g):
        _accumulate(a, g * np.sign(a.values))

    return _result(np.abs(a.values), (a,), backward, "abs")


def maximum(a, floor: float) -> DiffTensor:
    """Elementwise max against a scalar (hinge)."""
    a = as_tensor(a)

    def backward(g):
        _accumulate(a, g * (a.values > floor))

    return _result(np.maximum(a.values, floor), (a,), backward, "maximum")


def clip(a, low: float, high: float) -> DiffTensor:
    a = as_tensor(a)
    inside = (a.values >= low) & (a.values <= high)

    def backward(g):
        _accumulate(a, g * inside)

    return _result(np.clip(a.values, low, high), (a,), backward, "clip")


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> DiffTensor:
    a = as_tensor(a)

    def backward(g):
        _accumulate(a, _expand_reduced(g, a.shape, axis, keepdims))

    return _result(a.values.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> DiffTensor:
    a = as_tensor(a)
    count = a.values.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return sum_(a, axis=axis, keepdims=keepdims) / float(count)


def max_(a, axis=None, keepdims: bool = False) -> DiffTensor:
    """Max reduction; tied maxima share the gradient equally."""
    a = as_tensor(a)
    peak = a.values.max(axis=axis, keepdims=True)
    mask = (a.values == peak).astype(np.float64)
    mask /= mask.sum(axis=axis, keepdims=True)

    def backward(g):
        _accumulate(a, _expand_reduced(g, a.shape, axis, keepdims) * mask)

    return _result(a.values.max(axis=axis, keepdims=keepdims), (a,), backward, "max")


def matmul(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")

    def backward(g):
        _accumulate(a, g @ b.values.T)
        _accumulate(b, a.values.T @ g)

    return _result(a.values @ b.values, (a, b), backward, "matmul")


def transpose(a) -> DiffTensor:
    a = as_tensor(a)

    def backward(g):
        _accumulate(a, g.T)

    return _result(a.values.T, (a,), backward, "transpose")


def reshape(a, shape: tuple) -> DiffTensor:
    a = as_tensor(a)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(a.values.reshape(shape), (a,), backward, "reshape")


def take(a, key) -> DiffTensor:
    """Slice or fancy-index; repeated indices accumulate in backward."""
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.values)
        np.add.at(full, key, g)
        _accumulate(a, full)

    return _result(a.values[key], (a,), backward, "take")


def concat(tensors: Sequence, axis: int = 0) -> DiffTensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for tensor, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(tensor, piece)

    return _result(np.concatenate([t.values for t in tensors], axis=axis), tensors, backward, "concat")


# ---------------------------------------------------------------------------
# Activations and layers
# ---------------------------------------------------------------------------

def softplus(a) -> DiffTensor:
    """log(1 + exp(x)), switching to x + log(1 + exp(-x)) above the overflow threshold."""
    a = as_tensor(a)
    x = a.values
    high = x > SOFTPLUS_THRESHOLD
    out = np.where(
        high,
        x + np.log1p(np.exp(-np.where(high, x, 0.0))),
        np.log1p(np.exp(np.where(high, 0.0, x))),
    )

    def backward(g):
        _accumulate(a, g * expit(x))

    return _result(out, (a,), backward, "softplus")


def relu(a) -> DiffTensor:
    return maximum(a, 0.0)


def identity(a) -> DiffTensor:
    return as_tensor(a)


def linear_layer(x, weight: DiffTensor, bias: Optional[DiffTensor] = None) -> DiffTensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


ACTIVATIONS = {
    "softplus": softplus,
    "relu": relu,
    "identity": identity,
}
