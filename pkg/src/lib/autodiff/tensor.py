"""## Tensors and reverse-mode differentiation

A `Tensor` wraps a float64 numpy array. Operations on tensors that require gradients record their
parents and a backward rule; `backward` walks the recorded graph from a scalar root in reverse
topological order.

Example:
```
x = Tensor([1.0, -2.0], requires_grad=True)
grads = backward(sum(square(x)))
grads[x]  # -> array([ 2., -4.])
```
"""
from __future__ import annotations

import numpy as np
from contextlib import contextmanager
from scipy.special import expit
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_RECORDING = True


class ContractViolation(ValueError):
    """An operation was called outside of its preconditions (shapes, scalar root, ...)."""


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording, e.g. for evaluation passes."""
    global _RECORDING
    previous = _RECORDING
    _RECORDING = False
    try:
        yield
    finally:
        _RECORDING = previous


class Tensor:
    """Dense float64 array participating in a recorded computation graph."""

    values: np.ndarray
    """Read-only array of values."""
    grad: Optional[np.ndarray]
    """Accumulated gradient (leaves only), same shape as `values`."""
    requires_grad: bool
    name: str

    __array_ufunc__ = None

    def __init__(
        self,
        values: ArrayLike,
        requires_grad: bool = False,
        name: str = "",
        _parents: Tuple[Tensor, ...] = (),
        _backward: Optional[BackwardFn] = None,
        _copy: bool = True,
    ) -> None:
        arr = np.array(values, dtype=np.float64) if _copy else np.asarray(values, dtype=np.float64)
        arr.flags.writeable = False
        self.values = arr
        self.requires_grad = requires_grad
        self.name = name
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        if self.size != 1:
            raise ContractViolation(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def assign(self, values: ArrayLike) -> None:
        """Replace the values of a leaf (parameter update between optimizer steps)."""
        if not self.is_leaf:
            raise ContractViolation("only leaf tensors can be assigned")
        arr = np.array(values, dtype=np.float64)
        if arr.shape != self.shape:
            raise ContractViolation(f"assign: shape {arr.shape} != {self.shape}")
        arr.flags.writeable = False
        self.values = arr

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def detach(self) -> Tensor:
        return Tensor(self.values)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # operators
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(x: Union[Tensor, ArrayLike]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    if _RECORDING and any(p.requires_grad for p in parents):
        return Tensor(
            values, requires_grad=True, _parents=tuple(parents), _backward=backward_fn, _copy=False
        )
    return Tensor(values, _copy=False)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over the axes that broadcasting added or stretched to reach `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary(a, b, fn):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = fn(a.values, b.values)
    except ValueError as e:
        raise ContractViolation(f"shape mismatch {a.shape} vs {b.shape}: {e}") from e
    return a, b, out


# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b, out = _binary(a, b, np.add)
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b, out = _binary(a, b, np.subtract)
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b, out = _binary(a, b, np.multiply)
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b, out = _binary(a, b, np.divide)
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * a.values / b.values ** 2, b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.values, (a,), lambda g: (-g,))


# linear algebra primitives


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation(f"matmul expects matrices, got {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.values, b.values)
    except ValueError as e:
        raise ContractViolation(f"matmul shape mismatch {a.shape} @ {b.shape}") from e

    def backward_fn(g):
        ga = np.matmul(g, np.swapaxes(b.values, -1, -2))
        gb = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward_fn)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim < 2:
        return a
    return _make(np.swapaxes(a.values, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


# reductions


def sum(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward_fn)


def mean(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return sum(a, axis=axis, keepdims=keepdims) / float(count)


# elementwise functions


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.values)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.values), (a,), lambda g: (g / a.values,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.logaddexp(0.0, a.values), (a,), lambda g: (g * expit(a.values),))


def sinh(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.sinh(a.values), (a,), lambda g: (g * np.cosh(a.values),))


def arcsinh(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.arcsinh(a.values), (a,), lambda g: (g / np.sqrt(1.0 + a.values ** 2),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.maximum(a.values, 0.0), (a,), lambda g: (g * (a.values > 0.0),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.values ** 2, (a,), lambda g: (2.0 * g * a.values,))


def sqrt(a) -> Tensor:
    """Square root. The gradient at exactly 0 is taken as 0."""
    a = as_tensor(a)
    out = np.sqrt(a.values)

    def backward_fn(g):
        safe = np.where(out > 0.0, out, 1.0)
        return (np.where(out > 0.0, 0.5 * g / safe, 0.0),)

    return _make(out, (a,), backward_fn)


def clamp_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    keep = a.values > floor
    return _make(np.where(keep, a.values, floor), (a,), lambda g: (g * keep,))


# shape manipulation


def reshape(a, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    return _make(a.values.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def broadcast_to(a, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.values, shape)
    except ValueError as e:
        raise ContractViolation(f"cannot broadcast {a.shape} to {shape}") from e
    return _make(out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def backward_fn(g):
        out = np.zeros(a.shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.values[index], (a,), backward_fn)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as e:
        raise ContractViolation(f"concat shape mismatch: {[t.shape for t in tensors]}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# reverse pass


class Gradients(Dict[Tensor, np.ndarray]):
    """Map from leaf tensors to gradients. Leaves the root does not depend on get exact zeros."""

    def __missing__(self, key: Tensor) -> np.ndarray:
        return np.zeros_like(key.values)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack_: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in visited:
                stack_.append((parent, False))
    return order


def backward(root: Tensor) -> Gradients:
    """Reverse-mode pass from a scalar `root`.

    Populates (accumulates into) `grad` on every reachable leaf that requires gradients and
    returns the leaf gradients as a `Gradients` mapping.
    """
    if root.size != 1:
        raise ContractViolation(f"backward needs a scalar root, got shape {root.shape}")

    result = Gradients()
    if not root.requires_grad:
        return result

    grads: Dict[int, np.ndarray] = {id(root): np.ones_like(root.values)}
    for node in reversed(_topological_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            result[node] = g
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return result
