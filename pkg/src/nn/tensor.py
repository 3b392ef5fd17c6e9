"""Array-valued reverse-mode automatic differentiation on numpy.

Every operation records its parents and a closure mapping the output gradient
to one gradient per parent. ``Tensor.backward`` walks the graph in reverse
topological order and accumulates into ``.grad`` of leaf tensors that require
gradients (parameters and, when asked for, inputs).
"""

from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.common.exceptions import NumericError, ShapeError

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
Axis = Optional[Union[int, Tuple[int, ...]]]

_FLOAT_TYPES = (np.float32, np.float64)
_state = {"grad_enabled": True}


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    previous = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = previous


def _as_array(data: ArrayLike, dtype: Optional[np.dtype] = None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.type not in _FLOAT_TYPES:
        arr = arr.astype(np.float32)
    return arr


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional real array with an optional gradient tape."""

    __array_priority__ = 100.0

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[np.dtype] = None,
        _parents: Tuple["Tensor", ...] = (),
        _op: str = "leaf",
    ):
        self.data: np.ndarray = _as_array(data, dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Optional[BackwardFn] = None
        self._op = _op

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(
        data: np.ndarray,
        parents: Tuple["Tensor", ...],
        op: str,
        backward: BackwardFn,
    ) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NumericError(
                f"Non-finite value produced by forward operation '{op}'", operation=op
            )
        requires = _state["grad_enabled"] and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=requires, _parents=parents if requires else (), _op=op)
        if requires:
            out._backward = backward
        return out

    @staticmethod
    def ensure(value: Union["Tensor", ArrayLike], like: Optional["Tensor"] = None) -> "Tensor":
        if isinstance(value, Tensor):
            return value
        dtype = like.data.dtype if like is not None else None
        return Tensor(value, dtype=dtype)

    # -- properties -------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a single-element tensor", 1, self.data.size)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- arithmetic -------------------------------------------------------------

    def __add__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        other = Tensor.ensure(other, self)
        a, b = self, other

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
            return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

        return Tensor._make(a.data + b.data, (a, b), "add", backward)

    __radd__ = __add__

    def __sub__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        other = Tensor.ensure(other, self)
        a, b = self, other

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
            return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

        return Tensor._make(a.data - b.data, (a, b), "sub", backward)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Tensor.ensure(other, self) - self

    def __mul__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        other = Tensor.ensure(other, self)
        a, b = self, other

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
            ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
            gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor._make(a.data * b.data, (a, b), "mul", backward)

    __rmul__ = __mul__

    def __truediv__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        other = Tensor.ensure(other, self)
        a, b = self, other

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
            ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
            gb = (
                unbroadcast(-g * a.data / (b.data * b.data), b.shape)
                if b.requires_grad
                else None
            )
            return ga, gb

        return Tensor._make(a.data / b.data, (a, b), "div", backward)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Tensor.ensure(other, self) / self

    def __neg__(self) -> "Tensor":
        a = self
        return Tensor._make(-a.data, (a,), "neg", lambda g: (-g,))

    def __pow__(self, exponent: float) -> "Tensor":
        a = self
        p = float(exponent)

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
            return (g * p * a.data ** (p - 1.0),)

        return Tensor._make(a.data**p, (a,), "pow", backward)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        a, b = self, Tensor.ensure(other, self)
        if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise ShapeError("matmul inner dimensions differ", a.shape, b.shape)

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
            ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
            gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor._make(a.data @ b.data, (a, b), "matmul", backward)

    # -- reductions -------------------------------------------------------------

    def sum(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        a = self
        out = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._make(np.asarray(out), (a,), "sum", backward)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- shape manipulation -----------------------------------------------------

    def reshape(self, *shape: Union[int, Tuple[int, ...]]) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(
            a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),)
        )

    def transpose(self, *axes: int) -> "Tensor":
        a = self
        perm = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
        inverse = tuple(np.argsort(perm))
        return Tensor._make(
            np.transpose(a.data, perm), (a,), "transpose", lambda g: (np.transpose(g, inverse),)
        )

    def broadcast_to(self, shape: Tuple[int, ...]) -> "Tensor":
        a = self
        return Tensor._make(
            np.broadcast_to(a.data, shape).copy(),
            (a,),
            "broadcast_to",
            lambda g: (unbroadcast(g, a.shape),),
        )

    def __getitem__(self, index: object) -> "Tensor":
        a = self
        basic = all(
            isinstance(i, (int, slice, type(None), type(Ellipsis)))
            for i in (index if isinstance(index, tuple) else (index,))
        )

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
            full = np.zeros_like(a.data)
            if basic:
                full[index] += g
            else:
                np.add.at(full, index, g)
            return (full,)

        return Tensor._make(np.array(a.data[index]), (a,), "getitem", backward)

    # -- elementwise functions ------------------------------------------------

    def exp(self) -> "Tensor":
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), "exp", lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(a.data)
        return Tensor._make(out, (a,), "log", lambda g: (g / a.data,))

    def tanh(self) -> "Tensor":
        a = self
        out = np.tanh(a.data)
        return Tensor._make(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))

    def sigmoid(self) -> "Tensor":
        a = self
        out = np.exp(-np.logaddexp(0.0, -a.data)).astype(a.dtype)
        return Tensor._make(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))

    def abs(self) -> "Tensor":
        a = self
        return Tensor._make(np.abs(a.data), (a,), "abs", lambda g: (g * np.sign(a.data),))

    def logsumexp(self, axis: int, keepdims: bool = False) -> "Tensor":
        a = self
        peak = np.max(a.data, axis=axis, keepdims=True)
        shifted = np.exp(a.data - peak)
        total = np.sum(shifted, axis=axis, keepdims=True, dtype=np.float64).astype(a.dtype)
        out_keep = peak + np.log(total)
        out = out_keep if keepdims else np.squeeze(out_keep, axis=axis)

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (g * np.exp(a.data - out_keep),)

        return Tensor._make(out, (a,), "logsumexp", backward)

    # -- graph traversal --------------------------------------------------------

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires gradients."""
        if not self.requires_grad:
            raise NumericError("backward() called on a tensor without a gradient path")
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward() without a seed needs a scalar", 1, self.shape)
            grad = np.ones_like(self.data)

        order = _topological_order(self)
        pending = {id(self): np.asarray(grad, dtype=self.dtype)}

        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise NumericError(
                        f"Non-finite gradient produced by backward of '{node._op}'",
                        operation=node._op,
                    )
                pg = np.asarray(pg, dtype=parent.dtype)
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def _topological_order(root: Tensor) -> List[Tensor]:
    """Parents-before-children ordering of the gradient graph below ``root``."""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
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


class Parameter(Tensor):
    """Trainable leaf tensor with a gradient accumulator and a name."""

    def __init__(self, data: ArrayLike, name: str = "", dtype: Optional[np.dtype] = np.float32):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(tensors)
    sizes = [t.shape[axis] for t in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts))
        )

    return Tensor._make(
        np.concatenate([t.data for t in parts], axis=axis), parts, "concat", backward
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(tensors)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return Tensor._make(np.stack([t.data for t in parts], axis=axis), parts, "stack", backward)


def where(condition: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    cond = np.asarray(condition, dtype=bool)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        ga = unbroadcast(np.where(cond, g, 0.0), a.shape)
        return ga, unbroadcast(np.where(cond, 0.0, g), b.shape)

    return Tensor._make(np.where(cond, a.data, b.data), (a, b), "where", backward)
