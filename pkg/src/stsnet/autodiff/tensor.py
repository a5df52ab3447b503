"""Dense float64 tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable operation is a
:class:`Function` subclass; applying one records a node (the function
instance, which keeps its inputs and whatever activations its backward
needs) on the output tensor. :class:`ComputeGraph` orders those nodes
topologically and runs the backward pass.
"""

from __future__ import annotations

import contextlib
from typing import Any, Iterator, Sequence

import numpy as np

from ..errors import DimensionError, StateError

MAX_RANK = 4

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (used for inference)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Function:
    """One differentiable operation.

    Subclasses implement ``forward`` on raw arrays and ``backward``, which
    receives the gradient of the loss w.r.t. the output and returns one
    gradient per input (``None`` for inputs that are not differentiable).
    Anything backward needs is stored on ``self`` during forward.
    """

    def __init__(self, inputs: tuple["Tensor", ...]):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        track = _grad_enabled and any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=track, _ctx=fn if track else None)

    @property
    def kind(self) -> str:
        return type(self).__name__


class Tensor:
    """A dense N-dimensional (rank <= 4) array of 64-bit floats."""

    __slots__ = ("data", "grad", "requires_grad", "_ctx", "name")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
        _ctx: Function | None = None,
    ):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._ctx = _ctx
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # arithmetic is defined in functional.py; imported lazily to avoid a cycle
    def __add__(self, other: Any) -> "Tensor":
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Tensor":
        from . import functional as F
        return F.add(self, F.mul(as_tensor(other), -1.0))

    def __rsub__(self, other: Any) -> "Tensor":
        from . import functional as F
        return F.add(F.mul(self, -1.0), other)

    def __neg__(self) -> "Tensor":
        from . import functional as F
        return F.mul(self, -1.0)

    def __mul__(self, other: Any) -> "Tensor":
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Tensor":
        from . import functional as F
        return F.mul(self, 1.0 / float(other))

    def __getitem__(self, index: Any) -> "Tensor":
        from . import functional as F
        return F.index(self, index)

    def sum(self) -> "Tensor":
        from . import functional as F
        return F.sum(self)

    def reshape(self, *shape: Any) -> "Tensor":
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def flatten(self, start: int = 1) -> "Tensor":
        return self.reshape(self.shape[:start] + (-1,))

    def backward(self) -> None:
        ComputeGraph(self).backward()


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class ComputeGraph:
    """The recorded operations reachable from ``root`` in topological order."""

    def __init__(self, root: Tensor):
        if not root.requires_grad:
            raise StateError("no graph recorded for this tensor: run a forward pass on tensors that require grad")
        self.root = root
        self.nodes = self._toposort(root)
        self.order = {id(t): i for i, t in enumerate(self.nodes)}

    @staticmethod
    def _toposort(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.inputs:
                    if parent.requires_grad and id(parent) not in seen:
                        stack.append((parent, False))
        return order

    def backward(self) -> None:
        if self.root.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {self.root.shape}")
        pending: dict[int, np.ndarray] = {id(self.root): np.ones_like(self.root.data)}
        for node in reversed(self.nodes):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node._ctx is None:
                if node.grad is None:
                    node.grad = grad.copy()
                else:
                    node.grad += grad
                continue
            input_grads = node._ctx.backward(grad)
            for parent, g in zip(node._ctx.inputs, input_grads):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.shape:
                    raise DimensionError(
                        f"{node._ctx.kind}.backward produced grad {g.shape} for input {parent.shape}"
                    )
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + g
                else:
                    pending[key] = g


def parameters_finite(tensors: Sequence[Tensor]) -> bool:
    return all(np.isfinite(t.data).all() for t in tensors)
