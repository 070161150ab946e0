"""Dense tensors and a tape that records operations for reverse-mode AD.

Every differentiable operation in :mod:`hsbit.numerics.ops` appends a
:class:`Node` to the active :class:`Graph` when at least one of its inputs
requires a gradient. :func:`backward` then walks the tape once, newest node
first, and accumulates gradients into ``Tensor.grad``.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import UsageError

DTYPE = np.float32


class Tensor:
    """An n-dimensional float array with an optional gradient slot.

    Data is stored as float32 unless a float64 array is passed explicitly;
    the gradient checker relies on that to evaluate ops in double precision.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != np.float64:
            arr = arr.astype(DTYPE, copy=False)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the ops module owns the actual implementations
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.mul(other, -1.0))

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def sum(self):
        from . import ops
        return ops.sum(self)


def _not_scalar(t: Tensor):
    raise UsageError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(eq=False)
class Node:
    """One recorded operation: how to push an output gradient to its inputs."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass(eq=False)
class Graph:
    """Operation tape in creation order."""

    nodes: list[Node] = field(default_factory=list)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


_state = threading.local()


def current_graph() -> Graph | None:
    return getattr(_state, "graph", None)


@contextmanager
def recording(graph: Graph | None = None):
    """Record differentiable operations onto ``graph`` inside the block."""
    graph = Graph() if graph is None else graph
    previous = current_graph()
    _state.graph = graph
    try:
        yield graph
    finally:
        _state.graph = previous


@contextmanager
def no_grad():
    previous = current_graph()
    _state.graph = None
    try:
        yield
    finally:
        _state.graph = previous


def record(op: str, inputs: Sequence[Tensor], output: Tensor, backward) -> Tensor:
    """Attach ``output`` to the active tape if any input needs a gradient."""
    graph = current_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        graph.record(Node(op, tuple(inputs), output, backward))
    return output


def backward(graph: Graph, loss: Tensor) -> dict[int, np.ndarray]:
    """Populate ``.grad`` on every tensor that requires one and feeds ``loss``.

    Gradients accumulate into existing ``.grad`` arrays, so call
    ``zero_grad`` on parameters between steps. Returns a mapping from
    ``id(tensor)`` to its gradient for the leaves that were reached.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    produced = {id(node.output) for node in graph.nodes}

    for node in reversed(graph.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        for t, g in zip(node.inputs, node.backward(g_out)):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if key not in produced:
                leaves[key] = t

    result = {}
    for key, t in leaves.items():
        g = grads[key].astype(t.data.dtype, copy=False).reshape(t.shape)
        t.grad = g if t.grad is None else t.grad + g
        result[key] = t.grad
    return result
