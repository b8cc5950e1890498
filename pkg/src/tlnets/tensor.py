"""Tensor value type and the reverse-mode tape it records onto."""
import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

__all__ = ["Tensor", "Graph", "TapeError", "as_tensor", "current_graph", "no_grad"]

_state = threading.local()


class TapeError(RuntimeError):
    """Misuse of a graph: a consumed tape, a non-scalar loss, etc."""


def _stack():
    if not hasattr(_state, "graphs"):
        _state.graphs = []
        _state.paused = 0
    return _state.graphs


def current_graph():
    """The innermost active graph on this thread, or None."""
    graphs = _stack()
    if not graphs or _state.paused:
        return None
    return graphs[-1]


class no_grad:
    """Context manager that stops recording on the current thread."""

    def __enter__(self):
        _stack()
        _state.paused += 1
        return self

    def __exit__(self, *exc):
        _state.paused -= 1
        return False


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


class Tensor:
    """Dense float64 array with optional gradient participation.

    Spectra produced by :func:`tlnets.ops.rfft` reuse this type with complex128
    storage; their gradients follow the ``dL/dRe + 1j * dL/dIm`` convention.
    """

    __array_priority__ = 100
    __slots__ = ("data", "requires_grad", "grad", "node_id", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if np.iscomplexobj(arr):
            arr = arr.astype(np.complex128, copy=False)
        else:
            arr = arr.astype(np.float64, copy=False)
        if arr.ndim > 4:
            raise ValueError(f"tensors of rank > 4 are not supported (got rank {arr.ndim})")
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = None
        self.name = name

    @classmethod
    def _wrap(cls, arr, requires_grad=False):
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = requires_grad
        out.grad = None
        out.node_id = None
        out.name = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_complex(self):
        return np.iscomplexobj(self.data)

    @property
    def real(self):
        return self.data.real

    @property
    def imag(self):
        return self.data.imag

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor._wrap(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self):
        from . import ops
        return ops.mean(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    inputs: List[Tensor]
    outputs: List[Tensor]
    backward: Callable
    input_ids: List[Optional[int]] = field(default_factory=list)


class Graph:
    """Append-only tape of differentiable operations.

    Use as a context manager; every op whose inputs require gradients is
    appended while the graph is active. ``backward`` walks the tape once in
    reverse insertion order, after which the graph is spent.
    """

    def __init__(self, debug=False):
        self.nodes: List[Node] = []
        self.debug = debug
        self.consumed = False
        self.gradients = {}

    def __enter__(self):
        if self.consumed:
            raise TapeError("graph has already been consumed by backward()")
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        graphs = _stack()
        if graphs and graphs[-1] is self:
            graphs.pop()
        return False

    def record(self, op, inputs: Sequence[Tensor], outputs: Sequence[Tensor], backward):
        if self.consumed:
            raise TapeError("cannot record onto a consumed graph")
        if self.debug:
            for out in outputs:
                _check_finite(out.data, f"output of {op}")
        node_id = len(self.nodes)
        node = Node(op, list(inputs), list(outputs), backward,
                    [t.node_id if t.node_id is not None else None for t in inputs])
        for out in outputs:
            out.node_id = node_id
            out.requires_grad = True
        self.nodes.append(node)
        return node_id

    def backward(self, loss: Tensor):
        """Gradients of the scalar ``loss`` for every leaf that requires them.

        Returns a dict keyed by leaf tensor; each leaf's ``grad`` attribute is
        also set.
        """
        if self.consumed:
            raise TapeError("graph already consumed; record a new forward pass")
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        self.consumed = True
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            out_grads = [grads.pop(id(t), None) for t in node.outputs]
            if all(g is None for g in out_grads):
                continue
            out_grads = [np.zeros_like(t.data) if g is None else g
                         for g, t in zip(out_grads, node.outputs)]
            in_grads = node.backward(out_grads)
            for tensor, g in zip(node.inputs, in_grads):
                if g is None or not tensor.requires_grad:
                    continue
                if tensor.node_id is None:
                    leaves[id(tensor)] = tensor
                key = id(tensor)
                grads[key] = g if key not in grads else grads[key] + g
        result = {}
        for key, tensor in leaves.items():
            g = grads.get(key)
            tensor.grad = g
            result[tensor] = g
        self.gradients = result
        self.nodes = []
        return result
