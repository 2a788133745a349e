"""Reverse-mode autodiff tensor.

A ``Tensor`` wraps a float64 numpy array and records the operation that
produced it. Every backward rule is written in terms of ``Tensor``
operations, so running a backward pass with ``create_graph=True`` yields
gradients that are themselves differentiable. Rules that are only valid to
first order are flagged and refuse to take part in a second-order pass.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def enable_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = True
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class GraphError(RuntimeError):
    """Raised for malformed graphs or unsupported differentiation requests."""


class NonFiniteError(FloatingPointError):
    """Raised by the NaN check hook when a value or gradient is not finite."""


_CHECK_FINITE = False


def set_finite_check(enabled: bool) -> None:
    """Toggle the NaN/inf check run after every forward op and backward pass."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "double_ok", "name")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.op = "leaf"
        self.double_ok = True
        self.name = name

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr if arr.dtype == np.float64 else arr.astype(np.float64)
        t.grad = None
        t.requires_grad = False
        t.parents = ()
        t.backward_fn = None
        t.op = "const"
        t.double_ok = True
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.mul(self, F.reciprocal(other) if isinstance(other, Tensor) else 1.0 / other)

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __pow__(self, exponent: float):
        from . import functional as F
        return F.power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[Tensor], Sequence[Tensor | None]],
    op: str,
    double_ok: bool = True,
) -> Tensor:
    """Create an op output, recording the graph edge only when needed."""
    out = Tensor._wrap(data)
    out.op = op
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite output from op '{op}'")
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.double_ok = double_ok
    return out


def _topo_order(roots: Iterable[Tensor]) -> list[Tensor]:
    """Reverse topological order (outputs first) with cycle detection."""
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    for root in roots:
        if id(root) in state:
            continue
        stack = [(root, iter(root.parents))]
        state[id(root)] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                state[id(node)] = 2
                order.append(node)
                continue
            if not nxt.requires_grad:
                continue
            s = state.get(id(nxt))
            if s == 1:
                raise GraphError("cycle detected in computation graph")
            if s is None:
                state[id(nxt)] = 1
                stack.append((nxt, iter(nxt.parents)))
    order.reverse()
    return order


def _propagate(
    root: Tensor,
    seed: Tensor,
    create_graph: bool,
    restrict: set[int] | None = None,
    stop: frozenset[int] = frozenset(),
) -> dict[int, Tensor]:
    order = _topo_order([root])
    grads: dict[int, Tensor] = {id(root): seed}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for node in order:
            g = grads.get(id(node))
            if node.backward_fn is None or g is None:
                continue
            if restrict is not None and (id(node) not in restrict or id(node) in stop):
                continue
            if create_graph and not node.double_ok:
                raise GraphError(f"op '{node.op}' does not support second-order differentiation")
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if restrict is not None and id(p) not in restrict:
                    continue
                if pg.shape != p.shape:
                    raise GraphError(f"gradient shape {pg.shape} != {p.shape} in op '{node.op}'")
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    return grads


def backward(loss: Tensor, create_graph: bool = False) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf."""
    if loss.size != 1:
        raise GraphError("backward requires a scalar loss")
    if not loss.requires_grad:
        return
    seed = Tensor._wrap(np.ones_like(loss.data))
    grads = _propagate(loss, seed, create_graph)
    leaves = [n for n in _topo_order([loss]) if n.backward_fn is None]
    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            continue
        if _CHECK_FINITE and not np.all(np.isfinite(g.data)):
            raise NonFiniteError(f"non-finite gradient for leaf {leaf.name or leaf.shape}")
        leaf.grad = g.data.copy() if leaf.grad is None else leaf.grad + g.data


def grad(output: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradient of a scalar ``output`` with respect to ``inputs`` as Tensors.

    Only the sub-graph lying between ``inputs`` and ``output`` is traversed.
    With ``create_graph=True`` the returned tensors are part of the graph and
    can themselves be differentiated; every op on the traversed path must then
    support second-order differentiation, otherwise ``GraphError`` names it.
    """
    if output.size != 1:
        raise GraphError("grad requires a scalar output")
    order = _topo_order([output])
    targets = {id(t) for t in inputs}
    # nodes on a path from an input to the output
    reaches: set[int] = set()
    for node in reversed(order):
        if id(node) in targets or any(id(p) in reaches for p in node.parents):
            reaches.add(id(node))
    seed = Tensor._wrap(np.ones_like(output.data))
    grads = _propagate(output, seed, create_graph, restrict=reaches, stop=frozenset(targets))
    result = []
    for t in inputs:
        g = grads.get(id(t))
        result.append(g if g is not None else Tensor._wrap(np.zeros_like(t.data)))
    return result
