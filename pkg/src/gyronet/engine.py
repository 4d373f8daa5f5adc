"""A small reverse-mode differentiation tape.

The extension point is :func:`apply`: an operation computes its output with
plain numpy, hands the tape the arrays its backward rule needs, and a
vector-Jacobian function.  Hyperbolic primitives use it to record one fused
node each; the elementary operations at the bottom of this module use it too
and are what the naive (compositional) mode is built from.

Usage::

    with Tape() as tape:
        x = Tensor(np.ones(3), requires_grad=True)
        y = ops.mobius_add(x, x, c=1.0)
        loss = esum(y * y)
    grads = tape.gradient(loss, [x])
"""

from __future__ import annotations

import contextlib
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NonFiniteError, OracleError, TapeError

_state = threading.local()


def debug_checks_enabled() -> bool:
    return os.environ.get("RESNET_DEBUG_CHECKS", "") == "1"


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def current_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def is_naive() -> bool:
    return getattr(_state, "naive", False)


@contextlib.contextmanager
def naive_mode(enabled: bool = True):
    """Route hyperbolic primitives through elementary operations instead of fused nodes."""
    previous = is_naive()
    _state.naive = enabled
    try:
        yield
    finally:
        _state.naive = previous


class Tensor:
    """An immutable float64 array that may be tracked by the active tape."""

    __slots__ = ("data", "requires_grad", "node", "tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, *, _node=None, _tape=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node = _node
        self.tape = _tape

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self):
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor({self.data!r}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    # elementary arithmetic; see the functions further down
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


@dataclass
class Node:
    kind: str
    inputs: tuple  # node ids, None for untracked inputs
    saved: tuple
    output: np.ndarray
    vjp: Callable | None = None
    input_shapes: tuple = field(default=())


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Append-only record of operations; node ids are topologically ordered."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaf_ids: dict[int, int] = {}

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, op_kind: str, inputs: Sequence, saved: tuple, output, vjp=None) -> int:
        """Append a node and return its id."""
        n = len(self.nodes)
        for i in inputs:
            if i is not None and not (isinstance(i, int) and 0 <= i < n):
                raise TapeError(f"input node id {i!r} is not on the tape (length {n})")
        output = np.asarray(output)
        if debug_checks_enabled() and not np.all(np.isfinite(output)):
            raise NonFiniteError(f"non-finite output from {op_kind} node {n}")
        shapes = tuple(None if i is None else self.nodes[i].output.shape for i in inputs)
        self.nodes.append(Node(op_kind, tuple(inputs), tuple(saved), output, vjp, shapes))
        return n

    def watch(self, t: Tensor) -> int:
        """Register a leaf tensor (once) and return its node id."""
        if t.tape is self and t.node is not None:
            return t.node
        key = id(t)
        nid = self._leaf_ids.get(key)
        if nid is None:
            nid = self.record("leaf", (), (), t.data)
            self._leaf_ids[key] = nid
            t.node, t.tape = nid, self
        return nid

    def saved_bytes(self) -> int:
        """Bytes held by saved tensors, counting shared buffers once."""
        seen = {}
        for node in self.nodes:
            for s in node.saved:
                if isinstance(s, np.ndarray):
                    seen[id(s)] = s.nbytes
        return sum(seen.values())

    def backward(self, root, seed=None) -> dict[int, np.ndarray]:
        """Gradients of ``root`` with respect to every node that feeds it."""
        rid = root.node if isinstance(root, Tensor) else root
        if not isinstance(rid, int) or not 0 <= rid < len(self.nodes):
            raise TapeError(f"root {root!r} is not a node of this tape")
        out = self.nodes[rid].output
        if seed is None:
            if out.size != 1:
                raise ContractError(
                    f"backward from a non-scalar root of shape {out.shape} needs a seed"
                )
            seed = np.ones_like(out)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != out.shape:
            raise ContractError(f"seed shape {seed.shape} != root shape {out.shape}")
        grads: dict[int, np.ndarray] = {rid: seed}
        for nid in range(rid, -1, -1):
            g = grads.get(nid)
            node = self.nodes[nid]
            if g is None or node.vjp is None or not node.inputs:
                continue
            in_grads = node.vjp(g, *node.saved)
            for i, gi, shape in zip(node.inputs, in_grads, node.input_shapes):
                if i is None or gi is None:
                    continue
                gi = _unbroadcast(np.asarray(gi, dtype=np.float64), shape)
                if i in grads:
                    grads[i] = grads[i] + gi
                else:
                    grads[i] = gi
        return grads

    def gradient(self, root, wrt: Sequence[Tensor], seed=None) -> list[np.ndarray]:
        """Gradients for specific tensors; untouched ones get zeros."""
        grads = self.backward(root, seed)
        result = []
        for t in wrt:
            nid = t.node if t.tape is self else None
            g = grads.get(nid) if nid is not None else None
            result.append(np.zeros_like(t.data) if g is None else g)
        return result


def _track(tape: Tape, x) -> int | None:
    if not isinstance(x, Tensor):
        return None
    if x.tape is tape and x.node is not None:
        return x.node
    if x.requires_grad:
        return tape.watch(x)
    return None


def apply(kind: str, inputs: Sequence, output: np.ndarray, saved: tuple, vjp) -> Tensor:
    """Wrap ``output`` as a Tensor, recording one node if any input is tracked.

    ``vjp(g, *saved)`` must return one gradient (or ``None``) per input.
    """
    tape = current_tape()
    if tape is not None:
        ids = [_track(tape, x) for x in inputs]
        if any(i is not None for i in ids):
            nid = tape.record(kind, ids, saved, output, vjp)
            return Tensor(output, True, _node=nid, _tape=tape)
    if debug_checks_enabled() and not np.all(np.isfinite(output)):
        raise NonFiniteError(f"non-finite output from {kind}")
    return Tensor(output)


# --------------------------------------------------------------------------
# elementary operations


def add(a, b):
    return apply("add", (a, b), data(a) + data(b), (), lambda g: (g, g))


def sub(a, b):
    return apply("sub", (a, b), data(a) - data(b), (), lambda g: (g, -g))


def mul(a, b):
    ad, bd = data(a), data(b)
    return apply("mul", (a, b), ad * bd, (ad, bd), lambda g, x, y: (g * y, g * x))


def div(a, b):
    ad, bd = data(a), data(b)
    out = ad / bd
    return apply("div", (a, b), out, (bd, out), lambda g, y, o: (g / y, -g * o / y))


def neg(a):
    return apply("neg", (a,), -data(a), (), lambda g: (-g,))


def esum(a, axis=None, keepdims=False):
    ad = data(a)
    out = np.sum(ad, axis=axis, keepdims=keepdims)
    shape = ad.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return apply("sum", (a,), out, (), vjp)


def mean(a, axis=None, keepdims=False):
    ad = data(a)
    count = ad.size if axis is None else np.prod([ad.shape[i] for i in np.atleast_1d(axis)])
    return esum(a, axis, keepdims) * (1.0 / count)


def _unary(kind, fn, deriv_from):
    def op(a):
        ad = data(a)
        out = fn(ad)
        return apply(kind, (a,), out, (ad, out), lambda g, x, y: (g * deriv_from(x, y),))

    op.__name__ = kind
    return op


sqrt = _unary("sqrt", np.sqrt, lambda x, y: 0.5 / y)
exp = _unary("exp", np.exp, lambda x, y: y)
log = _unary("log", np.log, lambda x, y: 1.0 / x)
tanh = _unary("tanh", np.tanh, lambda x, y: 1.0 - y * y)
arctanh = _unary("arctanh", np.arctanh, lambda x, y: 1.0 / (1.0 - x * x))
sinh = _unary("sinh", np.sinh, lambda x, y: np.cosh(x))
cosh = _unary("cosh", np.cosh, lambda x, y: np.sinh(x))
arcsinh = _unary("arcsinh", np.arcsinh, lambda x, y: 1.0 / np.sqrt(1.0 + x * x))
relu = _unary("relu", lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64))


def square(a):
    ad = data(a)
    return apply("square", (a,), ad * ad, (ad,), lambda g, x: (2.0 * g * x,))


def matmul(a, b):
    ad, bd = data(a), data(b)

    def vjp(g, x, y):
        gx = g @ y.T
        gy = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gy

    if bd.ndim != 2:
        raise ContractError("matmul expects a 2-D right operand")
    return apply("matmul", (a, b), ad @ bd, (ad, bd), vjp)


def where(mask, a, b):
    """Select elementwise; ``mask`` is a constant boolean array."""
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, data(a), data(b))
    return apply(
        "where", (a, b), out, (mask,), lambda g, m: (np.where(m, g, 0.0), np.where(m, 0.0, g))
    )


def reshape(a, shape):
    ad = data(a)
    original = ad.shape
    return apply("reshape", (a,), ad.reshape(shape), (), lambda g: (g.reshape(original),))


def getitem(a, index):
    ad = data(a)

    def vjp(g):
        full = np.zeros(ad.shape)
        np.add.at(full, index, g)
        return (full,)

    return apply("getitem", (a,), ad[index], (), vjp)


def concat(parts: Sequence, axis=-1):
    arrays = [data(p) for p in parts]
    sizes = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return apply("concat", tuple(parts), np.concatenate(arrays, axis=axis), (), vjp)


def dot(a, b):
    """Inner product over the last axis, keeping it as a singleton."""
    return esum(a * b, axis=-1, keepdims=True)


def norm(a):
    return sqrt(dot(a, a))


# --------------------------------------------------------------------------
# finite differences


def finite_difference_jacobian(f: Callable, x, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x``, shape ``(out.size, x.size)``."""
    if not h > 0:
        raise ContractError("step h must be positive")
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = h
        e = e.reshape(x.shape)
        hi = np.asarray(f(x + e), dtype=np.float64)
        lo = np.asarray(f(x - e), dtype=np.float64)
        if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
            raise OracleError(f"non-finite output near coordinate {j}", point=x.copy())
        cols.append(((hi - lo) / (2.0 * h)).ravel())
    return np.stack(cols, axis=1)
