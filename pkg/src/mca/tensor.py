"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a row-major numpy array plus an optional gradient buffer.
Primitives record themselves onto the innermost active ``Graph`` (a linear
tape) whenever at least one operand requires a gradient; with no active graph
they run eagerly with no bookkeeping, which is the inference path.

``backward`` replays the tape once in reverse, accumulating gradients
additively across multiple uses of a tensor.  Tensors with
``requires_grad=False`` never receive a gradient buffer.

Two float widths are supported as a global session setting
(``set_default_dtype``): float32 for training, float64 for the
finite-difference gradient checks.  Widths are never mixed within one graph.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DegenerateInputError, ShapeError

_DTYPE = np.float32


def set_default_dtype(name: str) -> None:
    """Select the session float width: 'float32' or 'float64'."""
    global _DTYPE
    if name not in ("float32", "float64"):
        raise ContractError(f"unsupported dtype {name!r}")
    _DTYPE = np.float32 if name == "float32" else np.float64


def get_default_dtype() -> type:
    return _DTYPE


class Tensor:
    """Multi-dimensional float array with optional gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant copy sharing no graph history."""
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars and arrays wrap as constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Graph:
    """Linear tape of executed primitives; context manager activates it."""

    def __init__(self):
        self._tape: list[_Node] = []
        self._produced: set[int] = set()
        self._consumed = False

    def __enter__(self):
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _GRAPH_STACK.pop()
        assert popped is self, "graph stack corrupted"
        return False

    def _record(self, node: _Node) -> None:
        self._tape.append(node)
        self._produced.add(id(node.out))


_GRAPH_STACK: list[Graph] = []


def _active_graph() -> Optional[Graph]:
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DTYPE), requires_grad=False)


def _make(out_data, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Create the op output, recording onto the active graph when needed."""
    g = _active_graph()
    needs = g is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    # Tensor.__init__ casts; avoid a second copy by assigning directly.
    out.data = out_data
    if needs:
        g._record(_Node(out, tuple(inputs), backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(graph: Graph, loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if id(loss) not in graph._produced:
        raise ContractError("loss was not produced inside this graph")
    if graph._consumed:
        raise ContractError("backward already ran on this graph")
    graph._consumed = True
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph._tape):
        gout = node.out.grad
        if gout is None:
            continue
        gins = node.backward_fn(gout)
        for t, gin in zip(node.inputs, gins):
            if gin is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = gin.astype(t.data.dtype, copy=True)
            else:
                t.grad = t.grad + gin


# ---------------------------------------------------------------------------
# elementwise / broadcast arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _make(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data - b.data

    def bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = _wrap(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape))

    return _make(out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g / bd, a.shape),
            _unbroadcast(-g * ad / (bd * bd), b.shape),
        )

    return _make(out, (a, b), bw)


def add_const(a: Tensor, const: np.ndarray) -> Tensor:
    """Add a non-differentiable constant array (may contain -inf mask slots)."""
    a = _wrap(a)
    if np.shape(const) != a.shape:
        raise ShapeError(f"add_const shape {np.shape(const)} vs {a.shape}")
    out = a.data + const
    return _make(out, (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# linear algebra / shape
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim == b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    elif a.ndim == b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"batched matmul shapes disagree: {a.shape} @ {b.shape}")
    else:
        raise ShapeError(f"matmul supports 2-D or 3-D pairs, got {a.shape} @ {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.swapaxes(-1, -2), ad.swapaxes(-1, -2) @ g)

    return _make(out, (a, b), bw)


def transpose_last(a) -> Tensor:
    a = _wrap(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose_last needs ndim >= 2, got {a.shape}")
    out = a.data.swapaxes(-1, -2)
    return _make(out, (a,), lambda g: (g.swapaxes(-1, -2),))


def permute(a, axes) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)
    return _make(out, (a,), lambda g: (g.transpose(inv),))


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    shape = tuple(shape)
    orig = a.shape
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(orig),))


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack n vectors [d] into [n, d]."""
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack_rows of empty sequence")
    for t in tensors:
        if t.ndim != 1 or t.shape != tensors[0].shape:
            raise ShapeError("stack_rows requires equal-length 1-D tensors")
    out = np.stack([t.data for t in tensors], axis=0)

    def bw(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _make(out, tuple(tensors), bw)


def diag_part(a) -> Tensor:
    a = _wrap(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"diag_part needs a square matrix, got {a.shape}")
    out = np.ascontiguousarray(np.diagonal(a.data))
    n = a.shape[0]

    def bw(g):
        full = np.zeros((n, n), dtype=g.dtype)
        np.fill_diagonal(full, g)
        return (full,)

    return _make(out, (a,), bw)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(a) -> Tensor:
    a = _wrap(a)
    out = a.data.sum()
    shape = a.shape

    def bw(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (a,), bw)


def mean_all(a) -> Tensor:
    a = _wrap(a)
    out = a.data.mean()
    shape, n = a.shape, a.data.size

    def bw(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make(np.asarray(out), (a,), bw)


def mean_axis0(a) -> Tensor:
    """Mean over the leading axis: [n, ...] -> [...]."""
    a = _wrap(a)
    if a.ndim < 1 or a.shape[0] < 1:
        raise ShapeError(f"mean_axis0 needs a leading axis, got {a.shape}")
    out = a.data.mean(axis=0)
    n, shape = a.shape[0], a.shape

    def bw(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make(out, (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def gelu(a) -> Tensor:
    a = _wrap(a)
    xd = a.data
    out = kernels.gelu_forward(xd)
    return _make(out, (a,), lambda g: (kernels.gelu_backward(xd, g),))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out = kernels.sigmoid_forward(a.data)
    return _make(out, (a,), lambda g: (kernels.sigmoid_backward(out, g),))


def log(a) -> Tensor:
    a = _wrap(a)
    out = np.log(a.data)
    ad = a.data
    return _make(out, (a,), lambda g: (g / ad,))


def clamp(a, lo: float, hi: float) -> Tensor:
    a = _wrap(a)
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        return (g * mask,)

    return _make(out, (a,), bw)


def softmax_rows(a) -> Tensor:
    """Row softmax of a 2-D tensor."""
    a = _wrap(a)
    if a.ndim != 2:
        raise ShapeError(f"softmax_rows needs 2-D input, got {a.shape}")
    s = kernels.softmax_rows_forward(a.data)
    return _make(s, (a,), lambda g: (kernels.softmax_rows_backward(s, g),))


def logsumexp(a) -> Tensor:
    """log(sum(exp(x))) of a 1-D tensor, max-shifted; returns a scalar."""
    a = _wrap(a)
    if a.ndim != 1 or a.shape[0] < 1:
        raise ShapeError(f"logsumexp needs a nonempty 1-D tensor, got {a.shape}")
    lse = kernels.logsumexp_rows_forward(a.data[None, :])[0]
    ad = a.data

    def bw(g):
        soft = np.exp(ad - lse)
        return (g * soft,)

    return _make(np.asarray(lse), (a,), bw)


def logsumexp_rows(a) -> Tensor:
    """Row-wise logsumexp of a 2-D tensor -> [rows]."""
    a = _wrap(a)
    if a.ndim != 2 or a.shape[1] < 1:
        raise ShapeError(f"logsumexp_rows needs nonempty 2-D rows, got {a.shape}")
    lse = kernels.logsumexp_rows_forward(a.data)
    ad = a.data

    def bw(g):
        soft = np.exp(ad - lse[:, None])
        return (g[:, None] * soft,)

    return _make(lse, (a,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then affine scale/shift."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} vs width {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * rstd
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def bw(g):
        dxhat = g * gd
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = rstd * (dxhat - m1 - xhat * m2)
        axes = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        return (dx, dgamma, dbeta)

    return _make(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------------------
# similarity
# ---------------------------------------------------------------------------

def cosine_similarity(u, v) -> Tensor:
    """cos(u, v) for 1-D vectors; errors on a zero-norm argument."""
    u, v = _wrap(u), _wrap(v)
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine_similarity needs equal 1-D shapes, got {u.shape}/{v.shape}")
    ud, vd = u.data, v.data
    nu = float(np.linalg.norm(ud))
    nv = float(np.linalg.norm(vd))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine_similarity of a zero-norm vector")
    rho = float(ud @ vd) / (nu * nv)

    def bw(g):
        du = g * (vd / (nu * nv) - rho * ud / (nu * nu))
        dv = g * (ud / (nu * nv) - rho * vd / (nv * nv))
        return (du, dv)

    return _make(np.asarray(rho, dtype=ud.dtype), (u, v), bw)


def normalize_rows(x) -> Tensor:
    """Scale each row of [n, d] to unit Euclidean norm; zero rows are errors."""
    x = _wrap(x)
    if x.ndim != 2:
        raise ShapeError(f"normalize_rows needs 2-D input, got {x.shape}")
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("normalize_rows: zero-norm row")
    y = x.data / norms

    def bw(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return ((g - y * dot) / norms,)

    return _make(y, (x,), bw)


# ---------------------------------------------------------------------------
# spatial
# ---------------------------------------------------------------------------

def nearest_upsample(a, factor: int) -> Tensor:
    """Repeat each entry of [h, w] into a factor x factor block."""
    a = _wrap(a)
    if a.ndim != 2:
        raise ShapeError(f"nearest_upsample needs 2-D input, got {a.shape}")
    if factor < 1:
        raise ContractError(f"upsample factor must be >= 1, got {factor}")
    out = np.repeat(np.repeat(a.data, factor, axis=0), factor, axis=1)
    h, w = a.shape

    def bw(g):
        return (g.reshape(h, factor, w, factor).sum(axis=(1, 3)),)

    return _make(out, (a,), bw)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central finite-difference grads.

    ``f`` must be a pure scalar-valued function of ``x``; the error per
    coordinate is |analytic - central| / max(1, |central|).
    """
    if not x.requires_grad:
        raise ContractError("finite_diff_check requires x.requires_grad")
    x.grad = None
    with Graph() as g:
        loss = f(x)
        backward(g, loss)
    analytic = (
        x.grad.reshape(-1).copy()
        if x.grad is not None
        else np.zeros(x.data.size, dtype=x.data.dtype)
    )
    x.grad = None

    x.data = np.ascontiguousarray(x.data)  # reshape below must be a view
    flat = x.data.reshape(-1)
    max_err = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x).item()
        flat[i] = orig - h
        fm = f(x).item()
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ContractError(f"non-finite evaluation at perturbed coordinate {i}")
        central = (fp - fm) / (2.0 * h)
        err = abs(float(analytic[i]) - central) / max(1.0, abs(central))
        if err > max_err:
            max_err = err
    return max_err
