"""Dense float64 matrices with a first-order reverse-mode tape.

Every value is a 2-D ``float64`` array.  Operations on tensors that require
gradients are appended to the tape their inputs belong to; ``Tape.gradient``
walks the recorded nodes in reverse order and accumulates adjoints.

    with Tape() as tape:
        x = tape.leaf(np.ones((2, 3)))
        y = ops.sum(ops.relu(x))
    (gx,) = tape.gradient(y, [x])

Only first derivatives are supported.  Code that needs the gradient of a
gradient writes the inner gradient out as ordinary primal operations.
"""

from __future__ import annotations

import threading
import weakref
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, NumericError, ValidationError

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _as_2d(data):
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D, got ndim={arr.ndim}")
    return arr


class Tensor:
    """A dense matrix, optionally tracked by a tape.

    Creating a tensor with ``requires_grad=True`` registers it as a leaf of
    the innermost active tape.
    """

    __slots__ = ("data", "requires_grad", "_tape", "node")

    def __init__(self, data, requires_grad=False):
        self.data = _as_2d(data)
        self.requires_grad = False
        self.tape = None
        self.node = -1
        if requires_grad:
            tape = active_tape()
            if tape is None:
                raise ValidationError("requires_grad tensors must be created inside a Tape")
            tape.watch(self)

    @property
    def tape(self):
        return None if self._tape is None else self._tape()

    @tape.setter
    def tape(self, tape):
        # weak, so a finished tape and its intermediates are freed by refcount
        self._tape = None if tape is None else weakref.ref(tape)

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self):
        return Tensor(self.data)

    @property
    def T(self):
        return transpose(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _lift(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class Tape:
    """Ordered record of differentiable operations.

    Node ids are assigned in recording order, which is a valid topological
    order, so the backward sweep is a plain reverse loop.
    """

    def __init__(self):
        self._parents: list[tuple[Tensor, ...]] = []
        self._vjps: list[Callable | None] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        stack.pop(len(stack) - 1 - stack[::-1].index(self))
        return False

    def __len__(self):
        return len(self._vjps)

    def watch(self, tensor: Tensor) -> Tensor:
        if tensor.requires_grad and tensor.tape is not self:
            raise ValidationError("tensor is already tracked by another tape")
        if tensor.tape is self:
            return tensor
        tensor.requires_grad = True
        tensor.tape = self
        tensor.node = self._append((), None)
        return tensor

    def leaf(self, data) -> Tensor:
        return self.watch(Tensor(np.array(data, dtype=np.float64)))

    def _append(self, parents, vjp):
        self._parents.append(parents)
        self._vjps.append(vjp)
        return len(self._vjps) - 1

    def gradient(self, targets, sources: Sequence[Tensor], seeds=None) -> list[np.ndarray]:
        """Adjoints of ``targets`` with respect to ``sources``.

        A single 1x1 target is seeded with 1.  Several targets (or non-scalar
        ones) need explicit ``seeds`` of matching shapes; the result is then
        the vector-Jacobian product summed over targets.
        """
        if isinstance(targets, Tensor):
            targets = [targets]
            if seeds is not None and not isinstance(seeds, (list, tuple)):
                seeds = [seeds]
        if seeds is None:
            if any(t.data.size != 1 for t in targets):
                raise DimensionError("non-scalar targets need explicit seeds")
            seeds = [np.ones((1, 1)) for _ in targets]
        adj: dict[int, np.ndarray] = {}
        start = -1
        for t, s in zip(targets, seeds):
            s = _as_2d(s)
            if s.shape != t.shape:
                raise DimensionError(f"seed shape {s.shape} != target shape {t.shape}")
            if not t.requires_grad:
                continue
            if t.tape is not self:
                raise ValidationError("target was recorded on a different tape")
            adj[t.node] = adj[t.node] + s if t.node in adj else s.copy()
            start = max(start, t.node)
        wanted = {src.node for src in sources if src.requires_grad and src.tape is self}
        for node in range(start, -1, -1):
            g = adj.get(node)
            if g is None:
                continue
            vjp = self._vjps[node]
            if vjp is None:
                continue
            if node not in wanted:
                del adj[node]
            parent_grads = vjp(g)
            for parent, pg in zip(self._parents[node], parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                k = parent.node
                if k in adj:
                    adj[k] = adj[k] + pg
                else:
                    adj[k] = pg
        out = []
        for src in sources:
            g = adj.get(src.node) if (src.requires_grad and src.tape is self) else None
            out.append(np.zeros(src.shape) if g is None else np.asarray(g, dtype=np.float64))
        return out


def _record(data, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.tape = None
    out.node = -1
    tape = None
    for t in inputs:
        if t.requires_grad:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise ValidationError("operands belong to different tapes")
    if tape is not None:
        out.requires_grad = True
        out.tape = tape
        out.node = tape._append(inputs, vjp)
    return out


# --------------------------------------------------------------------------
# primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _record(ad @ bd, (a, b), vjp)


def _broadcast_shapes(op, a, b):
    if a.shape == b.shape:
        return None
    if b.shape == (1, a.cols):
        return "b"
    if a.shape == (1, b.cols):
        return "a"
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _unbroadcast(g, which, side):
    if which == side:
        return g.sum(axis=0, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    which = _broadcast_shapes("add", a, b)

    def vjp(g):
        return (_unbroadcast(g, which, "a") if a.requires_grad else None,
                _unbroadcast(g, which, "b") if b.requires_grad else None)

    return _record(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    which = _broadcast_shapes("sub", a, b)

    def vjp(g):
        return (_unbroadcast(g, which, "a") if a.requires_grad else None,
                -_unbroadcast(g, which, "b") if b.requires_grad else None)

    return _record(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    which = _broadcast_shapes("mul", a, b)
    ad, bd = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g * bd, which, "a") if a.requires_grad else None,
                _unbroadcast(g * ad, which, "b") if b.requires_grad else None)

    return _record(ad * bd, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _record(out, (a,), lambda g: (g * (out > 0),))


def sigmoid(a: Tensor) -> Tensor:
    # split on sign so exp never overflows
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record(s, (a,), lambda g: (g * s * (1.0 - s),))


def transpose(a: Tensor) -> Tensor:
    return _record(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _record(np.array([[a.data.sum()]]), (a,),
                   lambda g: (np.full(shape, g[0, 0]),))


def colsum(a: Tensor) -> Tensor:
    rows = a.rows
    return _record(a.data.sum(axis=0, keepdims=True), (a,),
                   lambda g: (np.repeat(g, rows, axis=0),))


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _record(a.data[idx], (a,), vjp)


def put_rows(a: Tensor, idx, n: int) -> Tensor:
    """Scatter the rows of ``a`` into an ``n``-row zero matrix at ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) != a.rows:
        raise DimensionError(f"put_rows: {len(idx)} indices for {a.rows} rows")
    if len(np.unique(idx)) != len(idx):
        raise ValidationError("put_rows: indices must be distinct")
    out = np.zeros((n, a.cols))
    out[idx] = a.data
    return _record(out, (a,), lambda g: (g[idx],))


def softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _record(s, (a,), vjp)


def onehot(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under row-wise softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise ValidationError(f"labels must lie in [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), labels])) if n else 0.0

    def vjp(g):
        s = np.exp(z - lse[:, None])
        s[np.arange(n), labels] -= 1.0
        return (s * (g[0, 0] / max(n, 1)),)

    return _record(np.array([[loss]]), (logits,), vjp)


def spmm(matrix, dense: Tensor) -> Tensor:
    """Constant sparse (or dense ndarray) matrix times a tensor."""
    if matrix.shape[1] != dense.rows:
        raise DimensionError(f"spmm: {matrix.shape} @ {dense.shape}")
    mt = matrix.T
    if sp.issparse(matrix):
        out = np.asarray(matrix @ dense.data)
        return _record(out, (dense,), lambda g: (np.asarray(mt @ g),))
    return _record(matrix @ dense.data, (dense,), lambda g: (mt @ g,))


def pair_sum(u: Tensor, v: Tensor) -> Tensor:
    """Row ``i*m + j`` of the result is ``u[i] + v[j]``."""
    if u.cols != v.cols:
        raise DimensionError(f"pair_sum: {u.shape} vs {v.shape}")
    n, m, h = u.rows, v.rows, u.cols
    out = (u.data[:, None, :] + v.data[None, :, :]).reshape(n * m, h)

    def vjp(g):
        g3 = g.reshape(n, m, h)
        return (g3.sum(axis=1) if u.requires_grad else None,
                g3.sum(axis=0) if v.requires_grad else None)

    return _record(out, (u, v), vjp)


def sym_normalize(a: Tensor, self_loops=True) -> Tensor:
    """D^-1/2 (A + I) D^-1/2 for a dense square tensor; zero-degree rows stay zero."""
    if a.rows != a.cols:
        raise DimensionError(f"sym_normalize needs a square matrix, got {a.shape}")
    b = a.data + np.eye(a.rows) if self_loops else a.data
    deg = b.sum(axis=1)
    s = np.zeros_like(deg)
    pos = deg > 0
    s[pos] = deg[pos] ** -0.5
    out = s[:, None] * b * s[None, :]

    def vjp(g):
        gb = g * b
        ds = gb @ s + gb.T @ s
        return (g * np.outer(s, s) + (ds * (-0.5 * s ** 3))[:, None],)

    return _record(out, (a,), vjp)


def standardize_cols(a: Tensor, eps=1e-5) -> Tensor:
    """(a - column mean) / sqrt(column variance + eps), batch-norm style."""
    x = a.data
    n = x.shape[0]
    mu = x.mean(axis=0, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=0, keepdims=True) + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=0, keepdims=True)
        gy = (g * y).mean(axis=0, keepdims=True)
        return (inv * (g - gm - y * gy),)

    if n == 0:
        return _record(x.copy(), (a,), lambda g: (g,))
    return _record(y, (a,), vjp)


_NORM_EPS = 1e-12


def column_cosine(a: Tensor, b) -> Tensor:
    """Cosine similarity of matching columns; ``b`` is treated as a constant.

    Columns where exactly one side has norm below 1e-12 get cosine 0; columns
    where both do get cosine 1.  Neither case passes gradient.
    """
    bd = b.data if isinstance(b, Tensor) else _as_2d(b)
    if a.shape != bd.shape:
        raise DimensionError(f"column_cosine: {a.shape} vs {bd.shape}")
    ad = a.data
    na = np.sqrt((ad * ad).sum(axis=0))
    nb = np.sqrt((bd * bd).sum(axis=0))
    dot = (ad * bd).sum(axis=0)
    za, zb = na < _NORM_EPS, nb < _NORM_EPS
    ok = ~(za | zb)
    cos = np.where(za & zb, 1.0, 0.0)
    cos[ok] = dot[ok] / (na[ok] * nb[ok])

    def vjp(g):
        ga = np.zeros_like(ad)
        w = g[0, ok]
        ga[:, ok] = w * (bd[:, ok] / (na[ok] * nb[ok]) - cos[ok] * ad[:, ok] / na[ok] ** 2)
        return (ga,)

    return _record(cos[None, :], (a,), vjp)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "sigmoid": sigmoid,
    "scale": scale,
}


def elementwise(op: str, *args):
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValidationError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Worst entrywise |analytic - central difference| / max(1, |analytic|)."""
    x0 = _as_2d(x).copy()
    with Tape() as tape:
        xv = tape.leaf(x0)
        y = f(xv)
    (analytic,) = tape.gradient(y, [xv])
    if not np.all(np.isfinite(analytic)):
        raise NumericError("analytic gradient is not finite")
    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(Tensor(x0)).item()
        flat[i] = old - h
        fm = f(Tensor(x0)).item()
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"function is not finite near entry {i}")
        numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
