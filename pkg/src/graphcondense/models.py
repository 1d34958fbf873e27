"""GNN architectures, initialization, supervised training and inner gradients.

``forward`` builds logits from tape operations so the same code serves
training (differentiate w.r.t. parameters) and plain inference.
``inner_param_grads`` writes the cross-entropy parameter gradient of the
SGC/GCN heads out by hand, which lets the matching loss be differentiated
w.r.t. the graph and features with a first-order tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import ndtape as nd
from .errors import CapabilityError, DimensionError, DivergenceError, ValidationError
from .graph import mean_aggregator, normalized_adjacency
from .ndtape import Tape, Tensor
from .optim import make_optimizer

ARCHS = ("SGC", "GCN", "APPNP", "SAGE_mean", "MLP")
_ALIASES = {"sgc": "SGC", "gcn": "GCN", "appnp": "APPNP", "sage": "SAGE_mean",
            "sage_mean": "SAGE_mean", "mlp": "MLP"}


def canonical_arch(name):
    if name in ARCHS:
        return name
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise ValidationError(f"unknown architecture {name!r}") from None


@dataclass
class ModelSpec:
    arch: str = "GCN"
    layers: int = 2
    hidden: int = 256
    k_prop: int = 2
    alpha: float = 0.1
    dropout: float = 0.0
    weight_decay: float = 5e-4

    def __post_init__(self):
        self.arch = canonical_arch(self.arch)
        if self.layers < 1:
            raise ValidationError("layers must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValidationError("dropout must lie in [0, 1)")
        if self.arch in ("SGC", "APPNP") and self.k_prop < 1:
            raise ValidationError("k_prop must be >= 1 for SGC/APPNP")


@dataclass
class ModelParams:
    weights: list
    biases: list
    seed: int | None = None

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)

    @classmethod
    def from_arrays(cls, arrays, seed=None):
        return cls(list(arrays[0::2]), list(arrays[1::2]), seed)


def layer_dims(spec, in_dim, out_dim):
    return [in_dim] + [spec.hidden] * (spec.layers - 1) + [out_dim]


def init_params(spec: ModelSpec, in_dim, out_dim, seed) -> ModelParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    rng = np.random.default_rng(seed)
    dims = layer_dims(spec, in_dim, out_dim)
    ws, bs = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        fan_in = 2 * a if spec.arch == "SAGE_mean" else a
        bound = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_in, b)))
        bs.append(np.zeros((1, b)))
    return ModelParams(ws, bs, seed)


def prepare_adj(spec, adj):
    """The propagation operator an architecture expects from a raw adjacency."""
    if spec.arch == "MLP" or adj is None:
        return None
    if spec.arch == "SAGE_mean":
        return mean_aggregator(adj)
    return normalized_adjacency(adj, add_self_loops=True)


def _const(x):
    return not isinstance(x, Tensor)


def _const_mm(a, b):
    out = a @ b
    if sp.issparse(out):
        # keep sparse-times-sparse products sparse only while they are cheap
        if out.nnz < 0.1 * out.shape[0] * out.shape[1]:
            return out.tocsr()
        return out.toarray()
    return np.asarray(out)


def _mm(a, b):
    """Product of any mix of tensors, dense arrays and sparse matrices."""
    if _const(a) and _const(b):
        out = _const_mm(a, b)
        return Tensor(out.toarray() if sp.issparse(out) else out)
    if _const(a):
        return nd.spmm(a, b)
    if _const(b):
        return nd.matmul(a, Tensor(b.toarray() if sp.issparse(b) else b))
    return nd.matmul(a, b)


def propagate(adj, X, k):
    """adj^k X, staying constant when both operands are."""
    h = X
    for _ in range(k):
        h = _const_mm(adj, h) if (_const(adj) and _const(h)) else _mm(adj, h)
    if sp.issparse(h):
        h = h.toarray()
    return h


def _dropout(h, rate, rng):
    if not rate or rng is None:
        return h
    keep = (rng.random(h.shape) >= rate) / (1.0 - rate)
    return nd.mul(h, Tensor(keep))


def _param_tensors(params):
    return [Tensor(a) for a in params.arrays()]


def _mlp(tensors, h, rate=0.0, rng=None):
    n_layers = len(tensors) // 2
    for l in range(n_layers):
        if l > 0:
            h = _dropout(h, rate, rng)
        h = nd.add(_mm(h, tensors[2 * l]), tensors[2 * l + 1])
        if l < n_layers - 1:
            h = nd.relu(h)
    return h


def _check_inputs(spec, adj, X, tensors):
    n = X.shape[0]
    if adj is not None and spec.arch != "MLP" and adj.shape != (n, n):
        raise DimensionError(f"adjacency {adj.shape} does not match {n} feature rows")
    w0 = tensors[0].shape[0]
    want = 2 * X.shape[1] if spec.arch == "SAGE_mean" else X.shape[1]
    if w0 != want:
        raise DimensionError(f"first weight has {w0} rows, features need {want}")


def forward(spec: ModelSpec, params, adj, X, dropout_rng=None, cache=None) -> Tensor:
    """Logits for every node.

    ``params`` is a ModelParams or a list of tensors [W1, b1, W2, b2, ...].
    ``adj`` must already be prepared for the architecture (see
    ``prepare_adj``).  Dropout is applied only when ``dropout_rng`` is given.
    ``cache`` memoizes products of constant operands across calls.
    """
    tensors = _param_tensors(params) if isinstance(params, ModelParams) else list(params)
    _check_inputs(spec, adj, X, tensors)
    cache = {} if cache is None else cache
    rate = spec.dropout if dropout_rng is not None else 0.0
    arch = spec.arch
    if arch == "MLP":
        return _mlp(tensors, X, rate, dropout_rng)
    if arch == "SGC":
        if _const(adj) and _const(X):
            if "P" not in cache:
                cache["P"] = propagate(adj, X, spec.k_prop)
            P = cache["P"]
        else:
            P = propagate(adj, X, spec.k_prop)
        return _mlp(tensors, P, rate, dropout_rng)
    if arch == "APPNP":
        z0 = _mlp(tensors, X, rate, dropout_rng)
        z = z0
        for _ in range(spec.k_prop):
            z = nd.add(nd.scale(_mm(adj, z), 1.0 - spec.alpha), nd.scale(z0, spec.alpha))
        return z
    n_layers = len(tensors) // 2
    h = X
    for l in range(n_layers):
        if l > 0:
            h = _dropout(h, rate, dropout_rng)
        W, b = tensors[2 * l], tensors[2 * l + 1]
        if arch == "GCN":
            h = nd.add(_mm(adj, _mm(h, W)), b)
        else:  # SAGE_mean: [h, mean(h)] W
            d_in = W.shape[0] // 2
            if l == 0 and _const(adj) and _const(h):
                if "AX" not in cache:
                    cache["AX"] = _const_mm(adj, h)
                neigh = cache["AX"]
            else:
                neigh = _mm(adj, h)
            w_self = nd.take_rows(W, np.arange(d_in))
            w_neigh = nd.take_rows(W, np.arange(d_in, 2 * d_in))
            h = nd.add(nd.add(_mm(h, w_self), _mm(neigh, w_neigh)), b)
        if l < n_layers - 1:
            h = nd.relu(h)
    return h


def predict(spec, params, adj, X, cache=None):
    return forward(spec, params, adj, X, cache=cache).data.argmax(axis=1)


def accuracy(pred, labels, idx):
    idx = np.asarray(idx)
    if idx.size == 0:
        return 0.0
    return float(np.mean(pred[idx] == np.asarray(labels)[idx]))


def train(spec: ModelSpec, params: ModelParams, adj, X, labels, train_idx, epochs=600, lr=0.01,
          optimizer="adam", val_idx=None, val_fn=None, seed=0, weight_decay=None):
    """Full-batch training on one graph.

    ``adj`` is the prepared operator.  The returned parameters are those of
    the epoch with the best validation accuracy, judged by ``val_fn(params)``
    when given, else by accuracy on ``val_idx`` of the training graph; with
    neither, the final parameters are returned.  Returns (params, curve)
    where curve holds the per-epoch validation accuracy.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise ValidationError("no labeled training nodes")
    labels = np.asarray(labels, dtype=np.int64)
    y = labels[train_idx]
    wd = spec.weight_decay if weight_decay is None else weight_decay
    params = params.copy()
    arrays = params.arrays()
    opt = make_optimizer(optimizer, lr, wd)
    drop_rng = np.random.default_rng(seed) if spec.dropout > 0 else None
    cache = {}
    best, best_acc, curve = params.copy(), -1.0, []
    for epoch in range(epochs):
        with Tape() as tape:
            leaves = [tape.leaf(a) for a in arrays]
            logits = forward(spec, leaves, adj, X, dropout_rng=drop_rng, cache=cache)
            loss = nd.softmax_cross_entropy(nd.take_rows(logits, train_idx), y)
        if not np.isfinite(loss.item()):
            raise DivergenceError(f"training loss is not finite at epoch {epoch}", iteration=epoch)
        acc = None
        if val_fn is not None:
            acc = val_fn(params)
        elif val_idx is not None:
            if drop_rng is None:
                pred = logits.data.argmax(axis=1)
            else:
                pred = predict(spec, params, adj, X, cache=cache)
            acc = accuracy(pred, labels, val_idx)
        if acc is not None:
            curve.append(acc)
            if acc > best_acc:
                best_acc, best = acc, params.copy()
        grads = tape.gradient(loss, leaves)
        opt.step(arrays, grads)
    if val_fn is None and val_idx is None:
        return params, curve
    if epochs > 0:
        # the final update has not been scored yet
        acc = val_fn(params) if val_fn is not None else accuracy(
            predict(spec, params, adj, X, cache=cache), labels, val_idx)
        curve.append(acc)
        if acc > best_acc:
            best = params.copy()
    else:
        best = params
    return best, curve


def inner_param_grads(spec: ModelSpec, params, adj, X, labels, idx=None) -> list[Tensor]:
    """Gradient of mean cross-entropy w.r.t. every parameter, as tape values.

    ``adj`` is the normalized operator (tensor, dense array or sparse
    matrix), ``X`` the node features, ``labels`` the labels of rows ``idx``
    (all rows when ``idx`` is None).  The relu mask is taken as a constant.
    Returned order: [W1, b1, W2, b2].
    """
    if spec.arch not in ("SGC", "GCN") or spec.layers > 2:
        raise CapabilityError(f"inner gradients are available for SGC/GCN with <= 2 layers, "
                              f"not {spec.arch} x {spec.layers}")
    tensors = _param_tensors(params) if isinstance(params, ModelParams) else list(params)
    W = [t.data for t in tensors[0::2]]
    n = X.shape[0]
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(n) if idx is None else np.asarray(idx, dtype=np.int64)
    if labels.shape != rows.shape:
        raise DimensionError("labels must match the selected rows")
    m = len(rows)
    onehot = Tensor(nd.onehot(labels, W[-1].shape[1]))

    def delta(logits_rows):
        return nd.scale(nd.sub(nd.softmax(logits_rows), onehot), 1.0 / m)

    def sel(t):
        return t if idx is None else nd.take_rows(t, rows)

    if spec.arch == "SGC":
        P = sel(_as_tensor(propagate(adj, X, spec.k_prop)))
        if spec.layers == 1:
            d = delta(nd.add(_mm(P, W[0]), tensors[1]))
            return [_mm(P.T, d), nd.colsum(d)]
        z1 = nd.add(_mm(P, W[0]), tensors[1])
        mask = Tensor((z1.data > 0).astype(np.float64))
        H = nd.mul(z1, mask)
        d2 = delta(nd.add(_mm(H, W[1]), tensors[3]))
        dz1 = nd.mul(_mm(d2, W[1].T), mask)
        return [_mm(P.T, dz1), nd.colsum(dz1), _mm(H.T, d2), nd.colsum(d2)]

    # GCN: logits = Â (H W) + b, loss on ``rows``
    adjT = adj.T if not _const(adj) else (adj.T.tocsr() if sp.issparse(adj) else adj.T)
    AX = _as_tensor(propagate(adj, X, 1))

    def scatter(d):
        return d if idx is None else nd.put_rows(d, rows, n)

    if spec.layers == 1:
        logits = nd.add(_mm(AX, W[0]), tensors[1])
        d = delta(sel(logits))
        return [_mm(AX.T, scatter(d)), nd.colsum(d)]
    z1 = nd.add(_mm(AX, W[0]), tensors[1])
    mask = Tensor((z1.data > 0).astype(np.float64))
    H = nd.mul(z1, mask)
    AH = _mm(adj, H)
    d2 = delta(sel(nd.add(_mm(AH, W[1]), tensors[3])))
    back = _mm(adjT, scatter(d2))          # Âᵀ δ, n x C
    dz1 = nd.mul(_mm(back, W[1].T), mask)
    return [_mm(AX.T, dz1), nd.colsum(dz1), _mm(H.T, back), nd.colsum(d2)]


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x.toarray() if sp.issparse(x) else x)
