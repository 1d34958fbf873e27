"""Gradient-matching graph condensation.

A condensed graph has learnable features X', a fixed label vector Y' and,
for the structured variant, an MLP ``phi`` that maps feature pairs to edge
weights.  Each iteration compares, class by class, the parameter gradient a
small GNN gets on real data with the one it gets on the condensed data and
moves X' and phi to shrink the gap.

Variants:
    GCOND     learn X' and phi; the condensed graph uses the generated A'
    GCOND_X   learn X' only; identity structure on the condensed side
    DC_GRAPH  like GCOND_X, and the real side also ignores real edges
"""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import ndtape as nd
from .errors import ConfigError, DivergenceError, InfeasibleError, ValidationError
from .graph import SparseGraph, normalized_adjacency, sample_class_batch
from .models import ModelSpec, canonical_arch, init_params, inner_param_grads
from .ndtape import Tape, Tensor
from .optim import Adam

VARIANTS = ("GCOND", "GCOND_X", "DC_GRAPH")
_VARIANT_ALIASES = {"gcond": "GCOND", "gcond-x": "GCOND_X", "gcond_x": "GCOND_X",
                    "dc-graph": "DC_GRAPH", "dc_graph": "DC_GRAPH", "dcgraph": "DC_GRAPH"}


def canonical_variant(name):
    if name in VARIANTS:
        return name
    try:
        return _VARIANT_ALIASES[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown condensation method {name!r}") from None


@dataclass
class CondenseConfig:
    """Knobs of one condensation run; every field is echoed into artifacts.

    ``tau1`` iterations update phi (lr ``lr_phi``), then ``tau2`` iterations
    update X' (lr ``lr_feat``), repeating.  ``schedule="joint"`` updates both
    every iteration.  Variants without phi update X' every iteration.
    """

    ratio: float | None = None
    nodes: int | None = None
    outer: int = 10
    epochs: int = 50
    tau1: int = 10
    tau2: int = 1
    tau_theta: int = 50
    lr_feat: float = 0.01
    lr_phi: float = 0.01
    lr_theta: float = 0.01
    batch_size: int = 256
    fanout: int = 5
    arch: str = "SGC"
    layers: int = 1
    hidden: int = 256
    k_prop: int = 2
    gphi_layers: int = 3
    gphi_hidden: int = 128
    gphi_norm: bool = True
    delta: float = 0.05
    schedule: str = "alternate"
    seed: int = 0
    workers: int = 1

    def validate(self):
        if (self.ratio is None) == (self.nodes is None):
            raise ConfigError("give exactly one of ratio and nodes")
        if self.ratio is not None and not 0 < self.ratio < 1:
            raise ConfigError("ratio must lie in (0, 1)")
        if self.nodes is not None and self.nodes < 1:
            raise ConfigError("nodes must be >= 1")
        for name in ("outer", "epochs", "tau1", "batch_size", "fanout", "gphi_layers",
                     "gphi_hidden", "layers", "hidden", "k_prop", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.tau2 < 0 or self.tau_theta < 0:
            raise ConfigError("tau2 and tau_theta must be >= 0")
        if self.arch not in ("SGC", "GCN"):
            try:
                self.arch = canonical_arch(self.arch)
            except ValidationError as e:
                raise ConfigError(str(e)) from None
            if self.arch not in ("SGC", "GCN"):
                raise ConfigError("condensation supports SGC and GCN only")
        if self.layers > 2:
            raise ConfigError("condensation models have at most 2 layers")
        if self.schedule not in ("alternate", "joint"):
            raise ConfigError("schedule must be 'alternate' or 'joint'")
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        return self

    def model_spec(self):
        return ModelSpec(self.arch, layers=self.layers, hidden=self.hidden, k_prop=self.k_prop,
                         dropout=0.0, weight_decay=0.0)

    def target_nodes(self, graph):
        if self.nodes is not None:
            return int(self.nodes)
        return int(round(self.ratio * graph.n))

    def echo(self):
        return dataclasses.asdict(self)


@dataclass
class CondensedGraph:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    variant: str = "GCOND"
    delta: float | None = None
    phi: list | None = None
    adj: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.features.shape[0]

    def copy(self):
        return CondensedGraph(self.features.copy(), self.labels.copy(), self.num_classes, self.variant,
                              self.delta, None if self.phi is None else [p.copy() for p in self.phi],
                              None if self.adj is None else self.adj.copy(), dict(self.meta))

    def train_adjacency(self):
        """Structure a model trained on this graph may see."""
        if self.variant in ("GCOND_X", "DC_GRAPH"):
            return np.eye(self.n)
        if self.adj is None:
            raise ValidationError("condensed graph is not finalized")
        return self.adj


# ---------------------------------------------------------------------------
# building blocks

def match_distance(gS, gT) -> Tensor:
    """Sum over columns of 1 - cos(gS_i, gT_i); row vectors count as one column."""
    gT = gT.data if isinstance(gT, Tensor) else np.asarray(gT, dtype=np.float64)
    if gT.ndim == 1:
        gT = gT[:, None]
    if not isinstance(gS, Tensor):
        gS = Tensor(gS)
    if gS.rows == 1 and gT.shape[0] == 1:
        gS, gT = nd.transpose(gS), gT.T
    if gS.shape != gT.shape:
        raise nd.DimensionError(f"gradient shapes differ: {gS.shape} vs {gT.shape}")
    cos = nd.column_cosine(gS, gT)
    return nd.sub(Tensor([[float(gS.cols)]]), nd.sum(cos))


def init_phi(in_dim, layers=3, hidden=128, seed=0):
    """Pair-MLP weights: 2*in_dim -> hidden -> ... -> 1."""
    spec = ModelSpec("MLP", layers=layers, hidden=hidden)
    return init_params(spec, 2 * in_dim, 1, seed).arrays()


def gphi_forward(phi, X, norm=True) -> Tensor:
    """A'_ij = sigmoid((MLP([x_i; x_j]) + MLP([x_j; x_i])) / 2).

    The first layer is split into the halves acting on x_i and x_j so the
    n^2 pair inputs are never materialized.  With ``norm`` every hidden
    layer is standardized over all pairs before its relu; otherwise pairs of
    small feature vectors all map to nearly the same weight at init.
    """
    phi = [p if isinstance(p, Tensor) else Tensor(p) for p in phi]
    X = X if isinstance(X, Tensor) else Tensor(X)
    n, d = X.shape
    W1, b1 = phi[0], phi[1]
    if W1.rows != 2 * d:
        raise nd.DimensionError(f"phi expects {W1.rows // 2}-dim features, got {d}")
    u = nd.matmul(X, nd.take_rows(W1, np.arange(d)))
    v = nd.matmul(X, nd.take_rows(W1, np.arange(d, 2 * d)))
    h = nd.add(nd.pair_sum(u, v), b1)
    for l in range(1, len(phi) // 2):
        if norm:
            h = nd.standardize_cols(h)
        h = nd.add(nd.matmul(nd.relu(h), phi[2 * l]), phi[2 * l + 1])
    m = nd.reshape(h, (n, n))
    return nd.sigmoid(nd.scale(nd.add(m, nd.transpose(m)), 0.5))


def allocate_counts(train_counts, total):
    """Split ``total`` nodes across classes in proportion to ``train_counts``.

    Largest-remainder rounding, with at least one node for every class that
    has training nodes.
    """
    counts = np.asarray(train_counts, dtype=np.int64)
    present = counts > 0
    if total < present.sum():
        raise InfeasibleError(f"{total} nodes cannot cover {int(present.sum())} classes")
    raw = total * counts / counts.sum()
    base = np.floor(raw).astype(np.int64)
    base[present] = np.maximum(base[present], 1)
    rem = raw - np.floor(raw)
    diff = total - base.sum()
    # stable sorts keep lower class ids first on ties
    if diff > 0:
        order = np.argsort(-rem, kind="stable")
        order = order[present[order]]
        for i in range(diff):
            base[order[i % len(order)]] += 1
    elif diff < 0:
        order = np.argsort(rem, kind="stable")
        while diff < 0:
            for c in order:
                if diff < 0 and base[c] > 1:
                    base[c] -= 1
                    diff += 1
    return base


def init_condensed(graph: SparseGraph, config: CondenseConfig, variant="GCOND") -> CondensedGraph:
    variant = canonical_variant(variant)
    config.validate()
    C = graph.num_classes
    counts = graph.class_counts()
    if np.any(counts == 0):
        raise ValidationError("every class needs at least one training node")
    n_syn = config.target_nodes(graph)
    alloc = allocate_counts(counts, n_syn)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xC0DE]))
    rows, labels = [], []
    for c in range(C):
        pool = np.flatnonzero(graph.train_mask & (graph.labels == c))
        pick = rng.choice(pool, size=alloc[c], replace=alloc[c] > len(pool))
        rows.append(pick)
        labels += [c] * int(alloc[c])
    rows = np.concatenate(rows)
    X = np.array(graph.features[rows], dtype=np.float64)
    phi = None
    if variant == "GCOND":
        phi = init_phi(graph.num_features, config.gphi_layers, config.gphi_hidden,
                       seed=np.random.SeedSequence([config.seed, 0xF1]))
    meta = {"seed": config.seed, "config": config.echo(), "source_rows": rows.tolist(),
            "ratio": n_syn / graph.n, "dataset": graph.name}
    return CondensedGraph(X, np.asarray(labels, dtype=np.int64), C, variant, config.delta, phi, None, meta)


# ---------------------------------------------------------------------------
# matching loss

def _hops(spec):
    return spec.k_prop if spec.arch == "SGC" else spec.layers


def real_gradients(graph, spec, theta, c, config, rng, use_structure=True):
    """Parameter gradients of the loss on a sampled batch of class ``c``."""
    batch = sample_class_batch(graph, c, config.batch_size, config.fanout,
                               _hops(spec) if use_structure else 0, rng)
    nodes = batch.neighbor_closure
    feats = graph.features_matrix[nodes]
    if use_structure:
        adj = normalized_adjacency(graph.adj[nodes][:, nodes])
    else:
        adj = sp.identity(len(nodes), format="csr")
    y = np.full(batch.batch_size, c, dtype=np.int64)
    grads = inner_param_grads(spec, theta, adj, feats, y, idx=np.arange(batch.batch_size))
    return [g.data for g in grads]


def _class_loss(spec, theta, adj_syn, X_syn, labels, c, gT):
    idx = np.flatnonzero(labels == c)
    gS = inner_param_grads(spec, theta, adj_syn, X_syn, labels[idx], idx=idx)
    total = None
    for s, t in zip(gS, gT):
        dist = match_distance(s, t)
        total = dist if total is None else nd.add(total, dist)
    return total


def _class_rngs(config, k, t, classes):
    return [np.random.default_rng(np.random.SeedSequence([config.seed, k, t, int(c)])) for c in classes]


def matching_loss(graph, cond: CondensedGraph, theta, config, k=0, t=0, workers=None):
    """Total matching distance and its gradients w.r.t. X' and phi.

    Returns (loss, grad_X, grad_phi) with grad_phi None for variants without
    a structure generator.  With ``workers > 1`` each class is handled by its
    own tape on a thread pool and the class gradients are pulled back
    through the generator afterwards; the result matches the serial path up
    to floating-point reassociation.
    """
    workers = config.workers if workers is None else workers
    spec = config.model_spec()
    labels = cond.labels
    classes = [c for c in range(cond.num_classes) if np.any(labels == c)]
    rngs = _class_rngs(config, k, t, classes)
    use_real = cond.variant != "DC_GRAPH"
    structured = cond.variant == "GCOND"

    def real(i):
        return real_gradients(graph, spec, theta, classes[i], config, rngs[i], use_real)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            gTs = list(pool.map(real, range(len(classes))))
    else:
        gTs = [real(i) for i in range(len(classes))]

    with Tape() as tape:
        X = tape.leaf(cond.features)
        phi = [tape.leaf(p) for p in cond.phi] if structured else []
        if structured:
            A = nd.sym_normalize(gphi_forward(phi, X, config.gphi_norm))
        else:
            A = sp.identity(cond.n, format="csr")
        if workers <= 1:
            loss = None
            for i, c in enumerate(classes):
                lc = _class_loss(spec, theta, A, X, labels, c, gTs[i])
                loss = lc if loss is None else nd.add(loss, lc)
            grads = tape.gradient(loss, [X] + phi)
            total = loss.item()
        else:
            a_data = A.data if structured else None
            x_data = cond.features

            def per_class(i):
                with Tape() as sub:
                    xl = sub.leaf(x_data)
                    al = sub.leaf(a_data) if structured else A
                    lc = _class_loss(spec, theta, al, xl, labels, classes[i], gTs[i])
                    srcs = [xl, al] if structured else [xl]
                    return lc.item(), sub.gradient(lc, srcs)

            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(per_class, range(len(classes))))
            total = 0.0
            gx = np.zeros_like(x_data)
            ga = np.zeros_like(a_data) if structured else None
            for val, g in parts:
                total += val
                gx += g[0]
                if structured:
                    ga += g[1]
            if structured:
                grads = tape.gradient([A], [X] + phi, seeds=[ga])
                grads[0] = grads[0] + gx
            else:
                grads = [gx]
    return total, grads[0], (grads[1:] if structured else None)


# ---------------------------------------------------------------------------
# main loop

def _refresh_theta(spec, theta, cond, adj_norm, steps, lr):
    if steps == 0:
        return theta
    arrays = theta.arrays()
    X = Tensor(cond.features)
    P = X
    A = adj_norm
    if spec.arch == "SGC":
        # propagation is constant while theta moves
        P = Tensor(np.asarray(_prop_k(A, cond.features, spec.k_prop)))
        A = sp.identity(cond.n, format="csr")
        spec = dataclasses.replace(spec, k_prop=1)
    for _ in range(steps):
        grads = inner_param_grads(spec, arrays_to_tensors(arrays), A, P, cond.labels)
        for a, g in zip(arrays, grads):
            a -= lr * g.data
    return theta


def _prop_k(A, X, k):
    h = X
    for _ in range(k):
        h = A @ h
    return h


def arrays_to_tensors(arrays):
    return [Tensor(a) for a in arrays]


def _uses_norm(cond):
    return bool(cond.meta.get("config", {}).get("gphi_norm", True))


def _structure(cond):
    if cond.variant == "GCOND":
        return gphi_forward(cond.phi, cond.features, _uses_norm(cond)).data
    return np.eye(cond.n)


def condense(graph: SparseGraph, config: CondenseConfig, variant="GCOND", callback=None):
    """Run the full outer/inner loop; returns (CondensedGraph, loss trace).

    The graph is finalized before it is returned.  ``callback(it, loss)``
    is called after every iteration.
    """
    config.validate()
    variant = canonical_variant(variant)
    spec = config.model_spec()
    cond = init_condensed(graph, config, variant)
    phi_init = None if cond.phi is None else [p.copy() for p in cond.phi]
    opt_feat = Adam(config.lr_feat)
    opt_phi = Adam(config.lr_phi)
    trace = []
    it = 0
    start = time.time()
    for k in range(config.outer):
        theta = init_params(spec, graph.num_features, cond.num_classes,
                            np.random.SeedSequence([config.seed, k, 0x7E7A]))
        for t in range(config.epochs):
            loss, gX, gphi = matching_loss(graph, cond, theta, config, k, t)
            if not np.isfinite(loss) or not np.all(np.isfinite(gX)):
                raise DivergenceError(f"matching loss is not finite at iteration {it}", iteration=it)
            if variant != "GCOND":
                opt_feat.step([cond.features], [gX])
            elif config.schedule == "joint":
                opt_feat.step([cond.features], [gX])
                opt_phi.step(cond.phi, gphi)
            elif t % (config.tau1 + config.tau2) < config.tau1:
                opt_phi.step(cond.phi, gphi)
            else:
                opt_feat.step([cond.features], [gX])
            if config.tau_theta:
                adj = _structure(cond)
                adj_norm = normalized_adjacency(adj) if variant == "GCOND" else sp.identity(cond.n, format="csr")
                _refresh_theta(spec, theta, cond, adj_norm, config.tau_theta, config.lr_theta)
            trace.append(loss)
            if callback is not None:
                callback(it, loss)
            it += 1
    cond.meta["seconds"] = round(time.time() - start, 3)
    cond.meta["iterations"] = it
    if phi_init is not None:
        cond.meta["phi_changed"] = any(not np.array_equal(a, b) for a, b in zip(phi_init, cond.phi))
    return finalize(cond), np.asarray(trace)


def finalize(cond: CondensedGraph, delta=None) -> CondensedGraph:
    """Materialize A'; generated weights <= delta become exactly 0."""
    out = cond.copy()
    if delta is not None:
        out.delta = float(delta)
    if out.variant != "GCOND":
        out.adj = np.eye(out.n)
        return out
    if out.phi is None:
        if out.adj is None:
            raise ValidationError("no structure generator and no stored adjacency")
        a = out.adj.copy()
    else:
        a = gphi_forward(out.phi, out.features, _uses_norm(out)).data.copy()
    a[a <= (out.delta or 0.0)] = 0.0
    out.adj = a
    return out
