"""Coreset baselines that keep real training nodes: random, herding, k-center."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass
class Selection:
    node_ids: np.ndarray
    method: str
    counts: dict = field(default_factory=dict)


def _class_pools(labels, train_mask, counts):
    labels = np.asarray(labels)
    train_mask = np.ones(len(labels), bool) if train_mask is None else np.asarray(train_mask, bool)
    pools = {}
    for c, k in enumerate(counts):
        if k == 0:
            continue
        pool = np.flatnonzero(train_mask & (labels == c))
        if pool.size == 0:
            raise ValidationError(f"class {c} has no candidate nodes")
        if k > pool.size:
            raise ValidationError(f"class {c}: asked for {k} nodes, only {pool.size} available")
        pools[c] = pool
    return pools


def select_random(labels, train_mask, counts, seed=0) -> Selection:
    rng = np.random.default_rng(seed)
    pools = _class_pools(labels, train_mask, counts)
    chosen = [np.sort(rng.choice(pool, size=counts[c], replace=False)) for c, pool in pools.items()]
    ids = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
    return Selection(ids, "random", {c: int(counts[c]) for c in pools})


def herding_order(X, k):
    """Greedy herding: each step adds the point that brings the running mean
    closest to the class mean.  Returns positions into ``X``; ties go to the
    lowest position."""
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(axis=0)
    chosen, acc = [], np.zeros_like(mu)
    free = np.ones(len(X), dtype=bool)
    for t in range(1, k + 1):
        cand = (acc[None, :] + X) / t
        err = ((cand - mu) ** 2).sum(axis=1)
        err[~free] = np.inf
        i = int(np.argmin(err))
        chosen.append(i)
        free[i] = False
        acc += X[i]
    return chosen


def kcenter_order(X, k):
    """Farthest-first traversal starting from the point nearest the mean."""
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(axis=0)
    first = int(np.argmin(((X - mu) ** 2).sum(axis=1)))
    chosen = [first]
    dist = np.sqrt(((X - X[first]) ** 2).sum(axis=1))
    while len(chosen) < k:
        d = dist.copy()
        d[chosen] = -np.inf
        i = int(np.argmax(d))
        chosen.append(i)
        dist = np.minimum(dist, np.sqrt(((X - X[i]) ** 2).sum(axis=1)))
    return chosen


def _greedy(features, labels, counts, train_mask, order_fn, name):
    features = np.asarray(features)
    pools = _class_pools(labels, train_mask, counts)
    out = []
    for c, pool in pools.items():
        pos = order_fn(features[pool], int(counts[c]))
        out.append(pool[pos])
    ids = np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
    return Selection(ids.astype(np.int64), name, {c: int(counts[c]) for c in pools})


def select_herding(features, labels, counts, train_mask=None) -> Selection:
    return _greedy(features, labels, counts, train_mask, herding_order, "herding")


def select_kcenter(features, labels, counts, train_mask=None) -> Selection:
    return _greedy(features, labels, counts, train_mask, kcenter_order, "kcenter")


def covering_radius(X, centers):
    X = np.asarray(X, dtype=np.float64)
    d = np.sqrt(((X[:, None, :] - X[centers][None, :, :]) ** 2).sum(axis=2))
    return float(d.min(axis=1).max())


SELECTORS = {"random": select_random, "herding": select_herding, "kcenter": select_kcenter}


def select(graph, method, counts, seed=0) -> Selection:
    """Run a selector on the training nodes of ``graph``."""
    if method == "random":
        return select_random(graph.labels, graph.train_mask, counts, seed)
    if method == "herding":
        return select_herding(graph.features, graph.labels, counts, graph.train_mask)
    if method in ("kcenter", "k-center"):
        return select_kcenter(graph.features, graph.labels, counts, graph.train_mask)
    raise ValidationError(f"unknown selection method {method!r}")
