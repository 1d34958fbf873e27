"""Train-on-reduced, test-on-original evaluation and reporting."""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .condense import CondensedGraph, CondenseConfig, condense
from .coresets import Selection
from .dataio import write_report
from .errors import DimensionError
from .graph import SparseGraph, graph_stats, induced_subgraph
from .models import ModelSpec, accuracy, init_params, predict, prepare_adj, train

EVAL_EPOCHS = 600
EVAL_LR = 0.01


@dataclass
class EvalReport:
    method: str
    dataset: str
    nodes: int
    ratio: float
    eval_arch: str
    accuracies: list
    seeds: list
    stats: dict = field(default_factory=dict)
    seconds: float = 0.0
    train_structure: str = "graph"

    @property
    def mean(self):
        return float(np.mean(self.accuracies))

    @property
    def std(self):
        # sample standard deviation; a single repeat has none
        if len(self.accuracies) < 2:
            return 0.0
        return float(np.std(self.accuracies, ddof=1))

    def summary(self):
        return f"{100 * self.mean:.1f}±{100 * self.std:.1f}"


def eval_seeds(seed, repeats):
    """Evaluation seeds, drawn from a stream separate from condensation."""
    ss = np.random.SeedSequence([int(seed), 0xE7A1])
    return [int(s) for s in ss.generate_state(repeats, dtype=np.uint32)]


def _reduced_data(reduced, graph):
    """(adjacency, features, labels, method, train_structure, stats) of a reduced graph."""
    if isinstance(reduced, CondensedGraph):
        adj = reduced.train_adjacency()
        X = reduced.features
        y = reduced.labels
        structure = {"GCOND": "generated", "GCOND_X": "identity", "DC_GRAPH": "identity"}.get(
            reduced.variant, "stored")
        stats = graph_stats(adj, y, 0.5, X.shape[1])
        return adj, X, y, reduced.variant.lower().replace("_", "-"), structure, stats
    if isinstance(reduced, Selection):
        sub = induced_subgraph(graph, reduced.node_ids)
        stats = graph_stats(sub.adj, sub.labels, 0.5, sub.num_features)
        return sub.adj, sub.features, sub.labels, reduced.method, "induced", stats
    if isinstance(reduced, SparseGraph):
        stats = graph_stats(reduced.adj, reduced.labels, 0.5, reduced.num_features)
        return reduced.adj, reduced.features, reduced.labels, "subgraph", "induced", stats
    raise TypeError(f"cannot evaluate {type(reduced).__name__}")


def evaluate(reduced, graph: SparseGraph, spec: ModelSpec, repeats=10, seed=0, seeds=None,
             epochs=EVAL_EPOCHS, lr=EVAL_LR, workers=1, method=None) -> EvalReport:
    """Train ``spec`` on the reduced graph, test on the original one.

    Each repeat trains from fresh parameters, keeps the epoch with the best
    validation accuracy on the original graph, and scores the original
    graph's test nodes (transductive inference with the original edges).
    """
    start = time.time()
    adj, X, y, name, structure, stats = _reduced_data(reduced, graph)
    if X.shape[1] != graph.num_features:
        raise DimensionError(f"reduced features have {X.shape[1]} columns, graph has {graph.num_features}")
    seeds = list(seeds) if seeds is not None else eval_seeds(seed, repeats)
    a_train = prepare_adj(spec, adj)
    a_full = prepare_adj(spec, graph.adj)
    X_full = graph.features_matrix
    C = graph.num_classes
    train_idx = np.arange(len(y))

    def one(s):
        cache = {}

        def val_fn(p):
            return accuracy(predict(spec, p, a_full, X_full, cache=cache), graph.labels, graph.val_idx)

        params = init_params(spec, graph.num_features, C, s)
        params, _ = train(spec, params, a_train, X, y, train_idx, epochs=epochs, lr=lr,
                          val_fn=val_fn, seed=s)
        return accuracy(predict(spec, params, a_full, X_full, cache=cache), graph.labels, graph.test_idx)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accs = list(pool.map(one, seeds))
    else:
        accs = [one(s) for s in seeds]
    n_red = len(y)
    return EvalReport(method or name, graph.name, n_red, n_red / graph.n, spec.arch, accs, seeds,
                      stats, time.time() - start, structure)


def evaluate_whole(graph: SparseGraph, spec: ModelSpec, repeats=10, seed=0, seeds=None,
                   epochs=EVAL_EPOCHS, lr=EVAL_LR) -> EvalReport:
    """Standard semi-supervised training on the full graph."""
    start = time.time()
    seeds = list(seeds) if seeds is not None else eval_seeds(seed, repeats)
    a = prepare_adj(spec, graph.adj)
    X = graph.features_matrix
    accs = []
    for s in seeds:
        params = init_params(spec, graph.num_features, graph.num_classes, s)
        params, _ = train(spec, params, a, X, graph.labels, graph.train_idx, epochs=epochs, lr=lr,
                          val_idx=graph.val_idx, seed=s)
        accs.append(accuracy(predict(spec, params, a, X), graph.labels, graph.test_idx))
    stats = graph_stats(graph.adj, graph.labels, 0.5, graph.num_features)
    return EvalReport("whole", graph.name, graph.n, 1.0, spec.arch, accs, seeds, stats,
                      time.time() - start, "graph")


def cross_architecture(graph, config: CondenseConfig, condense_archs=("SGC", "GCN"),
                       eval_archs=("GCN", "SGC", "APPNP", "SAGE_mean", "MLP"), repeats=10, seed=0,
                       variant="GCOND", condensed=None, eval_spec_kw=None):
    """Condense once per condensation model and evaluate with every eval model.

    ``condensed`` may map condensation arch -> already condensed graph.
    Returns {(condense_arch, eval_arch): EvalReport}.
    """
    out = {}
    condensed = dict(condensed or {})
    kw = {"layers": 2, "hidden": 256}
    kw.update(eval_spec_kw or {})
    for ca in condense_archs:
        if ca not in condensed:
            cfg = dataclasses.replace(config, arch=ca)
            condensed[ca], _ = condense(graph, cfg, variant)
        for ea in eval_archs:
            spec = ModelSpec(ea, **kw)
            out[(ca, spec.arch)] = evaluate(condensed[ca], graph, spec, repeats=repeats, seed=seed)
    return out


def cross_table(results):
    rows = sorted({k[0] for k in results})
    cols = []
    for k in results:
        if k[1] not in cols:
            cols.append(k[1])
    lines = ["condensed-by".ljust(14) + "".join(c.rjust(12) for c in cols)]
    for r in rows:
        cells = [results[(r, c)].summary() if (r, c) in results else "-" for c in cols]
        lines.append(r.ljust(14) + "".join(x.rjust(12) for x in cells))
    return "\n".join(lines) + "\n"


_HEADER = ["method", "dataset", "nodes", "ratio", "model", "accuracy"]
_STAT_HEADER = ["method", "dataset", "nodes", "edges", "sparsity%", "homophily", "storage_MB"]


def _table(header, rows):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)] if rows else [len(h) for h in header]
    fmt = lambda r: "  ".join(str(x).ljust(w) for x, w in zip(r, widths)).rstrip()
    return "\n".join([fmt(header)] + [fmt(r) for r in rows]) + "\n"


def report(*reports, path=None, config=None):
    """Render accuracy and graph-statistics tables plus a key=value record."""
    acc_rows, stat_rows = [], []
    record = {"reports": len(reports)}
    for i, r in enumerate(reports):
        acc_rows.append([r.method, r.dataset, r.nodes, f"{100 * r.ratio:.2f}%", r.eval_arch, r.summary()])
        s = r.stats
        if s:
            stat_rows.append([r.method, r.dataset, s["nodes"], s["edges"], f"{s['sparsity']:.2f}",
                              f"{s['homophily']:.2f}", f"{s['storage_mb']:.2f}"])
        pre = f"r{i}."
        record[pre + "method"] = r.method
        record[pre + "dataset"] = r.dataset
        record[pre + "nodes"] = r.nodes
        record[pre + "model"] = r.eval_arch
        record[pre + "train_structure"] = r.train_structure
        record[pre + "seeds"] = ",".join(map(str, r.seeds))
        record[pre + "accuracies"] = ",".join(f"{a:.4f}" for a in r.accuracies)
        record[pre + "mean"] = f"{r.mean:.6f}"
        record[pre + "std"] = f"{r.std:.6f}"
        for k, v in s.items():
            record[pre + k] = v
        record[pre + "seconds"] = f"{r.seconds:.1f}"
    sections = [("accuracy", _table(_HEADER, acc_rows)), ("condensed graph statistics", _table(_STAT_HEADER, stat_rows))]
    if config:
        sections.insert(0, ("config", "\n".join(f"{k}: {v}" for k, v in config.items()) + "\n"))
        for k, v in config.items():
            record["config." + k] = v
    return write_report(path, sections, record)
