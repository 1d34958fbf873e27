"""Text formats for datasets, condensed artifacts and run reports.

A dataset directory holds::

    meta.json      name, n, d, num_classes, directed, num_edges, split sizes
    edges.tsv      "u<TAB>v" per line, 0-indexed, each undirected edge once
    features.csv   comma-separated rows (features.csv.gz is also accepted)
    labels.txt     one integer per line, -1 for unlabeled
    splits.txt     three lines of whitespace-separated node ids: train, val, test

A condensed artifact directory holds ``manifest.json``, ``features.csv``,
``adjacency.csv`` (dense) and ``labels.txt``; reals are written with 17
significant digits so a load reproduces them exactly.
"""

from __future__ import annotations

import gzip
import io
import json
import os
import pickle

import numpy as np
import scipy.sparse as sp

from .errors import DatasetError, ValidationError
from .graph import SparseGraph

FLOAT_FMT = "%.17g"


def _open_text(path, mode="rt"):
    if path.endswith(".gz"):
        return gzip.open(path, mode, encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def _require(path):
    if not os.path.exists(path):
        raise DatasetError("missing_file", "required file not found", path=path)
    return path


def _features_path(path, meta=None):
    name = (meta or {}).get("features_file")
    candidates = [name] if name else ["features.csv", "features.csv.gz"]
    for c in candidates:
        p = os.path.join(path, c)
        if os.path.exists(p):
            return p
    raise DatasetError("missing_file", "required file not found", path=os.path.join(path, candidates[0]))


def _parse_int_lines(path):
    out = []
    with _open_text(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(int(line))
            except ValueError:
                raise DatasetError("parse_error", f"expected an integer, got {line!r}",
                                   path=path, line=lineno) from None
    return np.asarray(out, dtype=np.int64)


def _parse_matrix(path, cols=None):
    """Comma-separated reals; falls back to a line scan to locate bad input."""
    with _open_text(path) as f:
        text = f.read()
    try:
        arr = np.loadtxt(io.StringIO(text), delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError:
        arr = None
    if arr is not None and (cols is None or arr.shape[1] == cols or arr.size == 0):
        return arr
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError:
            raise DatasetError("parse_error", "non-numeric value", path=path, line=lineno) from None
        if cols is not None and len(row) != cols:
            raise DatasetError("count_mismatch", f"expected {cols} columns, found {len(row)}",
                               path=path, line=lineno)
        rows.append(row)
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), -1)


def _format_rows(arr):
    buf = io.StringIO()
    np.savetxt(buf, np.asarray(arr, dtype=np.float64), fmt=FLOAT_FMT, delimiter=",")
    return buf.getvalue()


def _write_text(path, text):
    if path.endswith(".gz"):
        # mtime=0 keeps the archive byte-stable across runs
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0,
                                                    filename="") as gz:
            gz.write(text.encode("utf-8"))
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# datasets

def load_dataset(path) -> SparseGraph:
    meta_path = _require(os.path.join(path, "meta.json"))
    try:
        with open(meta_path, encoding="utf-8") as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetError("parse_error", str(e), path=meta_path, line=e.lineno) from None
    for key in ("n", "d"):
        if key not in meta:
            raise DatasetError("parse_error", f"manifest lacks field {key!r}", path=meta_path)
    n, d = int(meta["n"]), int(meta["d"])
    directed = bool(meta.get("directed", False))

    edges_path = _require(os.path.join(path, "edges.tsv"))
    us, vs, ws = [], [], []
    with _open_text(edges_path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) not in (2, 3):
                raise DatasetError("parse_error", "expected 'u<TAB>v' or 'u<TAB>v<TAB>w'",
                                   path=edges_path, line=lineno)
            try:
                u, v = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError:
                raise DatasetError("parse_error", "bad edge entry", path=edges_path, line=lineno) from None
            if not (0 <= u < n and 0 <= v < n):
                raise DatasetError("index_out_of_range", f"edge ({u}, {v}) with n={n}",
                                   path=edges_path, line=lineno)
            us.append(u)
            vs.append(v)
            ws.append(w)
    if "num_edges" in meta and int(meta["num_edges"]) != len(us):
        raise DatasetError("count_mismatch", f"manifest says {meta['num_edges']} edges, file has {len(us)}",
                           path=edges_path)
    us, vs, ws = np.asarray(us, dtype=np.int64), np.asarray(vs, dtype=np.int64), np.asarray(ws)
    if not directed:
        off = us != vs
        us, vs, ws = np.concatenate([us, vs[off]]), np.concatenate([vs, us[off]]), np.concatenate([ws, ws[off]])
    adj = sp.coo_matrix((ws, (us, vs)), shape=(n, n)).tocsr()
    adj.sum_duplicates()
    if adj.nnz and np.all(ws == 1.0):
        # unweighted: repeated listings of one edge collapse to a single entry
        adj.data[:] = 1.0

    fpath = _features_path(path, meta)
    feats = _parse_matrix(fpath, cols=d)
    if feats.shape != (n, d):
        raise DatasetError("count_mismatch", f"features have shape {feats.shape}, manifest says ({n}, {d})",
                           path=fpath)
    if meta.get("row_normalize"):
        s = feats.sum(axis=1, keepdims=True)
        feats = np.divide(feats, s, out=np.zeros_like(feats), where=s != 0)

    lpath = _require(os.path.join(path, "labels.txt"))
    labels = _parse_int_lines(lpath)
    if labels.shape != (n,):
        raise DatasetError("count_mismatch", f"{labels.size} labels for {n} nodes", path=lpath)
    C = int(meta.get("num_classes", labels.max() + 1 if labels.size else 0))
    bad = np.flatnonzero((labels < -1) | (labels >= C))
    if bad.size:
        raise DatasetError("label_out_of_range", f"label {labels[bad[0]]} not in [-1, {C})",
                           path=lpath, line=int(bad[0]) + 1)

    spath = _require(os.path.join(path, "splits.txt"))
    with _open_text(spath) as f:
        text = f.read()
    # one line per split; an empty split is an empty line, so drop only the final newline
    lines = (text[:-1] if text.endswith("\n") else text).split("\n")
    if len(lines) != 3:
        raise DatasetError("parse_error", f"expected 3 split lines, found {len(lines)}", path=spath)
    masks = []
    sizes = meta.get("splits", {})
    for lineno, (name, line) in enumerate(zip(("train", "val", "test"), lines), 1):
        try:
            idx = np.asarray([int(t) for t in line.split()], dtype=np.int64)
        except ValueError:
            raise DatasetError("parse_error", "non-integer node id", path=spath, line=lineno) from None
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise DatasetError("index_out_of_range", f"{name} split references a node >= {n}",
                               path=spath, line=lineno)
        if name in sizes and int(sizes[name]) != idx.size:
            raise DatasetError("count_mismatch", f"{name} split has {idx.size} ids, manifest says {sizes[name]}",
                               path=spath, line=lineno)
        if np.any(labels[idx] < 0):
            raise DatasetError("label_out_of_range", f"{name} split contains unlabeled nodes",
                               path=spath, line=lineno)
        m = np.zeros(n, dtype=bool)
        m[idx] = True
        masks.append(m)
    try:
        return SparseGraph(adj, feats, labels, *masks, name=meta.get("name", os.path.basename(path)),
                           directed=directed)
    except ValidationError as e:
        raise DatasetError("parse_error", str(e), path=spath) from None


def save_dataset(graph: SparseGraph, path, name=None, compress=False, row_normalize=False, extra=None):
    """Write ``graph`` as a dataset directory (features written as stored)."""
    os.makedirs(path, exist_ok=True)
    a = graph.adj if graph.directed else sp.triu(graph.adj, k=0)
    a = sp.coo_matrix(a)
    order = np.lexsort((a.col, a.row))
    r, c, w = a.row[order], a.col[order], a.data[order]
    weighted = not np.all(w == 1.0)
    lines = []
    for u, v, x in zip(r.tolist(), c.tolist(), w.tolist()):
        lines.append(f"{u}\t{v}\t{FLOAT_FMT % x}" if weighted else f"{u}\t{v}")
    _write_text(os.path.join(path, "edges.tsv"), "".join(ln + "\n" for ln in lines))
    fname = "features.csv.gz" if compress else "features.csv"
    _write_text(os.path.join(path, fname), _format_rows(graph.features))
    _write_text(os.path.join(path, "labels.txt"), "".join(f"{int(x)}\n" for x in graph.labels))
    splits = [graph.train_idx, graph.val_idx, graph.test_idx]
    _write_text(os.path.join(path, "splits.txt"),
                "".join(" ".join(map(str, s.tolist())) + "\n" for s in splits))
    lab = graph.labels[graph.labels >= 0]
    meta = {
        "name": name or graph.name,
        "n": int(graph.n),
        "d": int(graph.num_features),
        "num_classes": int(lab.max()) + 1 if lab.size else 0,
        "directed": bool(graph.directed),
        "num_edges": len(lines),
        "splits": {"train": int(splits[0].size), "val": int(splits[1].size), "test": int(splits[2].size)},
        "features_file": fname,
        "row_normalize": bool(row_normalize),
    }
    if extra:
        meta.update(extra)
    _write_text(os.path.join(path, "meta.json"), _dump_json(meta))
    return path


# ---------------------------------------------------------------------------
# condensed artifacts

def save_condensed(cond, path):
    """Persist a finalized condensed graph; returns the directory."""
    if cond.adj is None:
        raise ValidationError("finalize the condensed graph before saving it")
    os.makedirs(path, exist_ok=True)
    X = np.asarray(cond.features, dtype=np.float64)
    A = np.asarray(cond.adj, dtype=np.float64)
    manifest = {
        "method": cond.variant,
        "nodes": int(X.shape[0]),
        "d": int(X.shape[1]),
        "num_classes": int(cond.num_classes),
        "delta": cond.delta,
        "seed": cond.meta.get("seed"),
        "config": cond.meta.get("config", {}),
    }
    for k, v in cond.meta.items():
        if k not in ("seed", "config"):
            manifest.setdefault("info", {})[k] = v
    _write_text(os.path.join(path, "manifest.json"), _dump_json(manifest))
    _write_text(os.path.join(path, "features.csv"), _format_rows(X))
    _write_text(os.path.join(path, "adjacency.csv"), _format_rows(A))
    _write_text(os.path.join(path, "labels.txt"), "".join(f"{int(y)}\n" for y in cond.labels))
    return path


def load_condensed(path):
    from .condense import CondensedGraph

    mpath = _require(os.path.join(path, "manifest.json"))
    with open(mpath, encoding="utf-8") as f:
        manifest = json.load(f)
    n, d = int(manifest["nodes"]), int(manifest["d"])
    fpath = _require(os.path.join(path, "features.csv"))
    X = _parse_matrix(fpath, cols=d)
    if X.shape != (n, d):
        raise DatasetError("count_mismatch", f"features have shape {X.shape}, expected ({n}, {d})", path=fpath)
    apath = _require(os.path.join(path, "adjacency.csv"))
    A = _parse_matrix(apath, cols=n)
    if A.shape != (n, n):
        raise DatasetError("count_mismatch", f"adjacency has shape {A.shape}, expected ({n}, {n})", path=apath)
    if n and np.abs(A - A.T).max() > 1e-12:
        raise DatasetError("asymmetric", "adjacency is not symmetric", path=apath)
    lpath = _require(os.path.join(path, "labels.txt"))
    y = _parse_int_lines(lpath)
    C = int(manifest.get("num_classes", y.max() + 1))
    if y.shape != (n,):
        raise DatasetError("count_mismatch", f"{y.size} labels for {n} nodes", path=lpath)
    if y.size and (y.min() < 0 or y.max() >= C):
        raise DatasetError("label_out_of_range", f"labels must lie in [0, {C})", path=lpath)
    meta = dict(manifest.get("info", {}))
    meta["seed"] = manifest.get("seed")
    meta["config"] = manifest.get("config", {})
    return CondensedGraph(features=X, labels=y, num_classes=C, variant=manifest["method"],
                          delta=manifest.get("delta"), adj=A, meta=meta)


# ---------------------------------------------------------------------------
# synthetic graphs

def gen_synthetic(n, classes, p_in, p_out, d, seed=0, noise=1.0, scale=3.0, split=(0.3, 0.2)):
    """Stochastic block model with Gaussian features around scaled one-hot means.

    Labels cycle through the classes in a seeded random order.  Each class
    contributes at least one node to the training split.
    """
    if not 0 <= p_out <= p_in <= 1:
        raise ValidationError("need 0 <= p_out <= p_in <= 1")
    if classes < 1 or n < classes:
        raise ValidationError("need at least one node per class")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    draw = rng.random((n, n))
    upper = np.triu(draw < prob, k=1)
    adj = sp.csr_matrix((upper | upper.T).astype(np.float64))
    means = np.zeros((classes, d))
    means[np.arange(classes), np.arange(classes) % d] = scale
    feats = means[labels] + noise * rng.normal(size=(n, d))
    order = rng.permutation(n)
    n_tr, n_va = int(round(split[0] * n)), int(round(split[1] * n))
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    # guarantee every class a training node
    firsts = [order[np.flatnonzero(labels[order] == c)[0]] for c in range(classes)]
    train[firsts] = True
    rest = [i for i in order if not train[i]]
    k = max(n_tr - classes, 0)
    train[rest[:k]] = True
    val[rest[k:k + n_va]] = True
    test[rest[k + n_va:]] = True
    return SparseGraph(adj, feats, labels, train, val, test, name=f"sbm-{n}-{classes}-{seed}")


# ---------------------------------------------------------------------------
# importers for public citation data

def import_linqs(content_path, cites_path, seed=0, per_class=20, n_val=500, n_test=1000, name="cora"):
    """Read LINQS ``.content``/``.cites`` files and draw a Planetoid-style split.

    Classes are numbered in sorted-name order; citation pairs are coalesced
    into undirected edges without self loops.  The split takes ``per_class``
    training nodes per class, then ``n_val`` and ``n_test`` nodes from the
    remainder, all drawn with ``seed``.
    """
    ids, rows, names = [], [], []
    with open(content_path, encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            rows.append(np.asarray(parts[1:-1], dtype=np.float64))
            names.append(parts[-1])
    index = {p: i for i, p in enumerate(ids)}
    classes = sorted(set(names))
    labels = np.asarray([classes.index(c) for c in names], dtype=np.int64)
    feats = np.vstack(rows)
    n = len(ids)
    pairs = set()
    with open(cites_path, encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if len(parts) != 2 or parts[0] not in index or parts[1] not in index:
                continue
            u, v = index[parts[0]], index[parts[1]]
            if u != v:
                pairs.add((min(u, v), max(u, v)))
    pairs = np.asarray(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    adj = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    adj = (adj + adj.T).tocsr()
    rng = np.random.default_rng(seed)
    train = np.concatenate([np.sort(rng.permutation(np.flatnonzero(labels == c))[:per_class])
                            for c in range(len(classes))])
    rest = np.setdiff1d(np.arange(n), train)
    rest = rng.permutation(rest)
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    masks[0][train] = True
    masks[1][rest[:n_val]] = True
    masks[2][rest[n_val:n_val + n_test]] = True
    return SparseGraph(adj, feats, labels, *masks, name=name)


def import_planetoid(raw_dir, name):
    """Read the ``ind.<name>.*`` pickles with the standard public split.

    Test rows are re-ordered by ``test.index``; ids in the test range that
    have no row (isolated citeseer nodes) get zero features and label -1.
    """
    def load(ext):
        with open(os.path.join(raw_dir, f"ind.{name}.{ext}"), "rb") as f:
            return pickle.load(f, encoding="latin1")

    x, y, tx, ty, allx, ally, graph = (load(e) for e in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    with open(os.path.join(raw_dir, f"ind.{name}.test.index")) as f:
        test_idx = np.asarray([int(t) for t in f.read().split()], dtype=np.int64)
    lo, hi = test_idx.min(), test_idx.max()
    n_test_range = hi - lo + 1
    tx = sp.csr_matrix(tx)
    ty = np.asarray(ty)
    if n_test_range != tx.shape[0]:
        tx_full = sp.lil_matrix((n_test_range, tx.shape[1]))
        tx_full[np.sort(test_idx) - lo] = tx
        ty_full = np.zeros((n_test_range, ty.shape[1]))
        ty_full[np.sort(test_idx) - lo] = ty
        tx, ty = tx_full.tocsr(), ty_full
    feats = sp.vstack([sp.csr_matrix(allx), tx]).tolil()
    lab = np.vstack([np.asarray(ally), ty])
    order = np.sort(test_idx)
    feats[test_idx] = feats[order]
    lab[test_idx] = lab[order]
    n = feats.shape[0]
    labels = np.where(lab.sum(axis=1) > 0, lab.argmax(axis=1), -1).astype(np.int64)
    pairs = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            if u != v and u < n and v < n:
                pairs.add((min(u, v), max(u, v)))
    pairs = np.asarray(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    adj = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    adj = (adj + adj.T).tocsr()
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    masks[0][np.arange(len(np.asarray(y)))] = True
    masks[1][np.arange(len(np.asarray(y)), len(np.asarray(y)) + 500)] = True
    masks[2][test_idx] = True
    return SparseGraph(adj, np.asarray(feats.todense()), labels, *masks, name=name)


# ---------------------------------------------------------------------------
# reports

def write_report(path, sections, record):
    """Sectioned text plus a fenced ``key=value`` block; returns the text."""
    out = []
    for title, body in sections:
        out.append(f"== {title} ==")
        out.append(body.rstrip("\n"))
        out.append("")
    out.append("```record")
    for k, v in record.items():
        out.append(f"{k}={v}")
    out.append("```")
    text = "\n".join(out) + "\n"
    if path:
        _write_text(path, text)
    return text


def read_report_record(text):
    """Parse the fenced ``key=value`` block of a report back into a dict."""
    inside, rec = False, {}
    for line in text.splitlines():
        if line.strip() == "```record":
            inside = True
            continue
        if inside and line.strip() == "```":
            break
        if inside and "=" in line:
            k, v = line.split("=", 1)
            rec[k] = v
    return rec
