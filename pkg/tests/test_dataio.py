import filecmp
import json
import os

import numpy as np
import pytest
import scipy.sparse as sp

from graphcondense.condense import CondenseConfig, CondensedGraph, finalize, init_condensed
from graphcondense.dataio import (gen_synthetic, import_linqs, load_condensed, load_dataset,
                                  read_report_record, save_condensed, save_dataset, write_report)
from graphcondense.errors import DatasetError
from graphcondense.graph import SparseGraph, graph_stats

DATA = os.path.join(os.path.dirname(__file__), "..", "data")


def path_graph():
    a = sp.csr_matrix(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float))
    x = np.array([[0.1, 1 / 3], [2.5, -7.0], [1e-300, 4.0]])
    return SparseGraph(a, x, np.array([0, 1, 0]), np.array([1, 1, 0], bool),
                       np.array([0, 0, 1], bool), np.array([0, 0, 0], bool), name="path")


def test_roundtrip_three_node_path(tmp_path):
    g = path_graph()
    save_dataset(g, str(tmp_path))
    h = load_dataset(str(tmp_path))
    assert (h.adj != g.adj).nnz == 0
    assert np.array_equal(h.features, g.features)
    assert np.array_equal(h.labels, g.labels)
    for m in ("train_mask", "val_mask", "test_mask"):
        assert np.array_equal(getattr(h, m), getattr(g, m))
    assert open(tmp_path / "edges.tsv").read() == "0\t1\n1\t2\n"


def _corrupt(tmp_path, fname, text):
    save_dataset(path_graph(), str(tmp_path))
    with open(tmp_path / fname, "w") as f:
        f.write(text)
    with pytest.raises(DatasetError) as e:
        load_dataset(str(tmp_path))
    return e.value


def test_edge_index_out_of_range(tmp_path):
    err = _corrupt(tmp_path, "edges.tsv", "0\t1\n1\t3\n")
    assert err.code == "index_out_of_range" and err.line == 2
    assert err.exit_code == 2


def test_error_codes_are_distinct(tmp_path):
    assert _corrupt(tmp_path / "a", "edges.tsv", "0\t1\n").code == "count_mismatch"
    assert _corrupt(tmp_path / "b", "labels.txt", "0\n1\n").code == "count_mismatch"
    assert _corrupt(tmp_path / "c", "labels.txt", "0\n5\n0\n").code == "label_out_of_range"
    assert _corrupt(tmp_path / "d", "edges.tsv", "0\tx\n1\t2\n").code == "parse_error"
    assert _corrupt(tmp_path / "e", "splits.txt", "0 1\n2\n7\n").code == "index_out_of_range"
    save_dataset(path_graph(), str(tmp_path / "f"))
    os.remove(tmp_path / "f" / "labels.txt")
    with pytest.raises(DatasetError) as e:
        load_dataset(str(tmp_path / "f"))
    assert e.value.code == "missing_file"


def test_linqs_import_coalesces_citations(tmp_path):
    (tmp_path / "t.content").write_text("p1 1 0 A\np2 0 1 B\np3 1 1 A\n")
    # a reciprocal pair, a repeat, a self citation and an unknown paper
    (tmp_path / "t.cites").write_text("p1 p2\np2 p1\np1 p2\np3 p3\np3 p1\np9 p1\n")
    g = import_linqs(str(tmp_path / "t.content"), str(tmp_path / "t.cites"), per_class=1, n_val=1, n_test=0)
    assert g.num_edges() == 2 and g.adj.nnz == 4
    assert g.labels.tolist() == [0, 1, 0]


@pytest.mark.skipif(not os.path.isdir(os.path.join(DATA, "cora")), reason="bundled data missing")
def test_cora_fixture_counts():
    g = load_dataset(os.path.join(DATA, "cora"))
    assert (g.n, g.num_features, g.num_classes) == (2708, 1433, 7)
    # the 5429 raw citation records contain reciprocal and repeated pairs
    assert g.num_edges() == 5278 and g.adj.nnz == 10556
    assert g.is_symmetric()
    assert (g.train_mask.sum(), g.val_mask.sum(), g.test_mask.sum()) == (140, 500, 1000)
    assert np.bincount(g.labels[g.train_idx]).tolist() == [20] * 7


def finalized(seed=0, n=20, d=5):
    g = gen_synthetic(40, 2, 0.4, 0.05, d, seed=seed)
    cond = init_condensed(g, CondenseConfig(nodes=n, gphi_hidden=8, seed=seed))
    return finalize(cond, delta=0.3)


def test_condensed_roundtrip_bytes(tmp_path):
    cond = finalized()
    save_condensed(cond, str(tmp_path / "a"))
    back = load_condensed(str(tmp_path / "a"))
    assert np.array_equal(back.features, cond.features)
    assert np.array_equal(back.adj, cond.adj)
    assert np.array_equal(back.labels, cond.labels)
    save_condensed(back, str(tmp_path / "b"))
    for f in ("manifest.json", "features.csv", "adjacency.csv", "labels.txt"):
        assert filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False), f


def test_condensed_manifest_records_delta(tmp_path):
    cond = finalized()
    save_condensed(cond, str(tmp_path))
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["delta"] == 0.3
    a = load_condensed(str(tmp_path)).adj
    assert np.all((a == 0) | (a > 0.3))


def test_condensed_cora_shape(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.random((70, 70))
    a = (a + a.T) / 2
    cond = CondensedGraph(rng.random((70, 1433)), np.arange(70) % 7, 7, "GCOND", 0.05, adj=a, meta={"seed": 0})
    save_condensed(cond, str(tmp_path))
    back = load_condensed(str(tmp_path))
    assert back.features.shape == (70, 1433) and back.adj.shape == (70, 70)


def test_condensed_asymmetric_rejected(tmp_path):
    save_condensed(finalized(), str(tmp_path))
    rows = (tmp_path / "adjacency.csv").read_text().splitlines()
    first = rows[0].split(",")
    first[1] = "0.123"
    rows[0] = ",".join(first)
    (tmp_path / "adjacency.csv").write_text("\n".join(rows) + "\n")
    with pytest.raises(DatasetError) as e:
        load_condensed(str(tmp_path))
    assert e.value.code == "asymmetric"


def test_synthetic_perfect_blocks():
    g = gen_synthetic(40, 2, 1.0, 0.0, 3, seed=1)
    assert graph_stats(g.adj, g.labels)["homophily"] == 1.0
    coo = g.adj.tocoo()
    assert np.all(g.labels[coo.row] == g.labels[coo.col])


def test_synthetic_homophily():
    # expected same-class edges 2 * C(50, 2) * 0.3 = 735 and cross-class 2500 * 0.02 = 50,
    # so homophily concentrates near 735 / 785 = 0.936
    for seed in range(5):
        g = gen_synthetic(100, 2, 0.3, 0.02, 4, seed=seed)
        assert graph_stats(g.adj, g.labels)["homophily"] > 0.8


def test_synthetic_files_byte_identical(tmp_path):
    for sub in ("a", "b"):
        save_dataset(gen_synthetic(50, 3, 0.2, 0.02, 4, seed=7), str(tmp_path / sub), compress=True)
    for f in ("edges.tsv", "features.csv.gz", "labels.txt", "splits.txt", "meta.json"):
        assert filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False), f


def test_synthetic_every_class_trains():
    g = gen_synthetic(12, 4, 0.5, 0.1, 2, seed=3, split=(0.0, 0.2))
    assert sorted(set(g.labels[g.train_idx].tolist())) == [0, 1, 2, 3]


def test_report_record_roundtrip(tmp_path):
    text = write_report(str(tmp_path / "r.txt"), [("a", "x\n")], {"k": 1, "s": "a=b"})
    assert (tmp_path / "r.txt").read_text() == text
    assert read_report_record(text) == {"k": "1", "s": "a=b"}
