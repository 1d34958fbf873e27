import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from graphcondense import ndtape as nd
from graphcondense.condense import (CondenseConfig, allocate_counts, condense,
                                    finalize, gphi_forward, init_condensed, init_phi, match_distance,
                                    matching_loss)
from graphcondense.dataio import gen_synthetic
from graphcondense.errors import ConfigError, InfeasibleError
from graphcondense.models import init_params
from graphcondense.ndtape import Tensor


@pytest.fixture(scope="module")
def sbm():
    return gen_synthetic(20, 2, 0.5, 0.1, 5, seed=0)


def small_config(**kw):
    base = dict(nodes=6, hidden=8, gphi_hidden=8, outer=2, epochs=6, tau1=2, tau2=1, tau_theta=3,
                seed=1)
    base.update(kw)
    return CondenseConfig(**base)


def test_match_distance_examples():
    g = np.array([[1.0, -2.0], [0.5, 3.0]])
    assert match_distance(Tensor(g), g).item() == pytest.approx(0.0, abs=1e-15)
    assert match_distance(Tensor(-g), g).item() == pytest.approx(4.0)
    d = match_distance(Tensor([[1.0, 0.0], [0.0, 1.0]]), np.array([[1.0, 1.0], [0.0, 0.0]]))
    assert d.item() == pytest.approx(1.0)


def test_match_distance_bias_is_one_column():
    b = np.array([[1.0, 2.0, 3.0]])
    assert match_distance(Tensor(-b), b).item() == pytest.approx(2.0)


def test_match_distance_zero_columns():
    z = np.zeros((3, 2))
    assert match_distance(Tensor(z), z).item() == 0.0
    one = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    assert match_distance(Tensor(one), z).item() == 1.0


def test_match_distance_shape_error():
    with pytest.raises(nd.DimensionError):
        match_distance(Tensor(np.ones((2, 2))), np.ones((3, 2)))


@settings(max_examples=40, deadline=None)
@given(a=arrays(np.float64, (4, 3), elements=st.floats(-5, 5)),
       b=arrays(np.float64, (4, 3), elements=st.floats(-5, 5)))
def test_match_distance_nonnegative(a, b):
    assert match_distance(Tensor(a), b).item() >= -1e-12


@settings(max_examples=40, deadline=None)
@given(a=arrays(np.float64, (4, 3), elements=st.floats(-5, 5)),
       s=arrays(np.float64, (1, 3), elements=st.floats(0.1, 10)))
def test_match_distance_zero_for_positive_rescaling(a, s):
    a = np.where(np.abs(a).sum(axis=0, keepdims=True) < 1e-3, 1.0, a)
    assert match_distance(Tensor(a * s), a).item() == pytest.approx(0.0, abs=1e-12)


def test_gphi_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, 4))
    phi = init_phi(4, 3, 16, seed=3)
    a = gphi_forward(phi, x).data
    assert np.array_equal(a, a.T)
    assert np.all((a > 0) & (a < 1))


def test_gphi_zero_weights_give_half():
    phi = [np.zeros_like(p) for p in init_phi(4, 3, 8, seed=0)]
    a = gphi_forward(phi, np.random.default_rng(0).normal(size=(5, 4)), norm=False).data
    assert np.all(a == 0.5)


def test_gphi_gradient_wrt_features():
    phi = init_phi(3, 3, 6, seed=2)
    x0 = np.random.default_rng(1).normal(size=(4, 3))
    assert nd.grad_check(lambda x: nd.sum(gphi_forward(phi, x)), x0) < 1e-6
    assert nd.grad_check(lambda x: nd.sum(gphi_forward(phi, x, norm=False)), x0) < 1e-6


def test_allocate_counts_examples():
    assert allocate_counts([90, 10], 10).tolist() == [9, 1]
    assert allocate_counts([20] * 7, 140).tolist() == [20] * 7
    assert allocate_counts([20] * 7, 70).tolist() == [10] * 7
    assert allocate_counts([98, 1, 1], 5).tolist() == [3, 1, 1]
    with pytest.raises(InfeasibleError):
        allocate_counts([5, 5, 5], 2)


@settings(max_examples=60, deadline=None)
@given(counts=st.lists(st.integers(1, 200), min_size=1, max_size=8), extra=st.integers(0, 300))
def test_allocate_counts_properties(counts, extra):
    total = len(counts) + extra
    alloc = allocate_counts(counts, total)
    assert alloc.sum() == total
    assert np.all(alloc >= 1)


def test_init_condensed_rows_are_class_members(sbm):
    cfg = small_config(nodes=8)
    cond = init_condensed(sbm, cfg)
    assert np.bincount(cond.labels).tolist() == allocate_counts(sbm.class_counts(), 8).tolist()
    for row, y in zip(cond.features, cond.labels):
        same = np.flatnonzero(sbm.train_mask & (sbm.labels == y))
        assert np.any(np.all(sbm.features[same] == row, axis=1))


def test_init_condensed_full_size(sbm):
    n_train = int(sbm.train_mask.sum())
    cond = init_condensed(sbm, small_config(nodes=n_train))
    assert np.bincount(cond.labels).tolist() == sbm.class_counts().tolist()


def test_config_validation():
    with pytest.raises(ConfigError):
        CondenseConfig(ratio=0.1, nodes=5).validate()
    with pytest.raises(ConfigError):
        CondenseConfig().validate()
    with pytest.raises(ConfigError):
        CondenseConfig(nodes=5, arch="APPNP").validate()
    with pytest.raises(ConfigError):
        CondenseConfig(nodes=5, tau1=0).validate()
    CondenseConfig(nodes=5, tau2=0).validate()


@pytest.mark.parametrize("arch,layers", [("SGC", 1), ("SGC", 2), ("GCN", 1), ("GCN", 2)])
def test_matching_gradient_finite_differences(sbm, arch, layers):
    cfg = small_config(arch=arch, layers=layers)
    cond = init_condensed(sbm, cfg)
    theta = init_params(cfg.model_spec(), 5, 2, 3)
    _, gx, gphi = matching_loss(sbm, cond, theta, cfg)
    h = 1e-5
    worst = 0.0
    for arr, ga in [(cond.features, gx)] + list(zip(cond.phi, gphi)):
        flat, gf = arr.reshape(-1), ga.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = matching_loss(sbm, cond, theta, cfg)[0]
            flat[i] = old - h
            fm = matching_loss(sbm, cond, theta, cfg)[0]
            flat[i] = old
            worst = max(worst, abs((fp - fm) / (2 * h) - gf[i]) / max(1.0, abs(gf[i])))
    assert worst < 1e-4


@pytest.mark.parametrize("variant", ["GCOND", "GCOND_X", "DC_GRAPH"])
def test_parallel_matches_serial(sbm, variant):
    cfg = small_config(layers=2)
    cond = init_condensed(sbm, cfg, variant)
    theta = init_params(cfg.model_spec(), 5, 2, 9)
    s = matching_loss(sbm, cond, theta, cfg, workers=1)
    p = matching_loss(sbm, cond, theta, cfg, workers=3)
    assert abs(s[0] - p[0]) <= 1e-9
    assert np.max(np.abs(s[1] - p[1])) <= 1e-9
    if variant == "GCOND":
        assert max(np.max(np.abs(a - b)) for a, b in zip(s[2], p[2])) <= 1e-9


def test_condense_gcond_x_keeps_phi_absent_and_labels(sbm):
    cfg = small_config()
    cond, trace = condense(sbm, cfg, "GCOND_X")
    assert cond.phi is None
    assert np.array_equal(cond.adj, np.eye(6))
    assert len(trace) == cfg.outer * cfg.epochs
    assert np.array_equal(cond.labels, init_condensed(sbm, cfg, "GCOND_X").labels)


def test_condense_is_deterministic(sbm):
    cfg = small_config()
    a, ta = condense(sbm, cfg, "GCOND")
    b, tb = condense(sbm, cfg, "GCOND")
    assert np.array_equal(ta, tb)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.adj, b.adj)


def test_condense_tau2_zero_never_moves_features(sbm):
    cfg = small_config(tau2=0)
    cond, _ = condense(sbm, cfg, "GCOND")
    assert np.array_equal(cond.features, init_condensed(sbm, cfg).features)
    assert cond.meta["phi_changed"]


def test_joint_schedule_runs(sbm):
    cond, trace = condense(sbm, small_config(schedule="joint"), "GCOND")
    assert np.all(np.isfinite(trace))


def test_condense_reduces_matching_loss(sbm):
    cfg = small_config(outer=1, epochs=60, lr_feat=0.05, lr_phi=0.05, tau_theta=0)
    _, trace = condense(sbm, cfg, "GCOND")
    assert trace[-6:].mean() < trace[:6].mean()


def test_finalize_threshold_and_symmetry(sbm):
    cond = init_condensed(sbm, small_config())
    raw = gphi_forward(cond.phi, cond.features).data
    assert np.array_equal(finalize(cond, delta=0.0).adj, raw)
    assert np.all(finalize(cond, delta=1.0).adj == 0)
    prev = None
    for d in [0.01, 0.05, 0.1, 0.2, 0.4, 0.5, 0.6, 0.8]:
        a = finalize(cond, delta=d).adj
        assert np.array_equal(a, a.T) and a.min() >= 0 and a.max() <= 1
        assert np.all((a == 0) | (a > d))
        nnz = np.count_nonzero(a)
        assert prev is None or nnz <= prev
        prev = nnz


def test_finalize_identity_for_feature_only_variants(sbm):
    cond = init_condensed(sbm, small_config(), "DC_GRAPH")
    assert np.array_equal(finalize(cond).adj, np.eye(6))


def test_keystone_runtime(sbm):
    start = time.time()
    cfg = small_config()
    cond = init_condensed(sbm, cfg)
    theta = init_params(cfg.model_spec(), 5, 2, 3)
    for _ in range(50):
        matching_loss(sbm, cond, theta, cfg)
    assert time.time() - start < 10
