import numpy as np
import pytest
import scipy.sparse as sp

from graphcondense import ndtape as nd
from graphcondense.errors import CapabilityError, DivergenceError, ValidationError
from graphcondense.graph import normalized_adjacency
from graphcondense.models import (ModelParams, ModelSpec, accuracy, forward, init_params,
                                  inner_param_grads, predict, prepare_adj, train)
from graphcondense.ndtape import Tape, Tensor


def random_instance(n=9, d=5, C=3, seed=0, p=0.4):
    rng = np.random.default_rng(seed)
    a = np.triu(rng.random((n, n)) < p, 1).astype(float)
    a = a + a.T
    return normalized_adjacency(a), rng.normal(size=(n, d)), rng.integers(0, C, n)


def test_init_deterministic_and_bounded():
    spec = ModelSpec("GCN", layers=2, hidden=16)
    p1, p2 = init_params(spec, 4, 3, 7), init_params(spec, 4, 3, 7)
    assert all(np.array_equal(a, b) for a, b in zip(p1.arrays(), p2.arrays()))
    assert all(np.all(b == 0) for b in p1.biases)
    big = init_params(ModelSpec("MLP", layers=1), 4, 2500, 1)
    assert big.weights[0].size == 10**4
    assert np.abs(big.weights[0]).max() <= 0.5


def test_spec_validation():
    with pytest.raises(ValidationError):
        ModelSpec("GCN", layers=0)
    with pytest.raises(ValidationError):
        ModelSpec("GCN", dropout=1.0)
    with pytest.raises(ValidationError):
        ModelSpec("GAT")


def test_mlp_ignores_adjacency():
    a1, x, _ = random_instance(seed=1)
    a2, _, _ = random_instance(seed=2)
    spec = ModelSpec("MLP", hidden=8)
    p = init_params(spec, 5, 3, 0)
    assert np.array_equal(forward(spec, p, a1, x).data, forward(spec, p, a2, x).data)


def test_sgc_identity_is_linear_map():
    spec = ModelSpec("SGC", layers=1, k_prop=1)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 3))
    p = init_params(spec, 3, 2, 0)
    p.biases[0][:] = [[0.5, -1.0]]
    out = forward(spec, p, sp.identity(4, format="csr"), x).data
    assert np.allclose(out, x @ p.weights[0] + p.biases[0])


def test_gcn_two_clique_by_hand():
    spec = ModelSpec("GCN", layers=1)
    p = ModelParams([np.array([[1.0, -1.0], [0.5, 2.0]])], [np.array([[0.1, -0.2]])])
    a = normalized_adjacency(sp.csr_matrix([[0, 1.0], [1.0, 0]]))
    out = forward(spec, p, a, np.array([[1.0, 2.0], [3.0, 4.0]])).data
    assert np.allclose(out, [[3.6, 3.8], [3.6, 3.8]])


def test_sgc_equals_gcn_single_layer():
    a, x, _ = random_instance()
    p = init_params(ModelSpec("GCN", layers=1), 5, 3, 4)
    s = forward(ModelSpec("SGC", layers=1, k_prop=1), p, a, x).data
    g = forward(ModelSpec("GCN", layers=1), p, a, x).data
    assert np.allclose(s, g, atol=1e-14)


def test_appnp_alpha_one_is_mlp():
    a, x, _ = random_instance()
    p = init_params(ModelSpec("MLP", hidden=8), 5, 3, 2)
    out = forward(ModelSpec("APPNP", hidden=8, alpha=1.0, k_prop=5), p, a, x).data
    ref = forward(ModelSpec("MLP", hidden=8), p, a, x).data
    assert np.allclose(out, ref, atol=1e-14)


def test_sage_runs_and_uses_neighbours():
    a_raw = sp.csr_matrix(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float))
    spec = ModelSpec("SAGE_mean", layers=1)
    p = init_params(spec, 2, 2, 0)
    x = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    out = forward(spec, p, prepare_adj(spec, a_raw), x).data
    w_self, w_nb = p.weights[0][:2], p.weights[0][2:]
    mean = np.array([[0, 1], [1.5, 1], [0, 1]], float)
    assert np.allclose(out, x @ w_self + mean @ w_nb)


def test_dropout_is_seeded():
    a, x, _ = random_instance()
    spec = ModelSpec("GCN", hidden=8, dropout=0.5)
    p = init_params(spec, 5, 3, 0)
    o1 = forward(spec, p, a, x, dropout_rng=np.random.default_rng(3)).data
    o2 = forward(spec, p, a, x, dropout_rng=np.random.default_rng(3)).data
    assert np.array_equal(o1, o2)
    assert not np.array_equal(o1, forward(spec, p, a, x).data)


def test_train_separable_reaches_full_accuracy():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 20)
    x = rng.normal(size=(40, 2)) * 0.3 + np.where(y[:, None] == 1, 2.0, -2.0)
    spec = ModelSpec("MLP", hidden=16, weight_decay=0.0)
    p, _ = train(spec, init_params(spec, 2, 2, 0), None, x, y, np.arange(40), epochs=200, lr=0.01)
    assert accuracy(predict(spec, p, None, x), y, np.arange(40)) == 1.0


def test_train_zero_epochs_is_identity():
    a, x, y = random_instance()
    spec = ModelSpec("GCN", hidden=8)
    p0 = init_params(spec, 5, 3, 0)
    p, curve = train(spec, p0, a, x, y, np.arange(9), epochs=0)
    assert all(np.array_equal(u, v) for u, v in zip(p.arrays(), p0.arrays()))
    assert curve == []


def test_train_best_validation_checkpoint():
    a, x, y = random_instance(n=30, seed=3)
    spec = ModelSpec("GCN", hidden=8)
    p, curve = train(spec, init_params(spec, 5, 3, 0), a, x, y, np.arange(15), epochs=40,
                     val_idx=np.arange(15, 30))
    assert len(curve) == 41
    assert accuracy(predict(spec, p, a, x), y, np.arange(15, 30)) == pytest.approx(max(curve))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence():
    a, x, y = random_instance()
    spec = ModelSpec("GCN", hidden=8, weight_decay=0.0)
    with pytest.raises(DivergenceError):
        train(spec, init_params(spec, 5, 3, 0), a, x * np.inf, y, np.arange(9), epochs=3)


def _ad_grads(spec, p, a, x, y, idx):
    with Tape() as tape:
        leaves = [tape.leaf(v) for v in p.arrays()]
        logits = forward(spec, leaves, a, x)
        loss = nd.softmax_cross_entropy(nd.take_rows(logits, idx), y)
    return tape.gradient(loss, leaves)


@pytest.mark.parametrize("arch", ["SGC", "GCN"])
@pytest.mark.parametrize("layers", [1, 2])
@pytest.mark.parametrize("seed", range(4))
def test_inner_grads_match_autodiff(arch, layers, seed):
    a, x, _ = random_instance(n=11, seed=seed)
    rng = np.random.default_rng(seed + 100)
    idx = np.sort(rng.choice(11, size=6, replace=False))
    y = rng.integers(0, 3, 6)
    spec = ModelSpec(arch, layers=layers, hidden=7)
    p = init_params(spec, 5, 3, seed)
    for b in p.biases:
        b += rng.normal(size=b.shape) * 0.1
    ref = _ad_grads(spec, p, a, x, y, idx)
    got = inner_param_grads(spec, p, Tensor(a), Tensor(x), y, idx)
    for r, g in zip(ref, got):
        assert np.max(np.abs(r - g.data)) <= 1e-10 * max(np.max(np.abs(r)), 1e-300)


def test_inner_grads_uniform_closed_form():
    spec = ModelSpec("SGC", layers=1, k_prop=1)
    p = ModelParams([np.zeros((4, 3))], [np.zeros((1, 3))])
    y = np.array([0, 2, 1, 1])
    (gw, gb) = inner_param_grads(spec, p, sp.identity(4, format="csr"), Tensor(np.eye(4)), y)
    expect = (np.full((4, 3), 1 / 3) - nd.onehot(y, 3)) / 4
    assert np.allclose(gw.data, expect)
    assert np.allclose(gb.data, expect.sum(axis=0, keepdims=True))


def test_inner_grads_capability():
    a, x, y = random_instance()
    with pytest.raises(CapabilityError):
        inner_param_grads(ModelSpec("APPNP"), init_params(ModelSpec("APPNP"), 5, 3, 0), a, x, y)
    with pytest.raises(CapabilityError):
        inner_param_grads(ModelSpec("GCN", layers=3), init_params(ModelSpec("GCN", layers=3), 5, 3, 0), a, x, y)
