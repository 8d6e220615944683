import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kagrmn_dsg import numerics as nx
from kagrmn_dsg.dsgnet import DsgConfig, DsgNet, fuse, pgcn_layer, relational_mha
from kagrmn_dsg.numerics import ParameterStore, ShapeError, Tensor
from kagrmn_dsg.pipeline.gradcheck import check_tensors
from kagrmn_dsg.syntaxgraph import DenseGraph, SparseGraph
from oracles import pgcn_dense, relational_mha_dense

F64 = np.float64


def t64(x):
    return Tensor(np.asarray(x, dtype=F64), dtype=F64)


def random_graph(rng, n):
    """Random undirected simple graph (not necessarily a tree) on n nodes."""
    adj = [set() for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.4:
                adj[i].add(j)
                adj[j].add(i)
    aspect = int(rng.integers(n))
    return SparseGraph(n, tuple(tuple(sorted(a)) for a in adj), aspect)


def random_heads(rng, count, d, d_r):
    return [{"W1": rng.normal(size=(d, d)), "W2": rng.normal(size=(d_r, d_r)), "b1": rng.normal(size=d_r),
             "W3": rng.normal(size=(d_r, 1)), "b2": rng.normal(size=1)} for _ in range(count)]


def as_tensors(heads):
    return [{k: t64(v) for k, v in h.items()} for h in heads]


def test_pgcn_path_graph_hand_example():
    g = SparseGraph(3, ((1,), (0, 2), (1,)), 1)
    H = np.eye(3)
    out = pgcn_layer(t64(H), g, np.ones(3), t64(np.eye(3)), t64(np.zeros(3)))
    np.testing.assert_allclose(out.data[1], [1 / 3, 1 / 3, 1 / 3])


def test_pgcn_isolated_node():
    g = SparseGraph(2, ((), ()), 0)
    rng = np.random.default_rng(0)
    H, W, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 3)), rng.normal(size=3)
    w = np.array([1.0, 0.25])
    out = pgcn_layer(t64(H), g, w, t64(W), t64(b))
    np.testing.assert_allclose(out.data[1], (0.25 * H[1]) @ W + b, atol=1e-12)


def test_pgcn_rejects_bad_inputs():
    g = SparseGraph(2, ((1,), (0,)), 0)
    with pytest.raises(ShapeError):
        pgcn_layer(t64(np.zeros((3, 2))), g, np.ones(2), t64(np.eye(2)), t64(np.zeros(2)))
    bad = SparseGraph(2, ((5,), (0,)), 0)
    with pytest.raises(IndexError):
        pgcn_layer(t64(np.zeros((2, 2))), bad, np.ones(2), t64(np.eye(2)), t64(np.zeros(2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_pgcn_matches_dense_oracle(seed, n):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    H, W, b, w = rng.normal(size=(n, 4)), rng.normal(size=(4, 4)), rng.normal(size=4), rng.uniform(0.1, 1, n)
    out = pgcn_layer(t64(H), g, w, t64(W), t64(b))
    assert np.max(np.abs(out.data - pgcn_dense(H, g.adjacency, w, W, b))) <= 1e-9


def _star(rng, n, num_rel):
    aspect = int(rng.integers(n))
    rel = [int(rng.integers(num_rel)) for _ in range(n)]
    rel[aspect] = -1
    return DenseGraph(aspect, tuple(rel), tuple("" for _ in rel))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 3))
def test_relational_mha_matches_dense_oracle(seed, n, n_heads):
    rng = np.random.default_rng(seed)
    g = _star(rng, n, 5)
    H, emb = rng.normal(size=(n, 4)), rng.normal(size=(5, 3))
    heads = random_heads(rng, n_heads, 4, 3)
    out = relational_mha(t64(H), g, t64(emb), as_tensors(heads))
    expected = relational_mha_dense(H, g.aspect_node, g.rel_ids, emb, heads)
    assert np.max(np.abs(out.data - expected)) <= 1e-9


def test_relational_mha_identical_relations_give_uniform_weights():
    rng = np.random.default_rng(1)
    g = DenseGraph(0, (-1, 2, 2, 2), ("", "x", "x", "x"))
    H, emb = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))
    heads = random_heads(rng, 2, 3, 2)
    betas = []
    out = relational_mha(t64(H), g, t64(emb), as_tensors(heads), betas)
    for b in betas:
        np.testing.assert_allclose(b.data, 1 / 3)
    expected_a = np.mean([H[1:].mean(axis=0) @ h["W1"] for h in heads], axis=0)
    np.testing.assert_allclose(out.data[0], expected_a, atol=1e-12)
    expected_leaf = np.mean([H[0] @ h["W1"] for h in heads], axis=0)
    np.testing.assert_allclose(out.data[2], expected_leaf, atol=1e-12)


def test_relational_mha_errors_and_lone_aspect():
    rng = np.random.default_rng(2)
    heads = as_tensors(random_heads(rng, 1, 3, 2))
    emb = t64(rng.normal(size=(3, 2)))
    with pytest.raises(IndexError):
        relational_mha(t64(np.zeros((2, 3))), DenseGraph(0, (-1, 7), ("", "?")), emb, heads)
    out = relational_mha(t64(np.ones((1, 3))), DenseGraph(0, (-1,), ("",)), emb, heads)
    assert np.all(out.data == 0)


def test_relational_mha_invariant_to_context_permutation():
    rng = np.random.default_rng(3)
    n = 6
    g = _star(rng, n, 4)
    H, emb = rng.normal(size=(n, 4)), rng.normal(size=(4, 3))
    heads = as_tensors(random_heads(rng, 2, 4, 3))
    a = g.aspect_node
    ctx = [j for j in range(n) if j != a]
    shuffled = list(rng.permutation(ctx))
    perm = list(range(n))
    for src, dst in zip(ctx, shuffled):
        perm[dst] = src  # new node dst holds old node src
    g2 = DenseGraph(a, tuple(g.rel_ids[p] for p in perm), g.labels)
    out1 = relational_mha(t64(H), g, t64(emb), heads)
    out2 = relational_mha(t64(H[perm]), g2, t64(emb), heads)
    np.testing.assert_allclose(out1.data[a], out2.data[a], atol=1e-12)


def test_pgcn_equivariant_under_node_permutation():
    rng = np.random.default_rng(4)
    n = 7
    g = random_graph(rng, n)
    H, W, b, w = rng.normal(size=(n, 3)), rng.normal(size=(3, 3)), rng.normal(size=3), rng.uniform(0.1, 1, n)
    a = g.aspect_node
    ctx = [j for j in range(n) if j != a]
    perm = np.arange(n)
    perm[ctx] = rng.permutation(ctx)  # new index i holds old node perm[i]
    inv = np.argsort(perm)
    adj2 = tuple(tuple(sorted(int(inv[j]) for j in g.adjacency[perm[i]])) for i in range(n))
    g2 = SparseGraph(n, adj2, a)
    out1 = pgcn_layer(t64(H), g, w, t64(W), t64(b)).data
    out2 = pgcn_layer(t64(H[perm]), g2, w[perm], t64(W), t64(b)).data
    np.testing.assert_allclose(out2, out1[perm], atol=1e-12)


def test_fuse_zero_weights_and_shapes():
    rng = np.random.default_rng(5)
    x, y = t64(rng.normal(size=4)), t64(rng.normal(size=4))
    b2 = rng.normal(size=4)
    out = fuse(x, y, t64(np.zeros((8, 6))), t64(np.zeros(6)), t64(np.zeros((6, 4))), t64(b2))
    np.testing.assert_array_equal(out.data, b2)
    with pytest.raises(ShapeError):
        fuse(x, t64(np.zeros(3)), t64(np.zeros((8, 6))), t64(np.zeros(6)), t64(np.zeros((6, 4))), t64(b2))


def test_fuse_gradient_reaches_both_inputs():
    with nx.verification_mode():
        rng = np.random.default_rng(6)
        x, y = (Tensor(rng.normal(size=4), requires_grad=True) for _ in range(2))
        W1, b1, W2, b2 = t64(rng.normal(size=(8, 8))), t64(rng.normal(size=8)), t64(rng.normal(size=(8, 4))), t64(np.zeros(4))
        errs = check_tensors(lambda: nx.tensor_sum(fuse(x, y, W1, b1, W2, b2)), [x, y])
    assert np.any(x.grad != 0) and np.any(y.grad != 0)
    assert max(errs.values()) <= 1e-5


def make_net(seed=0, d=4, **kw):
    store = ParameterStore(seed=seed)
    with nx.precision(F64):
        net = DsgNet(DsgConfig(d_e=d, gcn_layers=kw.pop("gcn_layers", 2), d_r=3, num_relations=6, **kw), store)
    rng = np.random.default_rng(seed)
    for _, t in store.items():
        t.data = rng.normal(0, 0.5, size=t.shape)
    return net, store


def _instance(rng, n=5):
    sparse = random_graph(rng, n)
    rel = [int(rng.integers(6)) for _ in range(n)]
    rel[sparse.aspect_node] = -1
    dense = DenseGraph(sparse.aspect_node, tuple(rel), tuple("" for _ in rel))
    return t64(rng.normal(size=(n, 4))), sparse, dense, rng.uniform(0.2, 1, n)


def test_one_layer_composition():
    rng = np.random.default_rng(7)
    net, p = make_net(gcn_layers=1)
    M, sparse, dense, w = _instance(rng)
    R, fused = net.run(M, sparse, dense, w)
    gcn = pgcn_dense(M.data, sparse.adjacency, w, p["dsgnet.pgcn0.W"].data, p["dsgnet.pgcn0.b"].data)
    heads = [{k: p[f"dsgnet.rmha{m}.{k}"].data for k in ("W1", "W2", "b1", "W3", "b2")} for m in range(2)]
    rel = relational_mha_dense(M.data, dense.aspect_node, dense.rel_ids, p["dsgnet.rel_emb"].data, heads)
    x = np.concatenate([gcn, rel], axis=1)
    hidden = np.maximum(x @ p["dsgnet.fuse.W1"].data + p["dsgnet.fuse.b1"].data, 0)
    expected = hidden @ p["dsgnet.fuse.W2"].data + p["dsgnet.fuse.b2"].data
    np.testing.assert_allclose(fused.data, expected, atol=1e-9)
    np.testing.assert_allclose(R.data, expected[sparse.aspect_node], atol=1e-9)
    assert R.shape == (4,)


def test_branch_ablations_change_output():
    rng = np.random.default_rng(8)
    M, sparse, dense, w = _instance(rng)
    full = make_net()[0].run(M, sparse, dense, w)[0].data
    no_rel, s4 = make_net(use_relational=False)
    no_gcn, s5 = make_net(use_pgcn=False)
    assert "dsgnet.rel_emb" not in s4 and "dsgnet.pgcn0.W" not in s5
    assert not np.allclose(full, no_rel.run(M, sparse, dense, w)[0].data)
    assert not np.allclose(full, no_gcn.run(M, sparse, dense, w)[0].data)


def test_run_rejects_inconsistent_sizes():
    rng = np.random.default_rng(9)
    net, _ = make_net()
    M, sparse, dense, w = _instance(rng)
    with pytest.raises(ShapeError):
        net.run(M, sparse, dense, w[:-1])
    with pytest.raises(ValueError):
        DsgConfig(gcn_layers=0)


def test_all_parameters_pass_finite_differences():
    with nx.verification_mode():
        rng = np.random.default_rng(10)
        net, store = make_net()
        M, sparse, dense, w = _instance(rng, 6)
        probe = t64(rng.normal(size=(6, 4)))
        errs = check_tensors(lambda: nx.tensor_sum(net.run(M, sparse, dense, w)[1] * probe), store.tensors(),
                             samples_per_tensor=6)
    assert max(errs.values()) <= 1e-4, errs
