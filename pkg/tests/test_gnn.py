import numpy as np
import pytest

from eventformer.events import ArgRole
from eventformer.gnn import GNN_KINDS, Gnn, GnnConfig, GraphStructure, qkv
from eventformer.numeric import Parameter, Tensor, grad_check

from oracles import gat_loop, gcn_loop, gin_loop

# two event graphs: trigger 0 with args 1, 2; trigger 3 with arg 4
EDGES = [(0, 1, "subj"), (0, 2, "obj"), (3, 4, "location")]
N = 5
ROLE_IDX = [(u, v, ArgRole(r).index) for u, v, r in EDGES]


def structure():
    return GraphStructure.from_edges(N, EDGES)


def features(d=6, seed=0):
    return np.random.default_rng(seed).standard_normal((1, N, d))


def net(kind, d=6, out=6, heads=2, roles=True, layers=1, seed=0):
    cfg = GnnConfig(kind=kind, layers=layers, heads=heads, in_dim=d, out_dim=out, use_role_embeddings=roles)
    return Gnn(cfg, np.random.default_rng(seed))


@pytest.mark.parametrize("roles", [True, False])
def test_gcn_matches_loop(roles):
    g = net("gcn", roles=roles)
    layer = g.layers[0]
    x = features()
    got = g(Tensor(x), structure()).data[0]
    want = gcn_loop(x[0], ROLE_IDX, N, layer.lin.w.data, layer.lin.b.data,
                    layer.role.data if roles else None, 5)
    np.testing.assert_allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("roles", [True, False])
def test_gin_matches_loop(roles):
    g = net("gin", roles=roles)
    layer = g.layers[0]
    layer.eps.data = np.array(0.3)
    x = features()
    got = g(Tensor(x), structure()).data[0]
    want = gin_loop(x[0], ROLE_IDX, N, 0.3, layer.fc1.w.data, layer.fc1.b.data, layer.fc2.w.data,
                    layer.fc2.b.data, layer.role.data if roles else None)
    np.testing.assert_allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("roles", [True, False])
def test_gat_matches_loop(roles):
    g = net("gat", roles=roles)
    layer = g.layers[0]
    x = features()
    got = g(Tensor(x), structure()).data[0]
    want = gat_loop(x[0], ROLE_IDX, N, layer.w.data, layer.att_src.data, layer.att_dst.data,
                    layer.bias.data, 2, layer.role.data if roles else None)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_gat_attention_rows_are_local_distributions():
    layer = net("gat").layers[0]
    alpha, _ = layer.attention(Tensor(features()), structure())
    a = alpha.data[0]
    np.testing.assert_allclose(a.sum(-1), 1.0, atol=1e-12)
    assert np.all(a[:, 0, 3:] == 0.0)  # node 0 sees only its own graph
    assert np.all(a[:, 4, :3] == 0.0)


def test_linear_kind_ignores_edges():
    g = net("linear")
    x = Tensor(features())
    empty = GraphStructure.from_edges(N, [])
    np.testing.assert_array_equal(g(x, structure()).data, g(x, empty).data)


@pytest.mark.parametrize("kind", GNN_KINDS)
def test_no_messages_cross_graphs(kind):
    g = net(kind, layers=2)
    x = features()
    y = x.copy()
    y[0, 4] += 5.0  # perturb a node of the second graph
    a = g(Tensor(x), structure()).data[0]
    b = g(Tensor(y), structure()).data[0]
    np.testing.assert_array_equal(a[:3], b[:3])
    assert not np.allclose(a[3:], b[3:])


@pytest.mark.parametrize("kind", GNN_KINDS)
def test_gradients(kind):
    g = net(kind, layers=2)
    x = Parameter(features(seed=1))
    w = Tensor(np.random.default_rng(2).standard_normal((1, N, 6)))
    report = grad_check(lambda: (g(x, structure()) * w).sum(), [*g.named_parameters(), ("x", x)])
    assert report.passed, report.summary()


def test_qkv_networks_are_independent_and_checked():
    k, q, v = (net("gin", seed=s) for s in (1, 2, 3))
    x = Tensor(features())
    ko, qo, vo = qkv(x, structure(), k, q, v)
    assert not np.allclose(ko.data, qo.data)
    with pytest.raises(ValueError, match="output width"):
        qkv(x, structure(), k, q, net("gin", out=4, heads=2))
    with pytest.raises(ValueError, match="feature width"):
        qkv(Tensor(features(d=4)), structure(), k, q, v)


def test_config_validation():
    with pytest.raises(ValueError):
        GnnConfig(kind="sage")
    with pytest.raises(ValueError):
        GnnConfig(layers=0)
    with pytest.raises(ValueError):
        GnnConfig(heads=5, out_dim=64)
