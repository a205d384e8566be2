import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bigsl import autodiff as ad
from bigsl.errors import GraphInvariantError, TooFewPoints, ZeroVectorRow
from bigsl.numerics import Adam, ParameterStore, check_gradients, gradient
from bigsl.structure import (
    BiLevelGraph,
    GslHyperParams,
    GslTransform,
    PrototypeSet,
    build_bilevel_graph,
    hier_matrix,
    hsl_loss,
    kmeans_estep,
    pairwise_adjacency,
    prototype_adjacency,
    rule_bilevel_graph,
    sparsify_mask,
    sparsify_normalize,
    structure_embed,
    wcss,
)
from bigsl.synthetic import gaussian_blobs


def nmi(a, b):
    """Normalized mutual information (arithmetic mean normalisation)."""
    a = np.asarray(a)
    b = np.asarray(b)
    n = len(a)
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    joint = np.zeros((len(ua), len(ub)))
    np.add.at(joint, (ia, ib), 1.0)
    p = joint / n
    pa, pb = p.sum(1), p.sum(0)
    nz = p > 0
    mi = (p[nz] * np.log(p[nz] / np.outer(pa, pb)[nz])).sum()
    ha = -(pa * np.log(pa)).sum()
    hb = -(pb * np.log(pb)).sum()
    return 1.0 if ha + hb == 0 else 2 * mi / (ha + hb)


def random_transform(rng, d1, d2):
    return GslTransform.from_arrays(rng.normal(size=(d2, d1)), rng.normal(size=d2),
                                    rng.normal(size=(d2, d2)), rng.normal(size=d2))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# --- structure embeddings and pairwise adjacency ----------------------------

def test_constant_transform_gives_basis_rows():
    t = GslTransform.from_arrays(np.zeros((3, 2)), np.zeros(3), np.zeros((3, 3)), [2.0, 0, 0])
    Z = structure_embed(np.random.default_rng(0).normal(size=(4, 2)), t).data
    np.testing.assert_array_equal(Z, np.tile([1.0, 0, 0], (4, 1)))


@pytest.mark.parametrize("seed", range(3))
def test_structure_embed_matches_row_formula(seed):
    rng = np.random.default_rng(seed)
    t = random_transform(rng, 2, 2)
    X = rng.normal(size=(5, 2))
    Z = structure_embed(X, t).data
    for i in range(5):
        h = sigmoid(t.W1.data @ X[i] + t.b1.data)
        z = t.W2.data @ h + t.b2.data
        np.testing.assert_allclose(Z[i], z / np.linalg.norm(z), atol=1e-12)


def test_zero_embedding_row_raises():
    t = GslTransform.from_arrays(np.zeros((2, 2)), np.zeros(2), np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(ZeroVectorRow):
        structure_embed(np.ones((3, 2)), t)


def test_pairwise_identical_and_orthogonal():
    np.testing.assert_allclose(pairwise_adjacency(np.tile([0.6, 0.8], (3, 1))).data, np.ones((3, 3)))
    S = pairwise_adjacency(np.eye(2)).data
    assert S[0, 1] == 0 and S[1, 0] == 0


@pytest.mark.parametrize("seed", range(3))
def test_pairwise_is_symmetric(seed):
    S = pairwise_adjacency(np.random.default_rng(seed).normal(size=(6, 4))).data
    assert np.abs(S - S.T).max() <= 1e-12


# --- sparsification ----------------------------------------------------------

def test_sparsify_example_row():
    S = np.array([[1.0, 0.7, 0.2], [0.7, 1.0, 0.2], [0.2, 0.2, 1.0]])
    A = sparsify_normalize(S, 0.5, 2).data
    np.testing.assert_allclose(A[0], [1 / 1.7, 0.7 / 1.7, 0.0], atol=1e-12)
    np.testing.assert_allclose(A[0], [0.5882, 0.4118, 0.0], atol=1e-4)


def test_sparsify_below_epsilon_gives_identity_row():
    S = np.array([[0.0, 0.1, 0.2], [0.1, 1.0, 0.3], [0.2, 0.3, 1.0]])
    A = sparsify_normalize(S, 0.5, 5).data
    np.testing.assert_array_equal(A[0], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(A[1], [0.0, 1.0, 0.0])


def brute_force_top1(S, eps):
    """Row scan: diagonal plus the single largest off-diagonal entry if >= eps."""
    n = len(S)
    keep = np.zeros_like(S, dtype=bool)
    for i in range(n):
        if S[i, i] > 0:
            keep[i, i] = True
        best, arg = -np.inf, -1
        for j in range(n):
            if j != i and S[i, j] > best:
                best, arg = S[i, j], j
        if arg >= 0 and best >= eps and best > 0:
            keep[i, arg] = True
    return keep


@pytest.mark.parametrize("seed", range(5))
def test_top1_matches_row_scan(seed):
    Z = np.random.default_rng(seed).normal(size=(7, 3))
    S = pairwise_adjacency(Z).data
    np.testing.assert_array_equal(sparsify_mask(S, 0.3, 1), brute_force_top1(S, 0.3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 12), st.floats(0.0, 0.9), st.integers(1, 6))
def test_normalized_rows_sum_to_one(seed, n, eps, k):
    S = pairwise_adjacency(np.random.default_rng(seed).normal(size=(n, 3))).data
    A = sparsify_normalize(S, eps, k).data
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-9)
    assert (A >= 0).all()
    off = A.copy()
    np.fill_diagonal(off, 0)
    assert ((off > 0).sum(axis=1) <= k).all()


# --- K-Means E-step ------------------------------------------------------------

def test_kmeans_single_cluster():
    Z = np.random.default_rng(0).normal(size=(9, 3))
    p = kmeans_estep(Z, K=1, rng=np.random.default_rng(0))
    assert (p.assignments == 0).all()
    np.testing.assert_allclose(p.centroids[0], Z.mean(axis=0), atol=1e-12)


def test_kmeans_tie_goes_to_lower_index():
    Z = np.array([[0.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    state = PrototypeSet(np.array([[-1.0, 0.0], [1.0, 0.0]]), np.zeros(3, dtype=np.int64))
    assert kmeans_estep(Z, state).assignments[0] == 0


def test_kmeans_too_few_points():
    with pytest.raises(TooFewPoints):
        kmeans_estep(np.zeros((3, 2)), K=4, rng=np.random.default_rng(0))


@pytest.mark.parametrize("seed", range(5))
def test_two_blobs_match_nearest_centroid_oracle(seed):
    rng = np.random.default_rng(seed)
    Z = np.concatenate([rng.normal(size=(20, 3)) * 0.1 + 3, rng.normal(size=(20, 3)) * 0.1 - 3])
    first = kmeans_estep(Z, K=2, rng=rng)
    second = kmeans_estep(Z, first)
    C = first.centroids
    for i, z in enumerate(Z):
        d = [sum((z[c] - C[k, c]) ** 2 for c in range(3)) for k in range(2)]
        expected = 0 if d[0] <= d[1] else 1
        assert second.assignments[i] == expected
    for k in range(2):
        members = Z[second.assignments == k]
        np.testing.assert_allclose(second.centroids[k], members.mean(axis=0), atol=1e-12)


def test_empty_cluster_is_repaired():
    Z = np.array([[0.0], [0.1], [0.2], [5.0]])
    state = PrototypeSet(np.array([[0.1], [100.0], [5.0]]), np.zeros(4, dtype=np.int64))
    p = kmeans_estep(Z, state)
    assert (p.counts() > 0).all()


@pytest.mark.parametrize("seed", range(3))
def test_planted_blobs_recovered_with_monotone_wcss(seed):
    rng = np.random.default_rng(seed)
    Z, labels = gaussian_blobs(rng, 200, 4)
    p = kmeans_estep(Z, K=4, rng=rng)
    history = [wcss(Z, p)]
    for _ in range(9):
        p = kmeans_estep(Z, p)
        history.append(wcss(Z, p))
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))
    assert nmi(p.assignments, labels) >= 0.9


# --- hierarchical loss -----------------------------------------------------------

def test_hsl_single_point_single_prototype_is_zero():
    p = PrototypeSet(np.array([[1.0, 0.0]]), np.array([0]))
    assert hsl_loss(np.array([[1.0, 0.0]]), p, 0.1).item() == 0.0


def test_hsl_analytic_two_prototypes():
    p = PrototypeSet(np.eye(2), np.array([0]))
    value = hsl_loss(np.array([[1.0, 0.0]]), p, 1.0).item()
    assert value == pytest.approx(-np.log(np.e / (np.e + 1)), abs=1e-12)
    assert value == pytest.approx(0.31326, abs=1e-5)


def hsl_oracle(Z, C, assign, tau):
    total = 0.0
    for i in range(len(Z)):
        cn = [C[k] / np.sqrt(sum(x * x for x in C[k])) for k in range(len(C))]
        logits = [sum(Z[i][c] * cn[k][c] for c in range(len(Z[i]))) / tau for k in range(len(C))]
        m = max(logits)
        lse = m + np.log(sum(np.exp(l - m) for l in logits))
        total -= logits[assign[i]] - lse
    return total


@pytest.mark.parametrize("seed", range(20))
def test_hsl_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(7, 4))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    C = rng.normal(size=(3, 4))
    assign = rng.integers(0, 3, size=7)
    got = hsl_loss(Z, PrototypeSet(C, assign), 0.1).item()
    assert abs(got - hsl_oracle(Z, C, assign, 0.1)) <= 1e-9 * max(1.0, abs(got))


def test_hsl_decreases_under_mstep_updates():
    rng = np.random.default_rng(0)
    X, _ = gaussian_blobs(rng, 80, 4, dim=6, scale=0.2)
    store = ParameterStore()
    t = GslTransform.register(store, "gsl", 6, 8, rng)
    protos = kmeans_estep(structure_embed(X, t).data, K=4, rng=rng)
    opt = Adam(store, lr=3e-3)
    values = []
    for _ in range(11):
        loss = hsl_loss(structure_embed(X, t), protos, 0.1)
        values.append(loss.item())
        opt.step(gradient(loss, store))
    assert all(b < a for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("seed", range(3))
def test_hsl_gradient_through_transform(seed):
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    t = GslTransform.register(store, "gsl", 5, 6, rng)
    X = rng.uniform(size=(12, 5))
    protos = kmeans_estep(structure_embed(X, t).data, K=3, rng=rng)
    ok, worst = check_gradients(lambda: hsl_loss(structure_embed(X, t), protos, 0.1), store)
    assert ok, worst


# --- prototype and bi-level graphs -------------------------------------------

def test_prototype_adjacency_single_cluster():
    t = random_transform(np.random.default_rng(0), 3, 4)
    np.testing.assert_array_equal(prototype_adjacency(np.ones((1, 3)), t).data, [[1.0]])


def test_prototype_adjacency_identical_centroids_uniform():
    t = random_transform(np.random.default_rng(0), 3, 4)
    A = prototype_adjacency(np.tile([0.2, 0.5, 0.1], (3, 1)), t).data
    np.testing.assert_allclose(A, np.full((3, 3), 1 / 3), atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_prototype_adjacency_composes_poi_operations(seed):
    rng = np.random.default_rng(seed)
    t = random_transform(rng, 3, 4)
    C = rng.normal(size=(5, 3))
    expected = sparsify_normalize(pairwise_adjacency(structure_embed(C, t)), 0.2, 3).data
    np.testing.assert_array_equal(prototype_adjacency(C, t, 0.2, 3).data, expected)


def _graph(seed, N=10, K=2, eps=0.5, top_k=10):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(N, 3))
    t_poi, t_proto = random_transform(rng, 3, 4), random_transform(rng, 4, 4)
    protos = kmeans_estep(structure_embed(X, t_poi).data, K=K, rng=rng)
    hyper = GslHyperParams(K=max(K, 2), epsilon=eps, top_k=top_k)
    return build_bilevel_graph(X, t_poi, t_proto, protos, hyper)


def test_hier_has_one_entry_per_poi():
    g = _graph(0, N=10, K=2)
    assert g.E2 == 10
    np.testing.assert_array_equal(g.a_hier.sum(axis=1), np.ones(10))


@pytest.mark.parametrize("seed", range(3))
def test_top1_epsilon0_edge_bound(seed):
    g = _graph(seed, N=12, K=3, eps=0.0, top_k=1)
    assert g.E1 <= 2 * g.N


@pytest.mark.parametrize("seed", range(10))
def test_constructed_graph_invariants(seed):
    g = _graph(seed, N=14, K=3, eps=0.1 * (seed % 6), top_k=1 + seed % 4)
    assert set(np.unique(g.a_hier)) <= {0.0, 1.0}
    np.testing.assert_array_equal(g.a_hier.sum(axis=1), 1.0)
    np.testing.assert_allclose(g.a_poi.data.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(g.a_proto.data.sum(axis=1), 1.0, atol=1e-9)
    assert g.E2 == g.N and g.E3 <= g.E1 <= g.N ** 2


def test_invariant_violation_raises():
    A = ad.Tensor(np.eye(2))
    g = BiLevelGraph(A, hier_matrix(np.array([0, 1]), 2), A, PrototypeSet(np.eye(2), np.array([0, 1])))
    with pytest.raises(GraphInvariantError):
        g.check_invariants()


@pytest.mark.parametrize("view", ["spatial", "temporal"])
def test_rule_graph_rows_stochastic(view):
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(15, 2 if view == "spatial" else 8))
    protos = kmeans_estep(X, K=3, rng=rng)
    g = rule_bilevel_graph(view, X, protos, GslHyperParams(K=3))
    np.testing.assert_allclose(g.a_poi.data.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(g.a_proto.data.sum(axis=1), 1.0, atol=1e-9)


def test_rule_spatial_radius():
    X = np.array([[0.0, 0.0], [0.05, 0.0], [0.5, 0.5]])
    protos = kmeans_estep(X, K=2, rng=np.random.default_rng(0))
    A = rule_bilevel_graph("spatial", X, protos, GslHyperParams(K=2), radius=0.1).a_poi.data
    assert A[0, 1] > 0 and A[0, 2] == 0
    np.testing.assert_array_equal(A[2], [0.0, 0.0, 1.0])


@pytest.mark.parametrize("seed", range(3))
def test_adjacency_gradients(seed):
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    t = GslTransform.register(store, "g", 3, 5, rng)
    X = rng.uniform(size=(9, 3))
    w = rng.normal(size=(9, 9))

    def loss():
        A = sparsify_normalize(pairwise_adjacency(structure_embed(X, t)), 0.0, 4)
        return (A * w).sum()

    ok, worst = check_gradients(loss, store)
    assert ok, worst


def test_hyperparameter_validation():
    with pytest.raises(ValueError):
        GslHyperParams(estep_period="weekly")
    with pytest.raises(ValueError):
        GslHyperParams(tau1=0)
