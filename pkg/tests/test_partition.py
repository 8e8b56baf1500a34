import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vvots.case_io import Bus, Line, PowerCase, is_connected, validate
from vvots.partition import (
    WEIGHT_FLOOR,
    PartitionError,
    cut_weight,
    dual_weights,
    fiedler_vector,
    laplacian,
    normalized_adjacency,
    optimal_bipartition_cut,
    partition_network,
    recursive_partition,
    reduce_graph,
    spectral_bipartition,
)


def net_from(n, fixed, switchable=()):
    lines = [Line(i, k, 0.0, 0.1) for i, k in fixed] + [Line(i, k, 0.0, 0.1, switchable=True) for i, k in switchable]
    return validate(PowerCase(100.0, [Bus(i) for i in range(1, n + 1)], [], lines))


def zero_duals(n):
    return {k: np.zeros(n) for k in ("lambda_lo", "lambda_hi", "gamma_lo", "gamma_hi")}


def duals_from(scores):
    d = zero_duals(len(scores))
    d["lambda_hi"] = np.asarray(scores, dtype=float)
    return d


def path(m, w=1.0):
    a = np.zeros((m, m))
    for i in range(m - 1):
        a[i, i + 1] = a[i + 1, i] = w
    return a


def random_connected(rng, m, p=0.3):
    """Random spanning tree plus extra edges, positive weights."""
    a = np.zeros((m, m))
    order = rng.permutation(m)
    for t in range(1, m):
        u, v = order[t], order[rng.integers(t)]
        a[u, v] = a[v, u] = rng.uniform(0.1, 5)
    extra = rng.random((m, m)) < p
    for u, v in zip(*np.nonzero(np.triu(extra, 1))):
        a[u, v] = a[v, u] = rng.uniform(0.1, 5)
    return a


# -- reduction -------------------------------------------------------------


def test_reduce_example():
    net = net_from(5, fixed=[(3, 4), (4, 5), (1, 5)], switchable=[(1, 2), (2, 3)])
    red = reduce_graph(net)
    assert red.clusters == ((0, 1, 2), (3,), (4,))
    assert red.edge_list() == [(0, 1), (0, 2), (1, 2)]
    for k in net.switchable:
        assert all(k not in ks for ks in red.edges.values())


def test_reduce_without_switchable_is_identity():
    net = net_from(3, fixed=[(1, 2), (2, 3)])
    red = reduce_graph(net)
    assert red.clusters == ((0,), (1,), (2,)) and red.edge_list() == [(0, 1), (1, 2)]


def test_reduce_drops_self_loop():
    net = net_from(3, fixed=[(1, 3)], switchable=[(1, 2), (2, 3)])
    red = reduce_graph(net)
    assert red.n_nodes == 1 and red.edges == {}


def test_reduce_merges_parallel():
    net = net_from(4, fixed=[(1, 3), (2, 3), (3, 4)], switchable=[(1, 2)])
    red = reduce_graph(net)
    assert red.edges[(0, 1)] == (0, 1)


def test_reduce_all_switchable_errors():
    net = net_from(2, fixed=[], switchable=[(1, 2)])
    with pytest.raises(PartitionError, match="pre-select"):
        reduce_graph(net)


# -- weights ---------------------------------------------------------------


def test_weights_floor_and_formula():
    net = net_from(3, fixed=[(1, 2), (2, 3)])
    red = reduce_graph(net)
    a = dual_weights(red, zero_duals(3))
    assert a[0, 1] == WEIGHT_FLOOR and a[0, 2] == 0
    a = dual_weights(red, duals_from([2, 3, 0]))
    assert a[0, 1] == pytest.approx(5)


def test_weights_supernode_sum():
    net = net_from(3, fixed=[(2, 3)], switchable=[(1, 2)])
    red = reduce_graph(net)
    a = dual_weights(red, duals_from([1, 4, 0]))
    assert a[0, 1] == pytest.approx(5)


def test_weights_missing_dual():
    red = reduce_graph(net_from(2, fixed=[(1, 2)]))
    with pytest.raises(PartitionError):
        dual_weights(red, {"lambda_lo": np.zeros(2)})


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_weights_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    m = 6
    a0 = random_connected(rng, m)
    edges = [(i + 1, k + 1) for i, k in zip(*np.nonzero(np.triu(a0, 1)))]
    scores = rng.uniform(0, 3, m)
    perm = rng.permutation(m)
    a = dual_weights(reduce_graph(net_from(m, edges)), duals_from(scores))
    edges_p = [(perm[i - 1] + 1, perm[k - 1] + 1) for i, k in edges]
    scores_p = np.empty(m)
    scores_p[perm] = scores
    ap = dual_weights(reduce_graph(net_from(m, edges_p)), duals_from(scores_p))
    np.testing.assert_allclose(ap[np.ix_(perm, perm)], a)


# -- spectral --------------------------------------------------------------


def test_fiedler_path3():
    lap = laplacian(path(3))
    np.testing.assert_array_equal(lap, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    lam, v = fiedler_vector(lap)
    assert lam == pytest.approx(1.0)
    np.testing.assert_allclose(v, np.array([1, 0, -1]) / np.sqrt(2), atol=1e-12)


def test_fiedler_k3_and_scaling():
    a = np.ones((3, 3)) - np.eye(3)
    assert fiedler_vector(laplacian(a))[0] == pytest.approx(3)
    rng = np.random.default_rng(1)
    b = random_connected(rng, 7)
    lam, v = fiedler_vector(laplacian(b))
    lam2, v2 = fiedler_vector(laplacian(2.5 * b))
    assert lam2 == pytest.approx(2.5 * lam)
    assert min(np.linalg.norm(v - v2), np.linalg.norm(v + v2)) <= 1e-8


def test_fiedler_disconnected():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1
    with pytest.raises(PartitionError):
        fiedler_vector(laplacian(a))


def test_bipartition_examples():
    assert spectral_bipartition(path(3)) == ([0], [1, 2])
    assert spectral_bipartition(path(2)) in (([0], [1]), ([1], [0]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 60))
def test_bipartition_connected(seed, m):
    rng = np.random.default_rng(seed)
    a = random_connected(rng, m, p=rng.uniform(0, 0.3))
    n1, n2 = spectral_bipartition(a)
    assert n1 and n2 and sorted(n1 + n2) == list(range(m))
    for side in (n1, n2):
        sub = a[np.ix_(side, side)]
        assert is_connected(len(side), list(zip(*np.nonzero(np.triu(sub, 1)))))


# -- recursion and bounds ---------------------------------------------------


def brute_min_cut(a):
    m = a.shape[0]
    best = np.inf
    for mask in range(1, 2 ** (m - 1)):
        side = [i for i in range(m) if mask >> i & 1]
        other = [i for i in range(m) if not mask >> i & 1]
        best = min(best, a[np.ix_(side, other)].sum())
    return best


def test_recursive_n1(ring5):
    part = partition_network(ring5, zero_duals(5), 1)
    assert part.blocks == [tuple(range(5))] and part.cut_lines == ()


def test_recursive_n2_excludes_switchable():
    net = net_from(6, fixed=[(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 1)], switchable=[(1, 4)])
    part = partition_network(net, duals_from([1, 1, 1, 1, 1, 1]), 2)
    assert not set(part.cut_lines) & set(net.switchable)
    assert sorted(b for blk in part.blocks for b in blk) == list(range(6))
    for blk in part.blocks:
        assert 0 not in blk or 3 in blk


def test_recursive_too_many_blocks():
    with pytest.raises(PartitionError):
        recursive_partition(path(3), 4)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 12), st.integers(1, 4))
def test_recursive_blocks_connected_and_bound(seed, m, n):
    rng = np.random.default_rng(seed)
    a = random_connected(rng, m)
    n = min(n, m)
    part = recursive_partition(a, n)
    assert len(part.blocks) == n
    assert sorted(b for blk in part.blocks for b in blk) == list(range(m))
    for blk in part.blocks:
        sub = a[np.ix_(blk, blk)]
        assert is_connected(len(blk), list(zip(*np.nonzero(np.triu(sub, 1)))))
    for rec in part.splits:
        assert rec.bound_holds
        assert rec.cut_weight_normalized >= rec.spectral_lower - 1e-9


def test_optimal_cut_matches_brute():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = random_connected(rng, int(rng.integers(2, 9)))
        an = normalized_adjacency(a)
        assert optimal_bipartition_cut(an) == pytest.approx(brute_min_cut(an))


def test_cut_weight():
    a = path(4, 2.0)
    assert cut_weight(a, [0, 1]) == 2.0
