"""Graph reduction and recursive spectral bisection of the network.

Buses joined by switchable lines are collapsed into supernodes so that no
switchable line can end up in a cut. Edge weights come from the dual
multipliers of the bus injection bounds, and each bisection splits the
current largest block by the sign of the Fiedler vector.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .case_io import ValidatedNetwork, _components, is_connected

WEIGHT_FLOOR = 1e-8
ZERO_ENTRY = 1e-10
EXACT_CUT_LIMIT = 16


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class ReducedGraph:
    """Simple graph on reduced nodes.

    ``clusters[v]`` lists the original buses of node ``v``; ``edges`` maps a
    reduced edge ``(a, b)`` with ``a < b`` to the original lines it merges.
    """

    clusters: tuple[tuple[int, ...], ...]
    node_map: dict
    edges: dict

    @property
    def n_nodes(self) -> int:
        return len(self.clusters)

    @property
    def supernodes(self) -> list[int]:
        return [v for v, c in enumerate(self.clusters) if len(c) > 1]

    def edge_list(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


def reduce_graph(net: ValidatedNetwork) -> ReducedGraph:
    """Collapse every component of the switchable subgraph into one node."""
    if net.lines and not net.fixed:
        raise PartitionError("every line is switchable; pre-select some lines as fixed before partitioning")
    comps = _components(net.n_bus, [net.lines[k] for k in net.switchable])
    comps.sort(key=min)
    clusters = tuple(tuple(sorted(c)) for c in comps)
    node_map = {b: v for v, c in enumerate(clusters) for b in c}
    edges: dict[tuple[int, int], list[int]] = {}
    for k in net.fixed:
        i, j = net.lines[k]
        a, b = node_map[i], node_map[j]
        if a == b:
            continue
        edges.setdefault((min(a, b), max(a, b)), []).append(k)
    return ReducedGraph(clusters, node_map, {e: tuple(v) for e, v in edges.items()})


def node_scores(reduced: ReducedGraph, duals: Mapping[str, np.ndarray]) -> np.ndarray:
    keys = ("lambda_lo", "lambda_hi", "gamma_lo", "gamma_hi")
    missing = [k for k in keys if k not in duals]
    if missing:
        raise PartitionError(f"missing dual multipliers: {missing}")
    per_bus = sum(np.asarray(duals[k], dtype=float) for k in keys)
    n_bus = sum(len(c) for c in reduced.clusters)
    if per_bus.shape != (n_bus,):
        raise PartitionError(f"expected {n_bus} bus duals, got shape {per_bus.shape}")
    if not np.all(np.isfinite(per_bus)):
        raise PartitionError("dual multipliers must be finite")
    return np.array([per_bus[list(c)].sum() for c in reduced.clusters])


def dual_weights(
    reduced: ReducedGraph, duals: Mapping[str, np.ndarray], floor: float = WEIGHT_FLOOR
) -> np.ndarray:
    """Adjacency ``A(a, b) = s_a + s_b`` on reduced edges, floored at ``floor``."""
    s = node_scores(reduced, duals)
    m = reduced.n_nodes
    a = np.zeros((m, m))
    for u, v in reduced.edges:
        a[u, v] = a[v, u] = max(s[u] + s[v], floor)
    return a


def laplacian(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.diag(a.sum(axis=1)) - a


def normalized_adjacency(a: np.ndarray) -> np.ndarray:
    d = a.sum(axis=1)
    inv = np.zeros_like(d)
    inv[d > 0] = 1.0 / np.sqrt(d[d > 0])
    return a * inv[:, None] * inv[None, :]


def fiedler_vector(lap: np.ndarray) -> tuple[float, np.ndarray]:
    """Second-smallest eigenpair of a graph Laplacian.

    The vector has unit norm and its first entry with ``|v_i| > 1e-10`` is
    positive.
    """
    lap = np.asarray(lap, dtype=float)
    if lap.shape[0] < 2:
        raise PartitionError("need at least two nodes")
    ev, vec = np.linalg.eigh(lap)
    lam2, v = float(ev[1]), vec[:, 1].copy()
    if lam2 <= 1e-10 * max(1.0, float(ev[-1])):
        raise PartitionError("graph is disconnected (second Laplacian eigenvalue vanishes)")
    nz = np.flatnonzero(np.abs(v) > ZERO_ENTRY)
    if nz.size and v[nz[0]] < 0:
        v = -v
    v /= np.linalg.norm(v)
    resid = np.linalg.norm(lap @ v - lam2 * v)
    if resid > 1e-8 * max(1.0, float(ev[-1])):
        raise PartitionError(f"eigen-residual {resid:.2e} too large")
    return lam2, v


def _edges_of(a: np.ndarray) -> list[tuple[int, int]]:
    iu, ku = np.nonzero(np.triu(a, 1))
    return list(zip(iu.tolist(), ku.tolist()))


def _induced_connected(a: np.ndarray, nodes: Sequence[int]) -> bool:
    if not nodes:
        return False
    sub = a[np.ix_(nodes, nodes)]
    return is_connected(len(nodes), _edges_of(sub))


def _perturbation(m: int, attempt: int) -> np.ndarray:
    i, k = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    lo, hi = np.minimum(i, k), np.maximum(i, k)
    h = ((lo * 7919 + hi * 104729 + attempt * 31) % 97) / 97.0
    return 1.0 + 1e-6 * attempt * h


def spectral_bipartition(a: np.ndarray, max_retries: int = 5) -> tuple[list[int], list[int]]:
    """Split nodes by the sign of the Fiedler vector of ``L = D - A``.

    Entries with ``|v_i| <= 1e-10`` go to the non-positive side. If a side is
    empty or disconnected the weights are perturbed slightly and the split
    is retried.
    """
    a = np.asarray(a, dtype=float)
    m = a.shape[0]
    if m < 2:
        raise PartitionError("need at least two nodes")
    if not is_connected(m, _edges_of(a)):
        raise PartitionError("graph is disconnected")
    for attempt in range(max_retries + 1):
        w = a if attempt == 0 else a * _perturbation(m, attempt)
        _, v = fiedler_vector(laplacian(w))
        n1 = [i for i in range(m) if v[i] > ZERO_ENTRY]
        n2 = [i for i in range(m) if v[i] <= ZERO_ENTRY]
        if n1 and n2 and _induced_connected(a, n1) and _induced_connected(a, n2):
            return n1, n2
    raise PartitionError("spectral bisection failed to produce two connected sides")


def cut_weight(a: np.ndarray, side: Sequence[int]) -> float:
    mask = np.zeros(a.shape[0], dtype=bool)
    mask[list(side)] = True
    return float(a[np.ix_(mask, ~mask)].sum())


def optimal_bipartition_cut(a: np.ndarray) -> float:
    """Smallest cut over bipartitions into two connected sides (exhaustive)."""
    m = a.shape[0]
    if m > EXACT_CUT_LIMIT:
        raise PartitionError(f"exhaustive search limited to {EXACT_CUT_LIMIT} nodes")
    best = math.inf
    rest = list(range(1, m))
    for r in range(0, m - 1):
        for combo in itertools.combinations(rest, r):
            side = [0, *combo]
            other = [i for i in range(m) if i not in side]
            if _induced_connected(a, side) and _induced_connected(a, other):
                best = min(best, cut_weight(a, side))
    return best


@dataclass
class SplitRecord:
    block: int
    sizes: tuple[int, int]
    cut_weight: float
    cut_weight_normalized: float
    fiedler_value: float
    spectral_lower: float
    c_opt: float | None = None

    @property
    def cheeger_bound(self) -> float | None:
        return None if self.c_opt is None else 0.5 * self.c_opt**2

    @property
    def bound_holds(self) -> bool | None:
        b = self.cheeger_bound
        return None if b is None else b <= self.cut_weight_normalized + 1e-12

    def as_dict(self) -> dict:
        return {
            "block": self.block,
            "sizes": list(self.sizes),
            "cut_weight": self.cut_weight,
            "cut_weight_normalized": self.cut_weight_normalized,
            "fiedler_value": self.fiedler_value,
            "spectral_lower": self.spectral_lower,
            "c_opt": self.c_opt,
            "cheeger_bound": self.cheeger_bound,
            "bound_holds": self.bound_holds,
        }


@dataclass
class WeightedPartition:
    blocks: list[tuple[int, ...]]
    cut_lines: tuple[int, ...]
    adjacency: np.ndarray
    reduced: ReducedGraph | None = None
    splits: list[SplitRecord] = field(default_factory=list)

    @property
    def laplacian(self) -> np.ndarray:
        return laplacian(self.adjacency)

    def block_of(self, bus: int) -> int:
        for l, b in enumerate(self.blocks):
            if bus in b:
                return l
        raise KeyError(bus)

    def as_dict(self) -> dict:
        return {
            "blocks": [list(b) for b in self.blocks],
            "cut_lines": list(self.cut_lines),
            "splits": [s.as_dict() for s in self.splits],
        }


def _split_record(a_sub: np.ndarray, side: list[int], block: int, exact_limit: int) -> SplitRecord:
    m = a_sub.shape[0]
    an = normalized_adjacency(a_sub)
    lam2, _ = fiedler_vector(laplacian(a_sub))
    # Courant-Fischer: every bipartition of the normalized graph cuts at least this much
    lam2_n = float(np.linalg.eigvalsh(laplacian(an))[1])
    c_opt = optimal_bipartition_cut(an) if m <= exact_limit else None
    return SplitRecord(
        block=block,
        sizes=(len(side), m - len(side)),
        cut_weight=cut_weight(a_sub, side),
        cut_weight_normalized=cut_weight(an, side),
        fiedler_value=lam2,
        spectral_lower=lam2_n * (m - 1) / m,
        c_opt=c_opt,
    )


def recursive_partition(
    a: np.ndarray,
    n: int,
    reduced: ReducedGraph | None = None,
    net: ValidatedNetwork | None = None,
    exact_limit: int = 12,
) -> WeightedPartition:
    """``n``-way partition by repeatedly bisecting the block with most nodes.

    Blocks are reported over original buses when ``reduced`` is given.
    """
    a = np.asarray(a, dtype=float)
    m = a.shape[0]
    if n < 1:
        raise PartitionError("n must be at least 1")
    if n > m:
        raise PartitionError(f"cannot split {m} nodes into {n} blocks")
    if not is_connected(m, _edges_of(a)):
        raise PartitionError("graph is disconnected")
    blocks: list[list[int]] = [list(range(m))]
    splits = []
    while len(blocks) < n:
        l = max(range(len(blocks)), key=lambda b: (len(blocks[b]), -b))
        nodes = blocks[l]
        sub = a[np.ix_(nodes, nodes)]
        s1, s2 = spectral_bipartition(sub)
        splits.append(_split_record(sub, s1, l, exact_limit))
        blocks[l] = [nodes[i] for i in s1]
        blocks.append([nodes[i] for i in s2])
    for b in blocks:
        if not _induced_connected(a, b):
            raise PartitionError("produced a disconnected block")
    if reduced is not None:
        blocks = [sorted(bus for v in b for bus in reduced.clusters[v]) for b in blocks]
    else:
        blocks = [sorted(b) for b in blocks]
    cut = ()
    if net is not None:
        where = {bus: l for l, b in enumerate(blocks) for bus in b}
        cut = tuple(k for k, (i, j) in enumerate(net.lines) if where[i] != where[j])
        if set(cut) & set(net.switchable):
            raise PartitionError("a switchable line ended up in the cut set")
    return WeightedPartition([tuple(b) for b in blocks], cut, a, reduced, splits)


def partition_network(
    net: ValidatedNetwork, duals: Mapping[str, np.ndarray], n: int, floor: float = WEIGHT_FLOOR
) -> WeightedPartition:
    reduced = reduce_graph(net)
    a = dual_weights(reduced, duals, floor)
    return recursive_partition(a, n, reduced=reduced, net=net)
