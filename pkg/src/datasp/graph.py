"""Graph structure, cost matrices, classical shortest-path references, and
node-exclusion compression.

Cost matrices are dense (V, V) float64 arrays.  A finite entry (i, j) is the
cost of edge i -> j; +inf marks an absent edge; the diagonal is always inf
(self-loops are never considered).  All operations here are pure: they return
new arrays and never mutate their inputs.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .smoothing import INF, check_beta, pair_softmin


class Graph:
    """Directed graph on nodes 0..num_nodes-1 with an ordered edge list.

    The edge ordering is significant: per-edge vectors (costs, priors) are
    aligned with it.  Instances are treated as immutable after construction.
    """

    def __init__(self, num_nodes: int, edges):
        if num_nodes <= 0:
            raise ValidationError(f"num_nodes must be positive, got {num_nodes}")
        self.num_nodes = int(num_nodes)
        self.edges: tuple[tuple[int, int], ...] = tuple((int(u), int(v)) for u, v in edges)
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise ValidationError(f"self-loop edge ({u}, {v}) is not allowed")
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise ValidationError(f"edge ({u}, {v}) out of range for {num_nodes} nodes")
            if (u, v) in seen:
                raise ValidationError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))
        self._edge_array = np.array(self.edges, dtype=np.int64).reshape(len(self.edges), 2)
        self._edge_index = {e: i for i, e in enumerate(self.edges)}

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_array(self) -> np.ndarray:
        """(E, 2) int array of (u, v) pairs, aligned with the edge ordering."""
        return self._edge_array

    def edge_position(self, u: int, v: int) -> int:
        return self._edge_index[(u, v)]

    def has_edge(self, u: int, v: int) -> bool:
        return (u, v) in self._edge_index

    def undirected_neighbors(self) -> list[set[int]]:
        """Adjacency sets ignoring edge direction."""
        nbrs: list[set[int]] = [set() for _ in range(self.num_nodes)]
        for u, v in self.edges:
            nbrs[u].add(v)
            nbrs[v].add(u)
        return nbrs

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Graph)
            and self.num_nodes == other.num_nodes
            and self.edges == other.edges
        )

    def __repr__(self) -> str:
        return f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


def complete_graph(num_nodes: int) -> Graph:
    edges = [(u, v) for u in range(num_nodes) for v in range(num_nodes) if u != v]
    return Graph(num_nodes, edges)


def graph_from_json_dict(doc: dict) -> tuple[Graph, np.ndarray | None, np.ndarray | None]:
    """Build (graph, prior_costs, node_positions) from a graph JSON document.

    Document schema: {"num_nodes": int, "directed": bool, "edges": [[u, v], ...],
    "prior_costs": [float, ...] (optional), "node_positions": [[x, y], ...]
    (optional)}.  An undirected document is expanded to symmetric directed
    edges, duplicating the prior of each listed edge.  When prior_costs is
    absent but node_positions is present, priors default to the Euclidean
    distance between edge endpoints.
    """
    try:
        num_nodes = int(doc["num_nodes"])
        raw_edges = [(int(u), int(v)) for u, v in doc["edges"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed graph document: {exc}") from exc
    directed = bool(doc.get("directed", True))
    prior = doc.get("prior_costs")
    positions = doc.get("node_positions")

    if positions is not None:
        positions = np.asarray(positions, dtype=float)
        if positions.shape != (num_nodes, 2):
            raise ValidationError(
                f"node_positions must have shape ({num_nodes}, 2), got {positions.shape}"
            )

    if prior is not None and len(prior) != len(raw_edges):
        raise ValidationError(
            f"prior_costs has {len(prior)} entries for {len(raw_edges)} edges"
        )

    edges: list[tuple[int, int]] = []
    expanded_prior: list[float] = []
    for idx, (u, v) in enumerate(raw_edges):
        per_edge = None
        if prior is not None:
            per_edge = float(prior[idx])
        elif positions is not None:
            per_edge = float(np.hypot(*(positions[u] - positions[v])))
        directions = [(u, v)] if directed else [(u, v), (v, u)]
        for e in directions:
            if e in set(edges):
                raise ValidationError(f"duplicate edge {e} after expansion")
            edges.append(e)
            if per_edge is not None:
                expanded_prior.append(per_edge)

    graph = Graph(num_nodes, edges)
    prior_arr = np.asarray(expanded_prior, dtype=float) if expanded_prior else None
    if prior_arr is not None and (prior_arr < 0).any():
        raise ValidationError("prior costs must be nonnegative")
    return graph, prior_arr, positions


def load_graph_json(path) -> tuple[Graph, np.ndarray | None, np.ndarray | None]:
    with open(path, "r", encoding="utf-8") as fh:
        return graph_from_json_dict(json.load(fh))


def graph_to_json_dict(graph: Graph, prior=None, positions=None) -> dict:
    doc: dict = {
        "num_nodes": graph.num_nodes,
        "directed": True,
        "edges": [[u, v] for u, v in graph.edges],
    }
    if prior is not None:
        doc["prior_costs"] = [float(x) for x in prior]
    if positions is not None:
        doc["node_positions"] = [[float(x), float(y)] for x, y in positions]
    return doc


def build_cost_matrix(edge_costs, graph: Graph) -> np.ndarray:
    """Dense cost matrix with inf off-edges and an inf diagonal."""
    costs = np.asarray(edge_costs, dtype=float)
    if costs.shape != (graph.num_edges,):
        raise ValidationError(
            f"expected {graph.num_edges} edge costs, got shape {costs.shape}"
        )
    if graph.num_edges and (not np.isfinite(costs).all() or (costs <= 0).any()):
        raise ValidationError("edge costs must be finite and strictly positive")
    m = np.full((graph.num_nodes, graph.num_nodes), INF)
    if graph.num_edges:
        ea = graph.edge_array()
        m[ea[:, 0], ea[:, 1]] = costs
    return m


def validate_cost_matrix(m: np.ndarray, positive: bool = False) -> np.ndarray:
    """Shape/diagonal/NaN checks; `positive` additionally requires every
    finite entry to be strictly positive.

    Matrices built from edge costs are always positive, but node-exclusion
    smooth mins undershoot the hard min by up to ln(2)/beta, so compressed
    matrices can legitimately carry nonpositive entries at small beta; the
    smoothing recursions are sign-agnostic, only path algorithms that rely
    on nonnegativity (Dijkstra) insist on `positive`.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"cost matrix must be square, got shape {m.shape}")
    if np.isnan(m).any():
        raise ValidationError("cost matrix contains NaN")
    if (m == -INF).any():
        raise ValidationError("cost entries must not be -inf")
    finite = np.isfinite(m)
    if positive and (m[finite] <= 0).any():
        raise ValidationError("finite cost entries must be strictly positive")
    if finite.diagonal().any():
        raise ValidationError("diagonal entries must be inf (no self-loops)")
    return m


def classical_floyd_warshall(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs shortest distances with a predecessor matrix.

    Runs the textbook relaxation, including i == j, so the diagonal of the
    result is the cheapest cycle cost (inf when no cycle exists).
    predecessors[i, j] is the node before j on a reconstructed optimal
    i -> j path, or -1 when j is unreachable from i.
    """
    dist = validate_cost_matrix(m).copy()
    n = dist.shape[0]
    pred = np.full((n, n), -1, dtype=np.int64)
    src, dst = np.nonzero(np.isfinite(dist))
    pred[src, dst] = src
    for k in range(n):
        alt = dist[:, k, None] + dist[None, k, :]
        better = alt < dist
        dist = np.where(better, alt, dist)
        pred = np.where(better, pred[k, :][None, :], pred)
    return dist, pred


def reconstruct_path(pred: np.ndarray, i: int, j: int) -> list[int] | None:
    """Path i -> j from a predecessor matrix, or None when unreachable."""
    if pred[i, j] < 0:
        return None
    nodes = [j]
    guard = pred.shape[0] + 1
    while nodes[-1] != i:
        nodes.append(int(pred[i, nodes[-1]]))
        if len(nodes) > guard:
            raise ValidationError("predecessor matrix does not reach the source")
    nodes.reverse()
    return nodes


def path_cost(m: np.ndarray, path) -> float:
    total = 0.0
    for u, v in zip(path[:-1], path[1:]):
        total += m[u, v]
    return float(total)


def dijkstra(m: np.ndarray, source: int, target: int) -> tuple[list[int] | None, float]:
    """Minimum-cost path with ties broken by the lexicographically smallest
    node sequence.

    Returns (path, cost); (None, inf) when the target is unreachable.  The
    tie-break is realized by computing exact distances-to-target and then
    greedily walking from the source, always taking the smallest-indexed
    next node that stays on an optimal path.
    """
    m = validate_cost_matrix(m, positive=True)
    n = m.shape[0]
    if not (0 <= source < n and 0 <= target < n):
        raise ValidationError(f"source/target out of range for {n} nodes")
    if source == target:
        return [source], 0.0

    dist_to = _dijkstra_distances(m.T, target)
    total = dist_to[source]
    if not math.isfinite(total):
        return None, INF

    path = [source]
    u = source
    for _ in range(n):
        if u == target:
            return path, float(total)
        remaining = dist_to[u]
        tol = 1e-12 * max(1.0, abs(remaining))
        nxt = -1
        for v in range(n):
            if math.isfinite(m[u, v]) and m[u, v] + dist_to[v] <= remaining + tol:
                nxt = v
                break
        if nxt < 0:
            raise ValidationError("optimal successor not found; inconsistent distances")
        path.append(nxt)
        u = nxt
    raise ValidationError("optimal path exceeded node count; nonpositive costs?")


def _dijkstra_distances(m: np.ndarray, source: int) -> np.ndarray:
    n = m.shape[0]
    dist = np.full(n, INF)
    dist[source] = 0.0
    done = np.zeros(n, dtype=bool)
    heap: list[tuple[float, int]] = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        row = m[u]
        for v in range(n):
            w = row[v]
            if math.isfinite(w) and d + w < dist[v]:
                dist[v] = d + w
                heapq.heappush(heap, (d + w, v))
    return dist


@dataclass
class ExclusionStep:
    """One node-exclusion update, retaining what the adjoint needs.

    For every in-neighbor i and out-neighbor j of the removed node k
    (i != j), the surviving entry was replaced by
    softmin(old[i, j], old[i, k] + old[k, j]); w_via / w_direct are the
    softmin weights of the two branches.
    """

    removed: int
    size_before: int
    in_nodes: np.ndarray
    out_nodes: np.ndarray
    updated: np.ndarray
    w_via: np.ndarray
    w_direct: np.ndarray
    remap: np.ndarray
    matrix: np.ndarray

    def backward(self, grad_new: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the pre-exclusion matrix given one w.r.t. the result."""
        n = self.size_before
        if grad_new.shape != (n - 1, n - 1):
            raise ValidationError(
                f"expected gradient of shape {(n - 1, n - 1)}, got {grad_new.shape}"
            )
        keep = np.array([x for x in range(n) if x != self.removed], dtype=np.int64)
        grad_old = np.zeros((n, n))
        grad_old[np.ix_(keep, keep)] = grad_new
        if self.in_nodes.size and self.out_nodes.size:
            block = grad_old[np.ix_(self.in_nodes, self.out_nodes)]
            g_upd = np.where(self.updated, block, 0.0)
            grad_old[np.ix_(self.in_nodes, self.out_nodes)] = np.where(
                self.updated, block * self.w_direct, block
            )
            via = g_upd * self.w_via
            np.add.at(grad_old[:, self.removed], self.in_nodes, via.sum(axis=1))
            np.add.at(grad_old[self.removed, :], self.out_nodes, via.sum(axis=0))
        return grad_old


def exclude_node(m: np.ndarray, k: int, beta: float) -> ExclusionStep:
    """Remove node k, reconnecting its neighbors through local smooth mins.

    Only entries between in-neighbors and out-neighbors of k are updated
    (two-hop paths through k); the diagonal is never touched.  Returns the
    reduced matrix plus an old -> new index remapping (-1 for k).
    """
    m = validate_cost_matrix(m)
    beta = check_beta(beta)
    n = m.shape[0]
    if not (0 <= k < n):
        raise ValidationError(f"node {k} out of range for matrix of size {n}")

    in_nodes = np.where(np.isfinite(m[:, k]))[0]
    out_nodes = np.where(np.isfinite(m[k, :]))[0]
    new_full = m.copy()
    if in_nodes.size and out_nodes.size:
        a = m[in_nodes, k][:, None] + m[k, out_nodes][None, :]
        b = m[np.ix_(in_nodes, out_nodes)]
        updated = in_nodes[:, None] != out_nodes[None, :]
        value, w_via, w_direct = pair_softmin(a, b, beta)
        new_full[np.ix_(in_nodes, out_nodes)] = np.where(updated, value, b)
        w_via = np.where(updated, w_via, 0.0)
        w_direct = np.where(updated, w_direct, 1.0)
    else:
        updated = np.zeros((in_nodes.size, out_nodes.size), dtype=bool)
        w_via = np.zeros_like(updated, dtype=float)
        w_direct = np.ones_like(updated, dtype=float)

    keep = np.array([x for x in range(n) if x != k], dtype=np.int64)
    reduced = new_full[np.ix_(keep, keep)]
    remap = np.full(n, -1, dtype=np.int64)
    remap[keep] = np.arange(n - 1)
    return ExclusionStep(
        removed=k,
        size_before=n,
        in_nodes=in_nodes,
        out_nodes=out_nodes,
        updated=updated,
        w_via=w_via,
        w_direct=w_direct,
        remap=remap,
        matrix=reduced,
    )


@dataclass
class Compression:
    """Result of sequentially excluding nodes down to a kept subset."""

    matrix: np.ndarray
    kept: list[int]
    removed: list[int]
    steps: list[ExclusionStep] = field(default_factory=list)
    node_map: np.ndarray | None = None  # original id -> compressed index, -1 if removed

    def backward(self, grad_compressed: np.ndarray) -> np.ndarray:
        """Chain a gradient w.r.t. the compressed matrix back to the full one."""
        grad = np.asarray(grad_compressed, dtype=float)
        for step in reversed(self.steps):
            grad = step.backward(grad)
        return grad


def sample_subgraph(
    graph: Graph,
    m: np.ndarray,
    keep_count: int,
    node_frequencies,
    rng_seed: int,
    beta: float,
) -> Compression:
    """Pick keep_count nodes and exclude the rest sequentially.

    Half of the kept set (rounded up) is grown as a connected subgraph by a
    randomized BFS from a frequency-weighted seed node; the remainder is
    drawn without replacement with probability proportional to
    node_frequencies.  Deterministic for a given rng_seed.
    """
    m = validate_cost_matrix(m)
    n = graph.num_nodes
    if m.shape[0] != n:
        raise ValidationError("cost matrix size does not match graph")
    if not (2 <= keep_count <= n):
        raise ValidationError(f"keep_count must be in [2, {n}], got {keep_count}")
    freqs = np.asarray(node_frequencies, dtype=float)
    if freqs.shape != (n,) or (freqs < 0).any():
        raise ValidationError("node_frequencies must be nonnegative with one entry per node")

    rng = np.random.default_rng(rng_seed)
    if keep_count == n:
        node_map = np.arange(n, dtype=np.int64)
        return Compression(matrix=m.copy(), kept=list(range(n)), removed=[], steps=[], node_map=node_map)

    kept = _grow_connected(graph, freqs, math.ceil(keep_count / 2), rng)
    remaining = sorted(set(range(n)) - kept)
    extra = keep_count - len(kept)
    if extra > 0:
        weights = freqs[remaining] + 1e-9
        weights = weights / weights.sum()
        chosen = rng.choice(len(remaining), size=extra, replace=False, p=weights)
        kept.update(remaining[int(c)] for c in chosen)

    removed = sorted(set(range(n)) - kept)
    current = m
    steps: list[ExclusionStep] = []
    # Excluding in ascending original order; each step's index is the node's
    # position in the current (shrinking) matrix.
    alive = list(range(n))
    for node in removed:
        idx = alive.index(node)
        step = exclude_node(current, idx, beta)
        steps.append(step)
        current = step.matrix
        alive.pop(idx)

    node_map = np.full(n, -1, dtype=np.int64)
    for new_idx, node in enumerate(alive):
        node_map[node] = new_idx
    return Compression(matrix=current, kept=alive, removed=removed, steps=steps, node_map=node_map)


def _grow_connected(graph: Graph, freqs: np.ndarray, target_size: int, rng) -> set[int]:
    """Randomized BFS growth of a connected node set of the requested size.

    Falls back to reseeding from untouched nodes when a component is
    exhausted, so the result always has target_size nodes (the set is then
    connected per component).
    """
    n = graph.num_nodes
    nbrs = graph.undirected_neighbors()
    total = freqs.sum()
    weights = freqs + (1e-9 if total > 0 else 1.0)
    tree: set[int] = set()
    frontier: list[int] = []

    def reseed() -> None:
        candidates = [v for v in range(n) if v not in tree]
        w = weights[candidates]
        seed = candidates[int(rng.choice(len(candidates), p=w / w.sum()))]
        tree.add(seed)
        for v in sorted(nbrs[seed]):
            if v not in tree and v not in frontier:
                frontier.append(v)

    reseed()
    while len(tree) < target_size:
        if not frontier:
            reseed()
            continue
        pick = frontier.pop(int(rng.integers(len(frontier))))
        if pick in tree:
            continue
        tree.add(pick)
        for v in sorted(nbrs[pick]):
            if v not in tree and v not in frontier:
                frontier.append(v)
    return tree
