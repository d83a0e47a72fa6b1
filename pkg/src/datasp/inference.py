"""Path sampling from a shortcut tensor, destination likelihoods, expected
optimal paths, and evaluation metrics.

Sampling recursively draws the highest intermediate node H between the
endpoints, then recurses into both halves with all slots above H masked out
(the direct slot stays available on the left half even when its index
exceeds H).  Because every draw inside a half is strictly smaller than the
half's pivot, the mask a row would accumulate along a branch always equals
the mask imposed by its immediate parent, so passing a single bound down the
recursion reproduces the tensor-masking semantics exactly without copying
anything.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .errors import NoPathError, ValidationError
from .graph import Graph, build_cost_matrix, classical_floyd_warshall, dijkstra, path_cost
from .smoothing import INF

_PARENT_RETRIES = 50


class _DeadEnd(Exception):
    """A masked row lost all mass; the parent draw must be resampled."""


@dataclass
class PathDistributionEstimate:
    frequencies: dict[tuple[int, ...], float]
    sample_count: int
    rejected_count: int
    resample_events: int = 0


class ShortcutSampler:
    """Recursive walk sampler over a fixed shortcut tensor.

    Masked row distributions are cached per (source, target, bound), so
    repeated draws (Monte Carlo) cost one bisection per recursion step.
    """

    def __init__(self, p: np.ndarray):
        if p.ndim != 3 or len(set(p.shape)) != 1:
            raise ValidationError(f"shortcut tensor must be cubic, got shape {p.shape}")
        self.p = p
        self.n = p.shape[0]
        self._rows: dict[tuple[int, int, int], tuple[list[float], float] | None] = {}

    def _row(self, a: int, b: int, bound: int):
        key = (a, b, bound)
        hit = self._rows.get(key, False)
        if hit is not False:
            return hit
        hi = min(bound, self.n - 1)
        weights = [0.0] * self.n
        row = self.p[a, b]
        for k in range(hi + 1):
            weights[k] = float(row[k])
        weights[a] = float(row[a])  # the direct slot survives every mask
        weights[b] = 0.0
        total = 0.0
        cumulative = []
        for w in weights:
            total += w
            cumulative.append(total)
        entry = (cumulative, total) if total > 0.0 else None
        self._rows[key] = entry
        return entry

    def draw(self, a: int, b: int, bound: int, rng) -> int:
        entry = self._row(a, b, bound)
        if entry is None:
            raise _DeadEnd
        cumulative, total = entry
        return bisect_right(cumulative, rng.random() * total)

    def sample(self, i: int, j: int, rng) -> tuple[list[int], int]:
        """One walk i -> j plus the number of parent-resample events."""
        if not (0 <= i < self.n and 0 <= j < self.n) or i == j:
            raise ValidationError(f"invalid pair ({i}, {j}) for {self.n} nodes")
        if self.p[i, j, :].sum() <= 0.0:
            raise NoPathError(f"pair ({i}, {j}) is unreachable in the shortcut tensor")
        resamples = 0

        def recurse(a: int, b: int, bound: int) -> list[int]:
            nonlocal resamples
            for _ in range(_PARENT_RETRIES):
                h = self.draw(a, b, bound, rng)
                if h == a:
                    return [a, b]
                try:
                    left = recurse(a, h, h)
                    right = recurse(h, b, h)
                except _DeadEnd:
                    resamples += 1
                    continue
                return left + right[1:]
            raise _DeadEnd

        try:
            walk = recurse(i, j, self.n - 1)
        except _DeadEnd:
            raise NoPathError(
                f"sampling for pair ({i}, {j}) dead-ended after repeated resampling"
            ) from None
        return walk, resamples


def sample_path(p: np.ndarray, i: int, j: int, rng) -> list[int]:
    """Draw one walk i -> j from the shortcut tensor.

    Raises NoPathError when the pair has no mass at all.  Zero rows hit
    after masking trigger a bounded resample of the parent draw.
    """
    walk, _ = ShortcutSampler(p).sample(i, j, rng)
    return walk


def monte_carlo_path_distribution(
    p: np.ndarray,
    i: int,
    j: int,
    num_samples: int,
    rng,
    reject_cycles: bool = False,
) -> PathDistributionEstimate:
    """Empirical walk distribution from repeated sampling.

    With reject_cycles, walks with repeated nodes are discarded (and
    counted); sampling continues until num_samples walks are accepted or
    the 100 * num_samples attempt cap is hit.
    """
    if num_samples < 1:
        raise ValidationError("num_samples must be >= 1")
    sampler = ShortcutSampler(p)
    counts: dict[tuple[int, ...], int] = {}
    accepted = 0
    rejected = 0
    resample_events = 0
    attempts = 0
    cap = 100 * num_samples
    while accepted < num_samples and attempts < cap:
        attempts += 1
        walk, resamples = sampler.sample(i, j, rng)
        resample_events += resamples
        if reject_cycles and len(set(walk)) != len(walk):
            rejected += 1
            continue
        key = tuple(walk)
        counts[key] = counts.get(key, 0) + 1
        accepted += 1
    if accepted == 0:
        raise NoPathError(
            f"all {attempts} sampled walks for pair ({i}, {j}) were rejected"
        )
    freqs = {w: c / accepted for w, c in counts.items()}
    return PathDistributionEstimate(
        frequencies=freqs,
        sample_count=accepted,
        rejected_count=rejected,
        resample_events=resample_events,
    )


@dataclass
class DestinationPrior:
    """Per-node nonnegative destination weights."""

    weights: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if (self.weights < 0).any() or not (self.weights > 0).any():
            raise ValidationError("prior weights must be nonnegative with at least one positive")

    @classmethod
    def uniform(cls, num_nodes: int) -> "DestinationPrior":
        return cls(weights=np.ones(num_nodes), kind="uniform")

    @classmethod
    def exp_negative_distance(cls, m: np.ndarray, origin: int) -> "DestinationPrior":
        """Weights exp(-d/scale) from cost distances out of the origin node;
        scale is the mean finite distance so the decay is unit-free."""
        dist, _ = classical_floyd_warshall(m)
        row = dist[origin].copy()
        row[origin] = 0.0
        finite = np.isfinite(row)
        scale = float(row[finite].mean()) if finite.any() and row[finite].max() > 0 else 1.0
        weights = np.where(finite, np.exp(-row / max(scale, 1e-12)), 0.0)
        return cls(weights=weights, kind="exp-negative-distance")


def swap_nodes_in_matrix(m: np.ndarray, a: int, b: int) -> np.ndarray:
    """Exchange node indices a and b (rows and columns)."""
    out = m.copy()
    out[[a, b], :] = out[[b, a], :]
    out[:, [a, b]] = out[:, [b, a]]
    return out


def destination_likelihood(
    p: np.ndarray,
    partial: list[int],
    prior: DestinationPrior,
) -> np.ndarray:
    """Per-node destination probabilities given a partial path.

    p must come from a cost matrix in which the partial path's final node
    was swapped with index V-1 before the forward pass, so that "the final
    node is the highest intermediate" is a single slot.  Nodes already
    visited (except the current one) get probability zero; the current node
    itself is scored by its direct-connection slot.  Probabilities are
    returned in original node indexing.
    """
    n = p.shape[0]
    partial = [int(x) for x in partial]
    if len(partial) < 2:
        raise ValidationError("partial path must contain at least two nodes")
    if len(set(partial)) != len(partial):
        raise ValidationError("partial path must be cycle-free")
    if any(not 0 <= x < n for x in partial):
        raise ValidationError("partial path node out of range")
    if prior.weights.shape != (n,):
        raise ValidationError("prior weight vector size must match node count")

    start, current = partial[0], partial[-1]

    def swapped(x: int) -> int:
        if x == current:
            return n - 1
        if x == n - 1:
            return current
        return x

    visited = set(partial[:-1])
    scores = np.zeros(n)
    for node in range(n):
        if node in visited:
            continue
        if node == current:
            s_start = swapped(start)
            scores[node] = p[s_start, n - 1, s_start] * prior.weights[node]
        else:
            scores[node] = p[swapped(start), swapped(node), n - 1] * prior.weights[node]
    total = scores.sum()
    if total <= 0.0:
        raise NoPathError("no destination has positive score under this prior")
    return scores / total


def expected_optimal_path(costs, graph: Graph, i: int, j: int) -> tuple[list[int] | None, float]:
    """Deterministic best path under the given edge costs."""
    return dijkstra(build_cost_matrix(costs, graph), i, j)


def jaccard_edges(pred, obs) -> float:
    """Intersection over union of the two paths' consecutive-pair edge sets."""
    if len(pred) < 2 or len(obs) < 2:
        raise ValidationError("paths must contain at least two nodes")
    pe = set(zip(pred[:-1], pred[1:]))
    oe = set(zip(obs[:-1], obs[1:]))
    return len(pe & oe) / len(pe | oe)


def match_rate(preds, obs_list) -> float:
    """Fraction of predictions identical to their paired observation."""
    if len(preds) != len(obs_list):
        raise ValidationError("prediction and observation lists must align")
    if not preds:
        raise ValidationError("match_rate of an empty list")
    hits = sum(1 for a, b in zip(preds, obs_list) if list(a) == list(b))
    return hits / len(preds)


def optimal_cost_rate(preds, true_matrices, rel_tol: float = 1e-9) -> float:
    """Fraction of predicted paths that are cost-optimal under the true costs.

    true_matrices is one cost matrix per prediction (contexts differ).
    """
    if len(preds) != len(true_matrices):
        raise ValidationError("predictions and true cost matrices must align")
    if not preds:
        raise ValidationError("optimal_cost_rate of an empty list")
    hits = 0
    for pred, m_true in zip(preds, true_matrices):
        cost = path_cost(m_true, pred)
        _, best = dijkstra(m_true, pred[0], pred[-1])
        if np.isfinite(best) and abs(cost - best) <= rel_tol * max(1.0, abs(best)):
            hits += 1
    return hits / len(preds)
