"""Differentiable all-to-all shortest paths.

The forward pass runs a smoothed Floyd-Warshall sweep: for each pivot node k
in ascending order, every pair (i, j) compares the two-hop cost through k
against its current cost with a smooth min, writes the via-branch weight into
the shortcut tensor P[i, j, k], and rescales the previously filled slots by
the direct-branch weight.  P[i, j, k] is then the probability that k is the
highest intermediate node on an i -> j path, and P[i, j, i] the probability
of a direct connection.  The final matrix M holds the smooth minimum of the
costs of all visitable walks per pair.

Redundant updates are skipped: i == j (self loops), i == k or k == j (direct
paths are fixed at initialization), and pairs whose two-hop cost through k is
infinite.

The tape records, per pivot, the active-pair mask and both softmin weights,
which is enough to replay the forward pass exactly and to run the
reverse-mode adjoint in O(V^3) memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .smoothing import INF, check_beta, pair_softmin
from .graph import validate_cost_matrix


@dataclass
class TapeStep:
    """Per-pivot record: which pairs updated and with what softmin weights."""

    k: int
    active: np.ndarray    # (V, V) bool
    w_via: np.ndarray     # softmin weight of the two-hop branch, 0 where inactive
    w_direct: np.ndarray  # softmin weight of the current-cost branch, 1 where inactive
    value: np.ndarray     # updated smooth cost, only meaningful where active


@dataclass
class ForwardTape:
    """Everything needed to replay a forward pass or run its adjoint."""

    beta: float
    size: int
    m_input: np.ndarray
    steps: list[TapeStep]
    p_final: np.ndarray
    m_final: np.ndarray


def _init_shortcuts(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    p = np.zeros((n, n, n))
    src, dst = np.nonzero(np.isfinite(m))
    p[src, dst, src] = 1.0
    return p


def datasp_forward(m: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray, ForwardTape]:
    """Reference forward pass with explicit scalar loops.

    Returns (shortcut tensor P, smoothed distance matrix M, tape).
    """
    m_input = validate_cost_matrix(m)
    beta = check_beta(beta)
    n = m_input.shape[0]
    cur = m_input.copy()
    p = _init_shortcuts(cur)
    steps: list[TapeStep] = []
    for k in range(n):
        active = np.zeros((n, n), dtype=bool)
        w_via = np.zeros((n, n))
        w_direct = np.ones((n, n))
        value = np.full((n, n), INF)
        col = cur[:, k].copy()
        row = cur[k, :].copy()
        for i in range(n):
            if i == k or not math.isfinite(col[i]):
                continue
            for j in range(n):
                if j == k or j == i or not math.isfinite(row[j]):
                    continue
                a = col[i] + row[j]
                b = cur[i, j]
                val, ws, wd = pair_softmin(a, b, beta)
                active[i, j] = True
                w_via[i, j] = ws
                w_direct[i, j] = wd
                value[i, j] = val
                p[i, j, :k] *= wd
                p[i, j, i] *= wd if i > k else 1.0
                p[i, j, k] = ws
                cur[i, j] = val
        steps.append(TapeStep(k=k, active=active, w_via=w_via, w_direct=w_direct, value=value))
    tape = ForwardTape(beta=beta, size=n, m_input=m_input.copy(), steps=steps,
                       p_final=p, m_final=cur)
    return p, cur, tape


def datasp_forward_efficient(m: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray, ForwardTape]:
    """Vectorized forward pass; identical outputs to datasp_forward.

    For a fixed pivot k the (i, j) updates are independent: row k and
    column k of M are never written during iteration k (those pairs are
    skipped as redundant), so the whole update is a batched operation.
    """
    m_input = validate_cost_matrix(m)
    beta = check_beta(beta)
    n = m_input.shape[0]
    cur = m_input.copy()
    p = _init_shortcuts(cur)
    steps: list[TapeStep] = []
    offdiag = ~np.eye(n, dtype=bool)
    for k in range(n):
        two_hop = cur[:, k][:, None] + cur[k, :][None, :]
        active = np.isfinite(two_hop) & offdiag
        active[k, :] = False
        active[:, k] = False
        value, ws, wd = pair_softmin(two_hop, cur, beta)
        w_via = np.where(active, ws, 0.0)
        w_direct = np.where(active, wd, 1.0)
        if k > 0:
            p[:, :, :k] *= w_direct[:, :, None]
        if k + 1 < n:
            rows = np.arange(k + 1, n)
            cols = np.arange(n)
            p[rows[:, None], cols[None, :], rows[:, None]] *= w_direct[rows, :]
        p[:, :, k] = np.where(active, w_via, p[:, :, k])
        cur = np.where(active, value, cur)
        steps.append(TapeStep(k=k, active=active, w_via=w_via, w_direct=w_direct,
                              value=np.where(active, value, INF)))
    tape = ForwardTape(beta=beta, size=n, m_input=m_input.copy(), steps=steps,
                       p_final=p, m_final=cur)
    return p, cur, tape


def replay_tape(tape: ForwardTape) -> tuple[np.ndarray, np.ndarray]:
    """Re-run the recorded updates; must reproduce (P, M) bit-identically."""
    n = tape.size
    cur = tape.m_input.copy()
    p = _init_shortcuts(cur)
    for step in tape.steps:
        k = step.k
        if k > 0:
            p[:, :, :k] *= step.w_direct[:, :, None]
        if k + 1 < n:
            rows = np.arange(k + 1, n)
            cols = np.arange(n)
            p[rows[:, None], cols[None, :], rows[:, None]] *= step.w_direct[rows, :]
        p[:, :, k] = np.where(step.active, step.w_via, p[:, :, k])
        cur = np.where(step.active, step.value, cur)
    return p, cur


def datasp_backward(tape: ForwardTape, grad_p: np.ndarray, grad_m: np.ndarray) -> np.ndarray:
    """Reverse-mode adjoint: gradients of a scalar loss w.r.t. the input matrix.

    grad_p / grad_m are the upstream gradients w.r.t. the returned P and M.
    The pre-update shortcut state is reconstructed by dividing out the
    recorded direct-branch weights; a weight of exactly zero only occurs
    when the pair was previously unreachable, in which case the pre-update
    slots were structurally zero.
    """
    n = tape.size
    grad_p = np.asarray(grad_p, dtype=float)
    grad_m = np.asarray(grad_m, dtype=float)
    if grad_p.shape != (n, n, n) or grad_m.shape != (n, n):
        raise ValidationError(
            f"upstream gradients must have shapes {(n, n, n)} and {(n, n)}, "
            f"got {grad_p.shape} and {grad_m.shape}"
        )
    beta = tape.beta
    g_p = grad_p.copy()
    g_m = grad_m.copy()
    p_cur = tape.p_final.copy()
    cols = np.arange(n)
    for step in reversed(tape.steps):
        k = step.k
        active = step.active
        wv = step.w_via
        wd = step.w_direct
        safe = np.where(wd > 0.0, wd, 1.0)
        zero_scale = wd == 0.0

        g_ps = np.where(active, g_p[:, :, k], 0.0)
        g_p[:, :, k] = np.where(active, 0.0, g_p[:, :, k])

        p_old_prefix = p_cur[:, :, :k] / safe[:, :, None]
        p_old_prefix[zero_scale, :] = 0.0
        g_pd = (g_p[:, :, :k] * p_old_prefix).sum(axis=2)
        g_p[:, :, :k] *= wd[:, :, None]

        if k + 1 < n:
            rows = np.arange(k + 1, n)
            idx = (rows[:, None], cols[None, :], rows[:, None])
            p_old_diag = p_cur[idx] / safe[rows, :]
            p_old_diag[zero_scale[rows, :]] = 0.0
            g_pd[rows, :] += g_p[idx] * p_old_diag
            g_p[idx] *= wd[rows, :]
            p_cur[idx] = p_old_diag

        core = beta * wv * wd
        ga = np.where(active, g_m * wv + core * (g_pd - g_ps), 0.0)
        gb = np.where(active, g_m * wd + core * (g_ps - g_pd), 0.0)
        g_m = np.where(active, gb, g_m)
        g_m[:, k] += ga.sum(axis=1)
        g_m[k, :] += ga.sum(axis=0)

        p_cur[:, :, :k] = p_old_prefix
        p_cur[:, :, k] = np.where(active, 0.0, p_cur[:, :, k])

    g_m[~np.isfinite(tape.m_input)] = 0.0
    return g_m


def check_shortcut_tensor(p: np.ndarray, tol: float = 1e-9) -> None:
    """Raise unless P satisfies its distribution invariants."""
    n = p.shape[0]
    if p.shape != (n, n, n):
        raise ValidationError(f"shortcut tensor must be cubic, got {p.shape}")
    if (p < -tol).any() or (p > 1 + tol).any():
        raise ValidationError("shortcut entries must lie in [0, 1]")
    sums = p.sum(axis=2)
    offdiag = ~np.eye(n, dtype=bool)
    reachable = offdiag & (sums > 0.5)
    if not np.allclose(sums[reachable], 1.0, atol=tol):
        raise ValidationError("reachable rows of P must sum to 1")
    jj = np.arange(n)
    for i in range(n):
        bad = np.abs(p[i, jj, jj]) > tol
        bad[i] = False
        if bad.any():
            raise ValidationError("P[i, j, j] must be 0 for i != j")
