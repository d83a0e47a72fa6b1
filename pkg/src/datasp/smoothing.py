"""Numerically stable smooth minimum and its weights over extended reals.

The smooth minimum of a vector v is -(1/beta) * log(sum_i exp(-beta*v[i]))
and its gradient is the softmin weight vector exp(-beta*v)/sum(exp(-beta*v)).
beta is a positive inverse temperature; beta -> inf recovers the hard min.

An entry of +inf marks an absent branch.  Infinite entries are categorical:
they are excluded from the log-sum-exp (zero mass, zero gradient) rather
than pushed through exp(), so no overflow, underflow or NaN can leak out
of them.  All computations subtract the finite minimum before
exponentiating, which keeps exp() arguments in [-inf, 0].
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

INF = float("inf")


def check_beta(beta: float) -> float:
    beta = float(beta)
    if not np.isfinite(beta) or beta <= 0.0:
        raise ValidationError(f"beta must be a positive finite real, got {beta!r}")
    return beta


def softmin_value(values, beta: float) -> float:
    """Smooth minimum of a vector of extended reals.

    Returns inf iff every entry is inf.  Raises ValidationError on an
    empty vector.
    """
    beta = check_beta(beta)
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValidationError("softmin_value requires a nonempty vector")
    finite = np.isfinite(v)
    if not finite.any():
        return INF
    vf = v[finite]
    m = vf.min()
    return float(m - np.log(np.exp(-beta * (vf - m)).sum()) / beta)


def softmin_weights(values, beta: float) -> np.ndarray:
    """Softmin weight vector; entries for inf inputs are exactly 0.

    Raises ValidationError when no entry is finite (no branch to weight).
    """
    beta = check_beta(beta)
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValidationError("softmin_weights requires a nonempty vector")
    finite = np.isfinite(v)
    if not finite.any():
        raise ValidationError("softmin_weights: no finite branch")
    w = np.zeros(v.shape)
    vf = v[finite]
    w[finite] = np.exp(-beta * (vf - vf.min()))
    w /= w.sum()
    return w


def softmin_vjp(values, beta: float, value_grad: float = 0.0, weight_grads=None) -> np.ndarray:
    """Gradient of (value_grad * softmin_value + <weight_grads, softmin_weights>) w.r.t. the inputs.

    Uses d(value)/dv = w and the weight Jacobian dw[a]/dv[b] = beta*w[a]*(w[b] - delta_ab).
    Entries for inf inputs receive gradient exactly 0.
    """
    beta = check_beta(beta)
    v = np.asarray(values, dtype=float)
    w = softmin_weights(v, beta)
    grad = float(value_grad) * w
    if weight_grads is not None:
        u = np.asarray(weight_grads, dtype=float)
        if u.shape != w.shape:
            raise ValidationError(f"weight_grads shape {u.shape} != input shape {w.shape}")
        if not np.isfinite(u).all():
            raise ValidationError("weight_grads must be finite")
        grad = grad + beta * w * (float(u @ w) - u)
    return grad


def pair_softmin(a, b, beta: float):
    """Elementwise smooth min of two extended-real arrays, with both weights.

    Returns (value, weight_a, weight_b).  Positions where both inputs are
    inf yield (inf, 0, 0); callers treat those as absent branches.
    """
    beta = check_beta(beta)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    fa = np.isfinite(a)
    fb = np.isfinite(b)
    shift = np.where(fa & fb, np.minimum(a, b), np.where(fa, a, b))
    ea = np.zeros(np.broadcast(a, b).shape)
    eb = np.zeros_like(ea)
    # shift is finite wherever the corresponding branch is, so the
    # subtraction below never sees inf - inf.
    np.subtract(a, shift, out=ea, where=fa)
    np.subtract(b, shift, out=eb, where=fb)
    ea = np.where(fa, np.exp(-beta * ea), 0.0)
    eb = np.where(fb, np.exp(-beta * eb), 0.0)
    denom = ea + eb
    any_finite = fa | fb
    safe = np.where(any_finite, denom, 1.0)
    value = np.where(any_finite, shift - np.log(safe) / beta, INF)
    wa = np.where(any_finite, ea / safe, 0.0)
    wb = np.where(any_finite, eb / safe, 0.0)
    return value, wa, wb
