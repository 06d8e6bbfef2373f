"""Numerically robust kernels over vocabulary-sized vectors.

All functions are pure, operate on float64 internally, and break argmax ties
by the lowest index so results are reproducible across platforms.
"""
from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionError, DomainError, ParameterError

FloatA = NDArray[np.float64]

# Epsilon floor for log-ratio gains; shared by the layer-selection module.
LOG_RATIO_EPS = 1e-12

# Tolerance on the sum of a probability vector.
PROB_SUM_TOL = 1e-9


def as_logits(values) -> FloatA:
    """Validate and return a finite float64 logit vector."""
    z = np.asarray(values, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionError(f"logit vector must be 1-D, got shape {z.shape}")
    if z.size == 0:
        raise DimensionError("logit vector is empty")
    if not np.all(np.isfinite(z)):
        raise DomainError("logit vector contains NaN or infinity")
    return z


def as_probs(values) -> FloatA:
    """Validate and return a float64 probability vector.

    Entries must be non-negative and sum to 1 within PROB_SUM_TOL.
    """
    p = np.asarray(values, dtype=np.float64)
    if p.ndim != 1:
        raise DimensionError(f"probability vector must be 1-D, got shape {p.shape}")
    if p.size == 0:
        raise DimensionError("probability vector is empty")
    if not np.all(np.isfinite(p)):
        raise DomainError("probability vector contains NaN or infinity")
    if np.any(p < 0):
        raise DomainError("probability vector has negative entries")
    total = float(p.sum(dtype=np.float64))
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise DomainError(f"probabilities sum to {total!r}, not 1")
    return p


def softmax(logits, tau: float = 1.0) -> FloatA:
    """Temperature softmax computed with the max-subtraction trick.

    Returns exp(z/tau) / sum(exp(z/tau)) as float64. tau must be positive.
    """
    z = as_logits(logits)
    if not (tau > 0):
        raise ParameterError(f"temperature must be positive, got {tau!r}")
    shifted = (z - z.max()) / tau
    e = np.exp(shifted)
    return e / e.sum(dtype=np.float64)


def softmax_rows(rows, tau: float = 1.0) -> FloatA:
    """Row-wise temperature softmax for an (L, V) logit matrix."""
    m = np.asarray(rows, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] == 0:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("logit matrix contains NaN or infinity")
    if not (tau > 0):
        raise ParameterError(f"temperature must be positive, got {tau!r}")
    shifted = (m - m.max(axis=1, keepdims=True)) / tau
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True, dtype=np.float64)


def log_softmax(logits, tau: float = 1.0) -> FloatA:
    """Log of softmax(logits, tau), computed without forming small exps."""
    z = as_logits(logits)
    if not (tau > 0):
        raise ParameterError(f"temperature must be positive, got {tau!r}")
    shifted = (z - z.max()) / tau
    return shifted - np.log(np.exp(shifted).sum(dtype=np.float64))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in nats.

    jsd(p, q) = KL(p||m)/2 + KL(q||m)/2 with m = (p+q)/2 and natural
    logarithms; terms with a zero probability contribute zero. Bounded by
    ln 2, symmetric, and zero iff p == q.
    """
    pa = as_probs(p)
    qa = as_probs(q)
    if pa.shape != qa.shape:
        raise DimensionError(f"length mismatch: {pa.size} vs {qa.size}")
    m = 0.5 * (pa + qa)
    # m_i >= p_i/2 > 0 wherever p_i > 0, so the ratio is always well defined.
    kl_p = np.where(pa > 0, pa * np.log(np.where(pa > 0, pa, 1.0) / np.where(m > 0, m, 1.0)), 0.0)
    kl_q = np.where(qa > 0, qa * np.log(np.where(qa > 0, qa, 1.0) / np.where(m > 0, m, 1.0)), 0.0)
    return 0.5 * float(kl_p.sum(dtype=np.float64)) + 0.5 * float(kl_q.sum(dtype=np.float64))


def log_safe_ratio(a: float, b: float, eps: float = LOG_RATIO_EPS) -> float:
    """ln((a+eps)/(b+eps)) for probabilities a, b in [0, 1].

    Monotone increasing in a and decreasing in b; the epsilon floor keeps the
    ratio finite when either side is zero.
    """
    if not (eps > 0):
        raise ParameterError(f"eps must be positive, got {eps!r}")
    if a < 0 or b < 0:
        raise DomainError(f"probabilities must be non-negative, got a={a!r} b={b!r}")
    if a > 1 or b > 1:
        raise DomainError(f"probabilities must be <= 1, got a={a!r} b={b!r}")
    return float(np.log((a + eps) / (b + eps)))


def argmax_lowest(values, mask=None) -> int:
    """Index of the maximum value; ties resolve to the lowest index.

    With ``mask`` given, only True positions compete and the returned index
    refers to the full vector.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError("argmax needs a non-empty 1-D vector")
    if mask is None:
        return int(np.argmax(v))
    m = np.asarray(mask, dtype=bool)
    if m.shape != v.shape:
        raise DimensionError("mask shape does not match values")
    idx = np.flatnonzero(m)
    if idx.size == 0:
        raise ParameterError("mask selects no entries")
    return int(idx[np.argmax(v[idx])])
