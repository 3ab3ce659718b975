"""Hardness-weighted gradient amplification for in-batch negatives.

A negative's influence on the info-NCE gradients is exactly its softmax
probability. This module rescales those probabilities so that hard negatives
(similarity close to, or above, the query-positive similarity) contribute
more, while keeping each row's total negative probability mass unchanged.
The positive's probability is never touched, so the gradient structure stays
that of info-NCE; only the split of the negative mass moves.

Two hardness flavors are supported:

* ``relative`` -- exp(alpha * (s_neg - s_pos)): hardness measured against the
  query-positive similarity of the same row.
* ``absolute`` -- exp(alpha * s_neg): hardness from the query-negative
  similarity alone.

Because the amplified row is renormalized, the two flavors differ only by a
per-row constant factor exp(-alpha * s_pos) and therefore produce identical
amplified probabilities; both are kept so ablations can state that fact
empirically.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import InvalidConfigError, NumericalWarning
from .infonce import (
    GradientPair,
    PipelineResult,
    infonce_loss,
    similarity_matrix,
    softmax_probs,
)
from .validation import (
    check_alpha,
    check_embedding_batch,
    check_same_shape,
    check_square,
    check_temperature,
)

HARDNESS_MODES = ("relative", "absolute")

# Exponent clamp applied before exp(). At the default alpha=20 with unit-norm
# embeddings the exponent lives in [-40, 40], so the clamp is inactive unless
# callers feed unnormalized vectors.
EXPONENT_CLAMP = 60.0


def hardness_matrix(scores, alpha: float, mode: str = "relative") -> np.ndarray:
    """Per-pair hardness scores H[i, j] for target j as a negative of query i.

    The diagonal (the positives) is defined as 1 and never participates in
    amplification.
    """
    s = check_square(scores, "scores")
    alpha = check_alpha(alpha)
    if mode == "relative":
        exponent = alpha * (s - np.diag(s)[:, None])
    elif mode == "absolute":
        exponent = alpha * s
    else:
        raise InvalidConfigError(f"unknown hardness mode {mode!r}; expected one of {HARDNESS_MODES}")
    np.clip(exponent, -EXPONENT_CLAMP, EXPONENT_CLAMP, out=exponent)
    h = np.exp(exponent)
    np.fill_diagonal(h, 1.0)
    return h


def amplify_probs(probs, hardness) -> np.ndarray:
    """Reweight each row's negative probabilities by hardness, preserving mass.

    Off-diagonal entries are multiplied by their hardness score and then
    renormalized so the row's negative mass equals the original
    sum of negative probabilities. The diagonal is copied unchanged.

    A row whose reweighted sum underflows to zero falls back to its original
    probabilities (degraded but finite beats NaN) and emits a
    NumericalWarning.
    """
    p = check_square(probs, "probs")
    h = check_square(hardness, "hardness")
    check_same_shape(p, h, "probs", "hardness")
    b = p.shape[0]
    if b == 1:
        return p.copy()

    off = ~np.eye(b, dtype=bool)
    raw = np.where(off, p * h, 0.0)
    neg_mass = np.where(off, p, 0.0).sum(axis=1)
    denom = raw.sum(axis=1)

    fallback = (denom == 0.0) & (neg_mass > 0.0)
    if fallback.any():
        warnings.warn(
            f"amplified negative mass underflowed in {int(fallback.sum())} row(s); "
            "falling back to unamplified probabilities there",
            NumericalWarning,
            stacklevel=2,
        )
    safe_denom = np.where(denom > 0.0, denom, 1.0)
    scale = np.where(denom > 0.0, neg_mass / safe_denom, 0.0)
    amplified = raw * scale[:, None]
    amplified[fallback] = np.where(off[fallback], p[fallback], 0.0)
    amplified[np.diag_indices(b)] = np.diag(p)
    return amplified


def weighting_matrix(probs_amplified) -> np.ndarray:
    """W = amplified probabilities minus the identity; rows sum to zero."""
    p = check_square(probs_amplified, "probs_amplified")
    w = p.copy()
    w[np.diag_indices(p.shape[0])] -= 1.0
    return w


def amplified_gradients(weights, queries, targets, tau: float) -> GradientPair:
    """Batched gradients from the weighting matrix.

    Query i's gradient sums W[i, j] * (t_j - t_i) over j; the i-th term
    vanishes because the difference is zero. Target j's gradient sums
    W[i, j] * q_i over i. The query sum is evaluated through the identity
    sum_j W[i,j] t_j - (sum_j W[i,j]) t_i instead of materializing the
    B x B x d difference tensor; the row-sum term is kept (it is only
    analytically zero) so the result matches the materialized form to
    rounding.
    """
    w = check_square(weights, "weights")
    q = check_embedding_batch(queries, "queries")
    t = check_embedding_batch(targets, "targets")
    check_same_shape(q, t, "queries", "targets")
    tau = check_temperature(tau)
    row_sums = w.sum(axis=1)
    g_query = (w @ t - row_sums[:, None] * t) / tau
    g_target = (w.T @ q) / tau
    return GradientPair(g_query, g_target)


def amplified_pipeline(
    queries, targets, tau: float, alpha: float, mode: str = "relative"
) -> PipelineResult:
    """Full amplified loss/gradient evaluation on one batch.

    The reported loss is always the plain info-NCE value: amplification is a
    gradient modulator, not a different objective. At alpha=0 the gradients
    coincide with the baseline path.
    """
    s = similarity_matrix(queries, targets)
    p = softmax_probs(s, tau)
    per_query, mean = infonce_loss(p)
    h = hardness_matrix(s, alpha, mode)
    p_amp = amplify_probs(p, h)
    w = weighting_matrix(p_amp)
    grads = amplified_gradients(w, queries, targets, tau)
    return PipelineResult(mean, per_query, grads, p, p_amp)
