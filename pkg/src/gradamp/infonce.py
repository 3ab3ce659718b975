"""Batched info-NCE: similarities, probabilities, loss, and closed-form gradients.

The batch convention is diagonal-positive: target j is the positive for query i
iff i == j, every other target in the batch is a negative. All arithmetic is
done in float64 regardless of the callers' storage dtype; at temperature 0.02
the scaled similarities reach +-50 and single precision is not survivable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InputError, NumericalWarning
from .validation import (
    as_float_matrix,
    check_embedding_batch,
    check_same_shape,
    check_square,
    check_temperature,
)


class GradientPair(NamedTuple):
    """Gradients of the summed per-query loss w.r.t. query and target rows."""

    g_query: np.ndarray
    g_target: np.ndarray


@dataclass(frozen=True)
class PipelineResult:
    """Everything one loss/gradient evaluation produces on a batch."""

    loss_mean: float
    loss_per_query: np.ndarray
    grads: GradientPair
    probs: np.ndarray
    probs_amplified: np.ndarray


def similarity_matrix(queries, targets) -> np.ndarray:
    """Dot-product similarity S[i, j] = <query_i, target_j> in double precision."""
    q = check_embedding_batch(queries, "queries")
    t = check_embedding_batch(targets, "targets")
    check_same_shape(q, t, "queries", "targets")
    return q @ t.T


def softmax_probs(scores, tau: float) -> np.ndarray:
    """Row-wise softmax of scores / tau with per-row max subtraction.

    Row i is the classification distribution of query i over the batch
    targets; the diagonal entry is the positive-class probability.
    """
    s = check_square(scores, "scores")
    tau = check_temperature(tau)
    z = s / tau
    z -= z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def infonce_loss(probs) -> tuple[np.ndarray, float]:
    """Per-query cross-entropy -log p+ and its batch mean.

    Diagonal entries that underflowed to zero are clamped to the smallest
    positive normal so the loss stays finite; a NumericalWarning is emitted.
    """
    p = check_square(probs, "probs")
    diag = np.diag(p).copy()
    if (diag <= 0.0).any():
        warnings.warn(
            "positive-class probability underflowed to 0; clamping",
            NumericalWarning,
            stacklevel=2,
        )
        diag = np.maximum(diag, np.finfo(np.float64).tiny)
    per_query = -np.log(diag)
    return per_query, float(per_query.mean())


def infonce_grads(probs, queries, targets, tau: float) -> GradientPair:
    """Closed-form gradients of the summed per-query loss.

    For query i the gradient is a probability-weighted sum of negative-minus-
    positive target differences; for target j it collects the (p - indicator)
    weights of every query. Both reduce to single matmuls:

        g_query  = (P @ T - T) / tau
        g_target = (P.T @ Q - Q) / tau
    """
    p = check_square(probs, "probs")
    q = check_embedding_batch(queries, "queries")
    t = check_embedding_batch(targets, "targets")
    check_same_shape(q, t, "queries", "targets")
    if p.shape[0] != q.shape[0]:
        raise InputError(f"probs batch {p.shape[0]} != embeddings batch {q.shape[0]}")
    tau = check_temperature(tau)
    g_query = (p @ t - t) / tau
    g_target = (p.T @ q - q) / tau
    return GradientPair(g_query, g_target)


def infonce_pipeline(queries, targets, tau: float) -> PipelineResult:
    """Unamplified loss + gradients for one batch (the plain baseline path)."""
    s = similarity_matrix(queries, targets)
    p = softmax_probs(s, tau)
    per_query, mean = infonce_loss(p)
    grads = infonce_grads(p, queries, targets, tau)
    return PipelineResult(mean, per_query, grads, p, p)
