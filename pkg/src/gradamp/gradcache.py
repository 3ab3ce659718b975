"""Chunked large-batch training: cache embedding gradients, re-forward chunks.

The loss and its embedding gradients need the whole batch at once (in-batch
negatives couple every row), but parameter gradients do not: once G_emb is
known, each chunk of the batch can be re-forwarded independently and its
slice of G_emb pushed back through the encoder. Peak live activation memory
is therefore proportional to the chunk size, not the batch size, at the cost
of one extra forward pass.

Chunk outputs are bitwise identical to a full-batch forward (the encoder has
no cross-sample coupling and a fixed reduction order), so the loss value
does not depend on the chunk size. Parameter-gradient accumulation runs in
fixed plan order, keeping whole training trajectories reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .amplifier import amplified_pipeline
from .encoder import EncoderParams, ParamGrads, adam_step, backward, forward
from .errors import InputError, InvalidConfigError, NonFiniteGradientError
from .infonce import PipelineResult, infonce_pipeline
from .validation import as_float_matrix

RUN_MODES = ("baseline", "ega")


@dataclass(frozen=True)
class ChunkPlan:
    """Ordered contiguous index ranges covering [0, batch_size)."""

    batch_size: int
    chunk_size: int
    ranges: tuple[tuple[int, int], ...]


@dataclass
class CacheMeter:
    """Tracks the largest activation cache held live at any point."""

    peak_floats: int = 0

    def observe(self, floats: int) -> None:
        if floats > self.peak_floats:
            self.peak_floats = floats


def make_plan(batch_size: int, chunk_size: int) -> ChunkPlan:
    b, c = int(batch_size), int(chunk_size)
    if b < 1:
        raise InvalidConfigError(f"batch size must be >= 1, got {b}")
    if not 1 <= c <= b:
        raise InvalidConfigError(f"chunk size must be in [1, {b}], got {c}")
    ranges = tuple((start, min(start + c, b)) for start in range(0, b, c))
    return ChunkPlan(b, c, ranges)


def _check_plan(plan: ChunkPlan, n_rows: int) -> None:
    if plan.batch_size != n_rows:
        raise InputError(f"plan covers {plan.batch_size} rows, batch has {n_rows}")


def embed_in_chunks(
    params: EncoderParams, inputs, plan: ChunkPlan, meter: CacheMeter | None = None
) -> np.ndarray:
    """Forward the batch chunk by chunk; result is bitwise equal to one full
    forward pass. Caches are dropped as soon as each chunk's output is taken."""
    x = as_float_matrix(inputs, "inputs")
    _check_plan(plan, x.shape[0])
    out = np.empty((x.shape[0], params.output_dim))
    for start, stop in plan.ranges:
        emb, cache = forward(params, x[start:stop])
        if meter is not None:
            meter.observe(cache.live_values())
        out[start:stop] = emb
    return out


def cached_backward(
    params: EncoderParams,
    inputs,
    g_emb,
    plan: ChunkPlan,
    meter: CacheMeter | None = None,
) -> ParamGrads:
    """Parameter gradients for the whole batch, one chunk at a time.

    Each chunk is re-forwarded (with cache) and its slice of g_emb pushed
    back; per-chunk gradients accumulate in plan order into double-precision
    totals.
    """
    x = as_float_matrix(inputs, "inputs")
    # g_emb is deliberately not routed through the finite-input validator:
    # a NaN/inf here is a runtime numerical event that the training loop's
    # skip policy must see as NonFiniteGradientError, not caller garbage.
    g = np.asarray(g_emb, dtype=np.float64)
    if g.ndim != 2:
        raise InputError(f"g_emb must be 2-D, got shape {g.shape}")
    _check_plan(plan, x.shape[0])
    if g.shape[0] != x.shape[0]:
        raise InputError(f"g_emb rows {g.shape[0]} != input rows {x.shape[0]}")
    if not np.isfinite(g).all():
        raise NonFiniteGradientError("non-finite embedding gradient; aborting step")
    total = None
    for start, stop in plan.ranges:
        _, cache = forward(params, x[start:stop])
        if meter is not None:
            meter.observe(cache.live_values())
        piece = backward(params, cache, g[start:stop])
        if total is None:
            total = piece
        else:
            total.add_(piece)
    return total


@dataclass
class TrainStepResult:
    loss_mean: float
    applied: bool
    diagnostics: dict[str, Any] = field(default_factory=dict)


def train_step(
    params: EncoderParams,
    query_inputs,
    target_inputs,
    *,
    tau: float,
    alpha: float,
    plan: ChunkPlan,
    lr: float,
    mode: str = "ega",
    hardness: str = "relative",
) -> TrainStepResult:
    """One full training step, updating params in place.

    Sequence: chunked embedding of both towers, full-batch loss/gradient
    evaluation (amplified or baseline), chunked backward for each tower with
    the two towers' parameter gradients summed (shared weights), then one
    Adam step. Any non-finite event leaves the parameters untouched and is
    reported through ``applied``/diagnostics instead of raising.
    """
    if mode not in RUN_MODES:
        raise InvalidConfigError(f"unknown mode {mode!r}; expected one of {RUN_MODES}")
    q_in = as_float_matrix(query_inputs, "query_inputs")
    t_in = as_float_matrix(target_inputs, "target_inputs")
    if q_in.shape[0] != t_in.shape[0]:
        raise InputError(
            f"query batch {q_in.shape[0]} != target batch {t_in.shape[0]}"
        )
    meter = CacheMeter()
    q_emb = embed_in_chunks(params, q_in, plan, meter)
    t_emb = embed_in_chunks(params, t_in, plan, meter)

    result: PipelineResult
    if mode == "baseline":
        result = infonce_pipeline(q_emb, t_emb, tau)
    else:
        result = amplified_pipeline(q_emb, t_emb, tau, alpha, hardness)

    b = q_emb.shape[0]
    off_diag_max = 0.0
    if b > 1:
        off = ~np.eye(b, dtype=bool)
        off_diag_max = float(result.probs_amplified[off].max())
    diagnostics: dict[str, Any] = {
        "mean_prob_positive": float(np.diag(result.probs).mean()),
        "max_negative_prob_amplified": off_diag_max,
        "peak_cache_floats": 0,
        "flagged_nonfinite": False,
    }

    applied = False
    try:
        grads = cached_backward(params, q_in, result.grads.g_query, plan, meter)
        grads.add_(cached_backward(params, t_in, result.grads.g_target, plan, meter))
    except NonFiniteGradientError:
        diagnostics["flagged_nonfinite"] = True
    else:
        diagnostics["grad_norm"] = grads.norm()
        applied = adam_step(params, grads, lr)
        if not applied:
            diagnostics["flagged_nonfinite"] = True
    diagnostics["peak_cache_floats"] = meter.peak_floats
    return TrainStepResult(result.loss_mean, applied, diagnostics)
