"""Two-tower MLP encoder with manual forward/backward and Adam.

One parameter set serves both towers: queries and targets pass through the
same network and are compared in the shared embedding space. Hidden layers
use the exact (erf-based) GELU; the final layer is linear and its output is
L2-normalized, so every embedding row is unit-norm.

Matrix products go through np.einsum rather than ``@``. BLAS GEMM picks
different blocking for different batch sizes, so slicing a batch and
re-running can change low bits; einsum's fixed reduction order keeps a
chunked forward bitwise identical to the full-batch forward, which the
chunked training pipeline relies on.

A bare lookup table of trainable embeddings (no hidden layers) is the
widths=[K, d], use_bias=False configuration fed with one-hot rows: the
forward pass then returns normalized rows of the single weight matrix.
"""

from __future__ import annotations

import io
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import (
    BadMagicError,
    InputError,
    InvalidConfigError,
    NonFiniteGradientError,
    NumericalWarning,
    TruncatedPayloadError,
)
from .validation import as_float_matrix

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Rows with ||z|| below this get the guard added to the denominator instead
# of dividing by (near) zero.
TINY_NORM = 1e-12

_CHECKPOINT_MAGIC = b"EGAP"
_CHECKPOINT_VERSION = 1
_FLAG_HAS_BIAS = 0x1


@dataclass
class EncoderParams:
    """MLP parameters plus Adam moment buffers and the update counter."""

    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray] | None
    m_weights: list[np.ndarray] = field(repr=False, default_factory=list)
    v_weights: list[np.ndarray] = field(repr=False, default_factory=list)
    m_biases: list[np.ndarray] | None = field(repr=False, default=None)
    v_biases: list[np.ndarray] | None = field(repr=False, default=None)
    step_count: int = 0

    @property
    def use_bias(self) -> bool:
        return self.biases is not None

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    def num_parameters(self) -> int:
        n = sum(w.size for w in self.weights)
        if self.biases is not None:
            n += sum(b.size for b in self.biases)
        return n


@dataclass
class ActivationCache:
    """Everything one forward pass must retain for the matching backward.

    layer_inputs[i] is the batch entering layer i (so layer_inputs[0] is the
    raw input); pre_activations[i] is layer i's linear output before GELU,
    with the last entry being the pre-normalization embedding z.
    """

    layer_inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    z_normalized: np.ndarray
    norm_denoms: np.ndarray
    tiny_norm_count: int

    @property
    def batch_size(self) -> int:
        return self.layer_inputs[0].shape[0]

    def live_values(self) -> int:
        """Total floats held by this cache (memory accounting)."""
        n = sum(a.size for a in self.layer_inputs)
        n += sum(a.size for a in self.pre_activations)
        n += self.z_normalized.size + self.norm_denoms.size
        return n


@dataclass
class ParamGrads:
    """Gradients shaped like EncoderParams' weights and biases."""

    weights: list[np.ndarray]
    biases: list[np.ndarray] | None

    def all_finite(self) -> bool:
        arrays = list(self.weights) + (list(self.biases) if self.biases else [])
        return all(np.isfinite(a).all() for a in arrays)

    def add_(self, other: "ParamGrads") -> None:
        for acc, delta in zip(self.weights, other.weights):
            acc += delta
        if self.biases is not None:
            for acc, delta in zip(self.biases, other.biases):
                acc += delta

    def max_abs(self) -> float:
        arrays = list(self.weights) + (list(self.biases) if self.biases else [])
        return max(float(np.abs(a).max()) for a in arrays)

    def norm(self) -> float:
        total = sum(float(np.sum(a * a)) for a in self.weights)
        if self.biases is not None:
            total += sum(float(np.sum(a * a)) for a in self.biases)
        return float(np.sqrt(total))


def zero_grads(params: EncoderParams) -> ParamGrads:
    gw = [np.zeros_like(w) for w in params.weights]
    gb = [np.zeros_like(b) for b in params.biases] if params.biases is not None else None
    return ParamGrads(gw, gb)


def init_encoder(layer_widths, seed: int, use_bias: bool = True) -> EncoderParams:
    """Deterministic uniform initialization in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    widths = tuple(int(w) for w in layer_widths)
    if len(widths) < 2:
        raise InvalidConfigError(
            f"need at least an input and an output width, got {list(widths)}"
        )
    if any(w < 1 for w in widths):
        raise InvalidConfigError(f"layer widths must be >= 1, got {list(widths)}")
    rng = np.random.default_rng(seed)
    weights = []
    biases = [] if use_bias else None
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        if use_bias:
            biases.append(rng.uniform(-bound, bound, size=fan_out))
    params = EncoderParams(widths, weights, biases)
    params.m_weights = [np.zeros_like(w) for w in weights]
    params.v_weights = [np.zeros_like(w) for w in weights]
    if use_bias:
        params.m_biases = [np.zeros_like(b) for b in biases]
        params.v_biases = [np.zeros_like(b) for b in biases]
    return params


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU: x * Phi(x) with the Gaussian CDF via erf."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """d/dx GELU = Phi(x) + x * phi(x)."""
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # einsum, not @: fixed reduction order makes chunked forwards bitwise
    # reproducible regardless of batch slicing.
    return np.einsum("ij,jk->ik", a, b)


def forward(params: EncoderParams, inputs) -> tuple[np.ndarray, ActivationCache]:
    """Run the MLP and L2-normalize the final layer's output."""
    x = as_float_matrix(inputs, "inputs")
    if x.shape[1] != params.input_dim:
        raise InputError(
            f"input width {x.shape[1]} does not match first layer width {params.input_dim}"
        )
    layer_inputs = []
    pre_activations = []
    h = x
    last = len(params.weights) - 1
    for i, w in enumerate(params.weights):
        layer_inputs.append(h)
        pre = _matmul(h, w)
        if params.biases is not None:
            pre = pre + params.biases[i]
        pre_activations.append(pre)
        h = gelu(pre) if i < last else pre

    z = h
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    tiny = norms < TINY_NORM
    tiny_count = int(tiny.sum())
    if tiny_count:
        warnings.warn(
            f"{tiny_count} embedding row(s) with norm < {TINY_NORM:g}; "
            "guarding the normalization denominator",
            NumericalWarning,
            stacklevel=2,
        )
    denoms = np.where(tiny, norms + TINY_NORM, norms)
    z_hat = z / denoms[:, None]
    cache = ActivationCache(layer_inputs, pre_activations, z_hat, denoms, tiny_count)
    return z_hat, cache


def normalize_backward(z, g_out) -> np.ndarray:
    """Jacobian-vector product of row-wise L2 normalization.

    g_in = (g_out - (z_hat . g_out) z_hat) / ||z||, rows with near-zero norm
    guarded the same way as the forward pass.
    """
    z = as_float_matrix(z, "z")
    g = as_float_matrix(g_out, "g_out")
    if z.shape != g.shape:
        raise InputError(f"z shape {z.shape} != g_out shape {g.shape}")
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    tiny = norms < TINY_NORM
    if tiny.any():
        warnings.warn(
            f"{int(tiny.sum())} row(s) with norm < {TINY_NORM:g} in normalize_backward",
            NumericalWarning,
            stacklevel=2,
        )
    denoms = np.where(tiny, norms + TINY_NORM, norms)
    z_hat = z / denoms[:, None]
    radial = np.einsum("ij,ij->i", z_hat, g)
    return (g - radial[:, None] * z_hat) / denoms[:, None]


def _normalize_backward_cached(cache: ActivationCache, g_out: np.ndarray) -> np.ndarray:
    z_hat = cache.z_normalized
    radial = np.einsum("ij,ij->i", z_hat, g_out)
    return (g_out - radial[:, None] * z_hat) / cache.norm_denoms[:, None]


def backward(params: EncoderParams, cache: ActivationCache, g_emb) -> ParamGrads:
    """Reverse-mode gradients for all parameters.

    g_emb is the loss gradient w.r.t. the normalized embeddings that the
    matching forward call produced.
    """
    g = as_float_matrix(g_emb, "g_emb")
    if g.shape[0] != cache.batch_size or g.shape[1] != params.output_dim:
        raise InputError(
            f"g_emb shape {g.shape} does not match cache batch "
            f"({cache.batch_size}, {params.output_dim})"
        )
    if len(cache.layer_inputs) != len(params.weights):
        raise InputError("activation cache does not match this architecture")

    grads = zero_grads(params)
    # Through the normalization, then down the layers; g holds the gradient
    # w.r.t. the current layer's pre-activation.
    g = _normalize_backward_cached(cache, g)
    for i in reversed(range(len(params.weights))):
        grads.weights[i][...] = np.einsum("bi,bo->io", cache.layer_inputs[i], g)
        if grads.biases is not None:
            grads.biases[i][...] = g.sum(axis=0)
        if i > 0:
            g = np.einsum("bo,io->bi", g, params.weights[i])
            g = g * gelu_grad(cache.pre_activations[i - 1])
    return grads


def adam_step(params: EncoderParams, grads: ParamGrads, lr: float) -> bool:
    """One Adam update in place. Returns False (and changes nothing) if any
    gradient entry is non-finite."""
    if not np.isfinite(lr) or lr < 0:
        raise InvalidConfigError(f"learning rate must be finite and >= 0, got {lr}")
    if not grads.all_finite():
        return False
    params.step_count += 1
    t = params.step_count
    corr1 = 1.0 - ADAM_BETA1**t
    corr2 = 1.0 - ADAM_BETA2**t

    def update(p, g, m, v):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + ADAM_EPS)

    for p, g, m, v in zip(params.weights, grads.weights, params.m_weights, params.v_weights):
        update(p, g, m, v)
    if params.biases is not None:
        for p, g, m, v in zip(params.biases, grads.biases, params.m_biases, params.v_biases):
            update(p, g, m, v)
    for arr in params.weights + (params.biases or []):
        if not np.isfinite(arr).all():
            raise NonFiniteGradientError("parameters became non-finite after update")
    return True


def save_checkpoint(path, params: EncoderParams) -> None:
    """Write parameters to the EGAP binary format.

    Layout: magic "EGAP", u16 version, u16 flags (bit 0 = has biases),
    u32 width count, widths as u64, then each weight matrix and (if present)
    each bias vector as little-endian float64, row-major, in layer order.
    Optimizer moments are not stored; loading starts Adam fresh.
    """
    buf = io.BytesIO()
    flags = _FLAG_HAS_BIAS if params.use_bias else 0
    buf.write(_CHECKPOINT_MAGIC)
    buf.write(struct.pack("<HHI", _CHECKPOINT_VERSION, flags, len(params.widths)))
    buf.write(struct.pack(f"<{len(params.widths)}Q", *params.widths))
    for w in params.weights:
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
    if params.biases is not None:
        for b in params.biases:
            buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> EncoderParams:
    """Read an EGAP checkpoint written by save_checkpoint."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != _CHECKPOINT_MAGIC:
        raise BadMagicError(
            f"not a checkpoint file: expected magic {_CHECKPOINT_MAGIC!r}"
        )
    offset = 4
    if len(raw) < offset + 8:
        raise TruncatedPayloadError("checkpoint header truncated")
    version, flags, n_widths = struct.unpack_from("<HHI", raw, offset)
    offset += 8
    if version != _CHECKPOINT_VERSION:
        raise BadMagicError(f"unsupported checkpoint version {version}")
    if len(raw) < offset + 8 * n_widths:
        raise TruncatedPayloadError("checkpoint width table truncated")
    widths = struct.unpack_from(f"<{n_widths}Q", raw, offset)
    offset += 8 * n_widths
    if n_widths < 2:
        raise TruncatedPayloadError(f"checkpoint needs >= 2 widths, found {n_widths}")
    use_bias = bool(flags & _FLAG_HAS_BIAS)

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        end = offset + 8 * count
        if len(raw) < end:
            raise TruncatedPayloadError(
                f"checkpoint payload truncated: needed {end} bytes, have {len(raw)}"
            )
        arr = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
        return arr

    weights = [take((fi, fo)) for fi, fo in zip(widths[:-1], widths[1:])]
    biases = [take((fo,)) for fo in widths[1:]] if use_bias else None
    if offset != len(raw):
        raise TruncatedPayloadError(
            f"checkpoint has {len(raw) - offset} unexpected trailing bytes"
        )
    params = EncoderParams(tuple(int(w) for w in widths), weights, biases)
    params.m_weights = [np.zeros_like(w) for w in weights]
    params.v_weights = [np.zeros_like(w) for w in weights]
    if use_bias:
        params.m_biases = [np.zeros_like(b) for b in biases]
        params.v_biases = [np.zeros_like(b) for b in biases]
    return params
