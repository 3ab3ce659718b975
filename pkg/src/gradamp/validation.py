"""Input validation helpers for array arguments.

All numeric entry points normalize their inputs through these helpers so that
shape and finiteness violations fail early with a clear message instead of
surfacing as broadcast errors deep inside a matmul.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError, InvalidConfigError

UNIT_NORM_ATOL = 1e-6


def as_float_matrix(x, name: str = "array") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite entries")
    return arr


def check_embedding_batch(x, name: str = "embeddings") -> np.ndarray:
    """Validate a batch of row embeddings: 2-D, finite, B >= 1, d >= 2."""
    arr = as_float_matrix(x, name)
    if arr.shape[0] < 1 or arr.shape[1] < 2:
        raise InputError(f"{name} needs B >= 1 and d >= 2, got shape {arr.shape}")
    return arr


def check_unit_rows(x, name: str = "embeddings", atol: float = UNIT_NORM_ATOL) -> np.ndarray:
    """check_embedding_batch plus the unit-norm row invariant."""
    arr = check_embedding_batch(x, name)
    norms = np.sqrt(np.einsum("ij,ij->i", arr, arr))
    if not np.allclose(norms, 1.0, atol=atol, rtol=0.0):
        worst = float(np.abs(norms - 1.0).max())
        raise InputError(f"{name} rows must be unit-norm (worst deviation {worst:.3e})")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape != b.shape:
        raise InputError(f"{name_a} shape {a.shape} != {name_b} shape {b.shape}")


def check_square(x, name: str = "matrix") -> np.ndarray:
    arr = as_float_matrix(x, name)
    if arr.shape[0] != arr.shape[1]:
        raise InputError(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_temperature(tau: float) -> float:
    tau = float(tau)
    if not np.isfinite(tau) or tau <= 0.0:
        raise InvalidConfigError(f"temperature must be a positive finite real, got {tau}")
    return tau


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not np.isfinite(alpha) or alpha < 0.0:
        raise InvalidConfigError(f"hardness scale must be >= 0 and finite, got {alpha}")
    return alpha
