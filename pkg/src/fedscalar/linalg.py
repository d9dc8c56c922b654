"""Dense float64 vector/matrix primitives shared by every other module.

All operations are pure functions over numpy arrays.  Reductions use numpy's
fixed single-threaded accumulation order at these sizes (no parallel
reduction inside a single inner product), so repeated runs on one platform
are bit-identical.  Vectors here are small (a few hundred entries), dense,
and always float64.
"""

from __future__ import annotations

import numpy as np

# A ParamVector is a flat, finite float64 array of length d >= 1.
# A DenseMatrix is a row-major 2-D float64 array.
ParamVector = np.ndarray
DenseMatrix = np.ndarray


def as_param_vector(values, check_finite: bool = True) -> ParamVector:
    """Coerce to a flat float64 array, rejecting NaN/Inf entries."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError(f"expected a flat vector, got shape {vec.shape}")
    if check_finite and not np.all(np.isfinite(vec)):
        raise ValueError("vector contains non-finite entries")
    return vec


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def inner(a: ParamVector, b: ParamVector) -> float:
    """Inner product <a, b> with a fixed deterministic accumulation order."""
    _check_same_dim(a, b)
    return float(np.dot(a, b))


def axpy(alpha: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return y + alpha * x elementwise (inputs are never mutated)."""
    _check_same_dim(x, y)
    return y + alpha * x


def outer(a: ParamVector, b: ParamVector) -> DenseMatrix:
    """Outer product a b^T; entry (i, j) is exactly a[i] * b[j]."""
    return np.outer(a, b)


def norm_sq(a: ParamVector) -> float:
    """Squared Euclidean norm <a, a>; nonnegative by construction."""
    return float(np.dot(a, a))
