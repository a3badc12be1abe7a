"""Finite-difference reference implementations used to audit the tape."""

from __future__ import annotations

import numpy as np

from ..errors import OracleError


def numerical_jacobian(f, x, h=1e-5):
    """Central-difference Jacobian of a vector map.

    ``f`` takes and returns 1-D float arrays.  Result has shape
    (out_size, in_size).  Raises OracleError if any probe produces a
    non-finite value.
    """
    x = np.asarray(x, dtype=np.float64)
    base = np.asarray(f(x), dtype=np.float64)
    if not np.all(np.isfinite(base)):
        raise OracleError("function value is not finite at the probe point")
    jac = np.zeros((base.size, x.size))
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[j] += h
        xm.flat[j] -= h
        fp = np.asarray(f(xp), dtype=np.float64).ravel()
        fm = np.asarray(f(xm), dtype=np.float64).ravel()
        col = (fp - fm) / (2.0 * h)
        if not np.all(np.isfinite(col)):
            raise OracleError(f"non-finite finite-difference column at index {j}")
        jac[:, j] = col
    return jac


def numerical_gradient(f, x, h=1e-5):
    """Central-difference gradient of a scalar function of an ndarray."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[j] += h
        xm.flat[j] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleError(f"non-finite probe at flat index {j}")
        flat[j] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric):
    """max over entries of |a - n| / max(1, |a|, |n|)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise OracleError(f"shape mismatch: {a.shape} vs {n.shape}")
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
