"""Nonnegative-matrix algebra: projective distance and Birkhoff coefficients.

Matrices and vectors are plain numpy arrays. Entries below ``ZERO_TOL`` are
treated as structural zeros when supports are computed.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from unipolar.errors import DomainError, ValidationError

ZERO_TOL = 1e-15


def as_nonneg_matrix(m) -> np.ndarray:
    """Return ``m`` as a 2-D float array, rejecting negative entries."""
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValidationError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("matrix has non-finite entries")
    if np.any(arr < 0):
        raise ValidationError("matrix has negative entries")
    return arr


def as_nonneg_vector(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"expected a 1-D vector, got shape {arr.shape}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValidationError("vector entries must be finite and nonnegative")
    return arr


def support(x, tol: float = ZERO_TOL) -> np.ndarray:
    """Boolean mask of entries treated as nonzero."""
    return np.asarray(x, dtype=float) > tol


def projective_distance(x, y) -> float:
    """Hilbert projective distance between two vectors with equal support.

    Returns ``inf`` never; returns 0 when both vectors are zero.
    """
    x = as_nonneg_vector(x)
    y = as_nonneg_vector(y)
    if x.shape != y.shape:
        raise DomainError("vectors have different lengths")
    sx, sy = support(x), support(y)
    if not np.array_equal(sx, sy):
        raise DomainError("projective distance needs vectors with equal supports")
    if not sx.any():
        return 0.0
    r = np.log(x[sx]) - np.log(y[sx])
    return float(r.max() - r.min())


def is_subrectangular(m) -> bool:
    """True iff every zero entry sits in an all-zero row or an all-zero column."""
    m = as_nonneg_matrix(m)
    nz = support(m)
    rows = nz.any(axis=1)
    cols = nz.any(axis=0)
    return bool(np.array_equal(nz, np.outer(rows, cols)))


def _positive_core(m: np.ndarray) -> np.ndarray:
    nz = support(m)
    return m[np.ix_(nz.any(axis=1), nz.any(axis=0))]


def phi(m) -> float:
    """Minimum cross-ratio over the nonzero rows and columns of ``m``."""
    m = as_nonneg_matrix(m)
    if not support(m).any():
        raise DomainError("phi is undefined for the zero matrix")
    if not is_subrectangular(m):
        raise DomainError("phi is undefined for a non-subrectangular matrix")
    core = np.log(_positive_core(m))
    # For rows i, k the inner min over column pairs j, l is
    # min_j (L[i,j]-L[k,j]) - max_l (L[i,l]-L[k,l]).
    diff = core[:, None, :] - core[None, :, :]
    val = (diff.min(axis=2) - diff.max(axis=2)).min()
    return float(np.exp(val))


def birkhoff(m) -> float:
    """Birkhoff contraction coefficient of a nonnegative matrix."""
    m = as_nonneg_matrix(m)
    if not support(m).any():
        return 0.0
    if not is_subrectangular(m):
        return 1.0
    s = np.sqrt(phi(m))
    return float((1.0 - s) / (1.0 + s))


def birkhoff_batch(ms: np.ndarray) -> np.ndarray:
    """Vectorized ``birkhoff`` over a stack of matrices with shape (B, r, c)."""
    ms = np.asarray(ms, dtype=float)
    nz = ms > ZERO_TOL
    rows = nz.any(axis=2)
    cols = nz.any(axis=1)
    rect = (nz == (rows[:, :, None] & cols[:, None, :])).all(axis=(1, 2))
    zero = ~rows.any(axis=1)
    with np.errstate(divide="ignore"):
        logm = np.where(nz, np.log(np.where(nz, ms, 1.0)), 0.0)
    # diff[b, i, k, j] = L[i, j] - L[k, j] on nonzero rows i, k and column j
    diff = logm[:, :, None, :] - logm[:, None, :, :]
    colmask = cols[:, None, None, :]
    lo = np.where(colmask, diff, np.inf).min(axis=3)
    hi = np.where(colmask, diff, -np.inf).max(axis=3)
    pair = rows[:, :, None] & rows[:, None, :]
    inner = np.where(pair, lo - hi, np.inf)
    out = np.ones(ms.shape[0])
    ok = rect & ~zero
    if ok.any():
        s = np.sqrt(np.exp(inner[ok].min(axis=(1, 2))))
        out[ok] = (1.0 - s) / (1.0 + s)
    out[zero] = 0.0
    return out


def contraction_budget(ms: Sequence) -> float:
    """Uniform bound on the projective distance after the product of ``ms``.

    Equals ``4 ln((1+b1)/(1-b1)) * prod_{l>=2} b_l`` with ``b_l = birkhoff(ms[l])``.
    """
    if len(ms) == 0:
        raise ValidationError("need at least one matrix")
    betas = []
    for m in ms:
        m = as_nonneg_matrix(m)
        if not support(m).any() or not is_subrectangular(m):
            raise DomainError("every matrix must be nonzero and subrectangular")
        betas.append(birkhoff(m))
    b1 = betas[0]
    return float(4.0 * np.log((1.0 + b1) / (1.0 - b1)) * np.prod(betas[1:]))


def normalized_product(ms: Iterable) -> tuple[np.ndarray, float]:
    """Product of matrices with per-step L1 renormalization.

    Returns ``(P, log_scale)`` such that the true product is ``P * exp(log_scale)``.
    Entries that fall below ``ZERO_TOL`` after renormalization are zeroed.
    """
    out = None
    log_scale = 0.0
    for m in ms:
        m = np.asarray(m, dtype=float)
        out = m.copy() if out is None else out @ m
        total = out.sum()
        if total <= 0:
            return np.zeros_like(out), -np.inf
        out /= total
        log_scale += np.log(total)
        out[out < ZERO_TOL] = 0.0
    if out is None:
        raise ValidationError("empty product")
    return out, log_scale
