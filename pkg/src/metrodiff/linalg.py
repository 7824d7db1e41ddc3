"""Symmetric-positive-definite linear algebra used by the integrators.

Every mobility-like matrix in this package goes through this module, so the
rules live in one place:

* matrices are validated as symmetric to a relative tolerance of
  ``SYMMETRY_TOL`` in the max-abs norm.  Below the tolerance the matrix is
  replaced by its symmetric part; above it the input is rejected as not SPD
  (a genuinely asymmetric "mobility" means a bug upstream, not noise).
* factorizations are lower Cholesky, and the log-determinant of the factor is
  computed once and carried with it (acceptance ratios need it on every step).
* triangular solves are hand-rolled substitution loops vectorized over a
  leading batch axis.  A single state is just a batch of one, so ensemble and
  scalar runs share one arithmetic path and results do not depend on how an
  ensemble is chunked.

All arrays are float64.  Batch dimensions lead: matrices are ``(..., n, n)``,
right-hand sides ``(..., n)`` or ``(..., n, k)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotSpdError

__all__ = [
    "SYMMETRY_TOL",
    "CholeskyFactor",
    "cholesky",
    "cholesky_batch",
    "solve_lower",
    "solve_lower_transpose",
    "full_solve",
    "numeric_divergence",
]

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower triangular factor L with M = L L^T.

    ``log_det`` is the log-determinant of the factor itself (sum of log
    diagonal entries), so ``det M = exp(2 * log_det)``.
    """

    lower: np.ndarray
    log_det: np.ndarray


def _symmetric_part(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (symmetrized matrices, ok mask).

    ok is False where entries are non-finite or where the asymmetry exceeds
    SYMMETRY_TOL relative to the largest entry.
    """
    t = np.swapaxes(mats, -1, -2)
    finite = np.isfinite(mats).all(axis=(-2, -1))
    with np.errstate(invalid="ignore"):
        asym = np.abs(mats - t).max(axis=(-2, -1), initial=0.0)
        scale = np.abs(mats).max(axis=(-2, -1), initial=0.0)
    ok = finite & ~(asym > SYMMETRY_TOL * scale)
    return 0.5 * (mats + t), ok


def cholesky_batch(mats: np.ndarray) -> tuple[CholeskyFactor, np.ndarray]:
    """Factor a batch of SPD matrices, tolerating per-element failure.

    Elements that are non-finite, asymmetric beyond tolerance, or not positive
    definite come back as identity factors with ok=False; callers decide what a
    failure means (the Metropolis step treats it as a rejected proposal).
    """
    mats = np.asarray(mats, dtype=np.float64)
    n = mats.shape[-1]
    sym, ok = _symmetric_part(mats)
    eye = np.eye(n)
    safe = np.where(ok[..., None, None], sym, eye)
    try:
        lower = np.linalg.cholesky(safe)
    except np.linalg.LinAlgError:
        flat = safe.reshape(-1, n, n)
        lower = np.empty_like(flat)
        ok = ok.copy().reshape(-1)
        for i in range(flat.shape[0]):
            try:
                lower[i] = np.linalg.cholesky(flat[i])
            except np.linalg.LinAlgError:
                lower[i] = eye
                ok[i] = False
        lower = lower.reshape(safe.shape)
        ok = ok.reshape(safe.shape[:-2])
    diag = np.diagonal(lower, axis1=-2, axis2=-1)
    log_det = np.log(diag).sum(axis=-1)
    return CholeskyFactor(lower, log_det), ok


def cholesky(matrix: np.ndarray) -> CholeskyFactor:
    """Factor one SPD matrix, raising NotSpdError on any defect."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    _, sym_ok = _symmetric_part(m)
    if not sym_ok:
        raise NotSpdError("matrix is asymmetric beyond tolerance or non-finite")
    factor, ok = cholesky_batch(m[None])
    if not ok[0]:
        raise NotSpdError("matrix is not positive definite")
    return CholeskyFactor(factor.lower[0], factor.log_det[0])


def _as_columns(rhs: np.ndarray, matrix_ndim: int) -> tuple[np.ndarray, bool]:
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.ndim == matrix_ndim - 1:
        return rhs[..., None], True
    return rhs, False


def solve_lower(lower: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve L y = rhs by forward substitution (batched)."""
    lower = np.asarray(lower, dtype=np.float64)
    rhs, squeeze = _as_columns(rhs, lower.ndim)
    n = lower.shape[-1]
    batch = np.broadcast_shapes(lower.shape[:-2], rhs.shape[:-2])
    L = np.broadcast_to(lower, batch + (n, n))
    b = np.broadcast_to(rhs, batch + rhs.shape[-2:])
    out = np.empty(batch + rhs.shape[-2:], dtype=np.float64)
    for i in range(n):
        acc = b[..., i, :]
        if i:
            acc = acc - (L[..., i, :i, None] * out[..., :i, :]).sum(axis=-2)
        out[..., i, :] = acc / L[..., i, i, None]
    return out[..., 0] if squeeze else out


def solve_lower_transpose(lower: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve L^T x = rhs by back substitution (batched)."""
    lower = np.asarray(lower, dtype=np.float64)
    rhs, squeeze = _as_columns(rhs, lower.ndim)
    n = lower.shape[-1]
    batch = np.broadcast_shapes(lower.shape[:-2], rhs.shape[:-2])
    L = np.broadcast_to(lower, batch + (n, n))
    b = np.broadcast_to(rhs, batch + rhs.shape[-2:])
    out = np.empty(batch + rhs.shape[-2:], dtype=np.float64)
    for i in range(n - 1, -1, -1):
        acc = b[..., i, :]
        if i < n - 1:
            acc = acc - (L[..., i + 1 :, i, None] * out[..., i + 1 :, :]).sum(axis=-2)
        out[..., i, :] = acc / L[..., i, i, None]
    return out[..., 0] if squeeze else out


def full_solve(factor: CholeskyFactor, rhs: np.ndarray) -> np.ndarray:
    """Solve M x = rhs given M = L L^T."""
    return solve_lower_transpose(factor.lower, solve_lower(factor.lower, rhs))


def numeric_divergence(field, x: np.ndarray, step: float | None = None) -> np.ndarray:
    """Central-difference divergence of a matrix field.

    ``field`` maps a state vector (n,) to a matrix (n, n); the result is the
    vector with components sum_j d M_ij / d x_j.  Intended for tests and
    verification, not hot paths.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if step is None:
        step = 1e-5 * (1.0 + np.abs(x).max())
    div = np.zeros(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        diff = np.asarray(field(x + e)) - np.asarray(field(x - e))
        div += diff[:, j] / (2.0 * step)
    return div
