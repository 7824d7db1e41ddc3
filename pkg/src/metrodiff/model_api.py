"""Model interface: energy, gradient, mobility, and the domain extension rule.

States are plain float64 numpy arrays.  A single state is a vector of shape
``(n,)``; ensemble code passes batches of shape ``(B, n)``.  Every public
method accepts either and returns results with matching leading shape.

The extension rule, applied uniformly by this base class: outside a model's
physical domain the energy is +inf, the gradient is zero, and the mobility is
the identity.  Proposals that land outside the domain therefore carry zero
acceptance probability, while internal stage evaluations that stray outside
remain finite and well defined.  Non-finite coordinates count as outside.

Subclasses implement the interior formulas (`_energy`, `_grad`, `_mobility`,
`_in_domain`) which are only ever called on rows already known to be inside
the domain, so they may divide by boundary distances freely.
"""

from __future__ import annotations

import numpy as np

from .linalg import CholeskyFactor, cholesky

__all__ = ["Model", "as_state_batch"]


def as_state_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    """Coerce a state or state batch to (B, dim); return (array, was_single)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
        single = True
    elif arr.ndim == 2:
        single = False
    else:
        raise ValueError(f"state array must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[-1] != dim:
        raise ValueError(f"state has dimension {arr.shape[-1]}, model expects {dim}")
    return arr, single


class Model:
    """Base class for diffusion models.

    Attributes set by subclasses:
      name                   registry name
      dim                    state dimension n
      has_constant_mobility  True if mobility(x) is the same matrix for all x
                             (required to be the identity whenever the domain
                             is not all of R^n, so the extension agrees)
    """

    name: str = "?"
    dim: int = 0
    has_constant_mobility: bool = False

    # -- subclass hooks ----------------------------------------------------
    def _in_domain(self, x: np.ndarray) -> np.ndarray:
        return np.ones(x.shape[:-1], dtype=bool)

    def _energy(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _mobility(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape[:-1] + (self.dim, self.dim))
        out[...] = np.eye(self.dim)
        return out

    # -- public batched interface ------------------------------------------
    def in_domain(self, x: np.ndarray) -> np.ndarray | bool:
        xb, single = as_state_batch(x, self.dim)
        mask = np.isfinite(xb).all(axis=-1)
        if mask.any():
            with np.errstate(all="ignore"):
                inner = self._in_domain(xb)
            mask = mask & inner
        return bool(mask[0]) if single else mask

    def energy(self, x: np.ndarray) -> np.ndarray | float:
        xb, single = as_state_batch(x, self.dim)
        mask = np.atleast_1d(self.in_domain(xb))
        out = np.full(xb.shape[:-1], np.inf)
        if mask.all():
            out = np.asarray(self._energy(xb), dtype=np.float64)
        elif mask.any():
            out[mask] = self._energy(xb[mask])
        return float(out[0]) if single else out

    def grad(self, x: np.ndarray) -> np.ndarray:
        xb, single = as_state_batch(x, self.dim)
        mask = np.atleast_1d(self.in_domain(xb))
        if mask.all():
            out = np.asarray(self._grad(xb), dtype=np.float64)
        else:
            out = np.zeros_like(xb)
            if mask.any():
                out[mask] = self._grad(xb[mask])
        return out[0] if single else out

    def mobility(self, x: np.ndarray) -> np.ndarray:
        xb, single = as_state_batch(x, self.dim)
        mask = np.atleast_1d(self.in_domain(xb))
        if mask.all():
            out = np.asarray(self._mobility(xb), dtype=np.float64)
        else:
            out = np.empty(xb.shape[:-1] + (self.dim, self.dim))
            out[...] = np.eye(self.dim)
            if mask.any():
                out[mask] = self._mobility(xb[mask])
        return out[0] if single else out

    # -- conveniences -------------------------------------------------------
    def constant_mobility_factor(self) -> CholeskyFactor:
        """Cholesky factor of the (constant) mobility, computed once."""
        if not self.has_constant_mobility:
            raise ValueError(f"{self.name}: mobility is configuration dependent")
        cached = getattr(self, "_const_factor", None)
        if cached is None:
            m = self.mobility(np.zeros(self.dim))
            cached = cholesky(m)
            self._const_factor = cached
        return cached

    def div_mobility(self, x: np.ndarray) -> np.ndarray:
        """Analytic divergence of the mobility where known."""
        if self.has_constant_mobility:
            xb, single = as_state_batch(x, self.dim)
            out = np.zeros_like(xb)
            return out[0] if single else out
        raise NotImplementedError(f"{self.name}: no analytic mobility divergence")

    def default_initial(self) -> np.ndarray:
        raise NotImplementedError(f"{self.name}: no default initial state")

    def __repr__(self) -> str:  # pragma: no cover
        return f"<{type(self).__name__} name={self.name!r} dim={self.dim}>"
