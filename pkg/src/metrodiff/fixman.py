"""Trapezoidal predictor-corrector baseline with explosion rejection.

One step from x0 with noise xi ~ N(0, beta^{-1} I), writing M0 = M(x0),
B0 = chol(M0), f0 = M0 DU(x0):

  predictor  xp = x0 - h f0 + sqrt(2h) B0 xi
  corrector  x1 = x0 - (h/2) (f0 + M(xp) DU(xp))
                  + (sqrt(2h)/2) (M0 + M(xp)) B0^{-T} xi

There is no accept/reject mechanism, so nothing stops a large force from
driving the state out of the domain.  A step "explodes" when the predictor
or corrector leaves the domain, any coordinate goes non-finite, or the
energy there is non-finite; the surrounding drivers then discard the whole
trajectory, and ensemble statistics are taken over survivors while the
rejected fraction is reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotSpdError
from .linalg import cholesky_batch, solve_lower_transpose
from .model_api import Model

__all__ = [
    "FixmanConfig",
    "FixmanResult",
    "fixman_step",
    "fixman_step_batch",
    "run_with_rejection",
]


@dataclass(frozen=True)
class FixmanConfig:
    h: float
    beta: float

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("time step must be positive")
        if not self.beta > 0:
            raise ValueError("inverse temperature must be positive")

    @property
    def noise_scale(self) -> float:
        return float(np.sqrt(1.0 / self.beta))


@dataclass(frozen=True)
class FixmanResult:
    """Outcome of one trajectory: final state, or the step it exploded at."""

    x_final: np.ndarray
    exploded: bool
    n_completed: int


def _healthy(model: Model, x: np.ndarray) -> np.ndarray:
    ok = model.in_domain(x)
    u = model.energy(x)
    return ok & np.isfinite(u)


def fixman_step_batch(config: FixmanConfig, model: Model, x0: np.ndarray, xi: np.ndarray):
    """One predictor-corrector step for a batch; returns (x_new, exploded).

    Exploded lanes carry their previous state in x_new so callers can freeze
    them.  x0 rows are assumed healthy (in domain, finite energy).
    """
    h = config.h
    m0 = model.mobility(x0)
    du0 = model.grad(x0)
    f0 = np.einsum("...ij,...j->...i", m0, du0)
    factor0, ok = cholesky_batch(m0)
    sq = np.sqrt(2.0 * h)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        b0xi = np.einsum("...ij,...j->...i", factor0.lower, xi)
        xp = x0 - h * f0 + sq * b0xi
        ok = ok & _healthy(model, xp)
        mp = model.mobility(xp)
        fp = np.einsum("...ij,...j->...i", mp, model.grad(xp))
        w = solve_lower_transpose(factor0.lower, xi)
        x1 = x0 - 0.5 * h * (f0 + fp) + 0.5 * sq * np.einsum(
            "...ij,...j->...i", m0 + mp, w
        )
        ok = ok & _healthy(model, x1)
    ok = ok & np.isfinite(x1).all(axis=-1)
    x_new = np.where(ok[..., None], x1, x0)
    return x_new, ~ok


def fixman_step(config: FixmanConfig, model: Model, x0: np.ndarray, xi: np.ndarray):
    """Single-state step; returns (x_new, exploded)."""
    x0 = np.asarray(x0, dtype=np.float64)
    if not _healthy(model, x0):
        raise NotSpdError("current state is not physical")
    xi = np.asarray(xi, dtype=np.float64)
    x_new, exploded = fixman_step_batch(config, model, x0[None], xi[None])
    return x_new[0], bool(exploded[0])


def run_with_rejection(
    config: FixmanConfig,
    model: Model,
    x0: np.ndarray,
    n_steps: int,
    rng,
    observers=(),
) -> FixmanResult:
    """Run one trajectory, discarding it entirely on the first explosion.

    Observers are called as observer(step_index, state) after each healthy
    step.  Ensemble-level resampling of rejected trajectories lives in the
    ensemble driver.
    """
    x = np.asarray(x0, dtype=np.float64)
    for i in range(n_steps):
        xi = rng.standard_normal(model.dim) * config.noise_scale
        x, exploded = fixman_step(config, model, x, xi)
        if exploded:
            return FixmanResult(x_final=x, exploded=True, n_completed=i)
        for obs in observers:
            obs(i, x)
    return FixmanResult(x_final=x, exploded=False, n_completed=n_steps)
