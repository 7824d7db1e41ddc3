"""Metropolized integrator: proposal, acceptance, and trajectory driver.

One step from state x0 with noise draw xi ~ N(0, beta^{-1} I):

  midpoint    x_mid  = x0 + sqrt(h/2) B(x0) xi
  proposal    x_star = x_mid + h G(x_mid) + (x_mid - x0)
  acceptance  alpha  = min(1, r),
              r = [det B(x0) / det B(x_star)]
                  * exp(-beta (|eta|^2/2 - |xi|^2/2 + U(x_star) - U(x0)))
  where eta solves B(x_star) eta = B(x0) xi + sqrt(2h) G(x_mid),

with B the Cholesky factor of the staged covariance and G the staged drift.
Rejection keeps x0.  The ratio is evaluated in log space so temperatures up
to beta ~ 1e12 cannot overflow; every failure mode (proposal out of domain,
covariance not factorizable, non-finite arithmetic) maps to alpha = 0.

All cores are batched over a leading trajectory axis; thin wrappers expose
the single-state signatures.  When the stage fraction policy is adaptive,
one value is selected per step at the midpoint state and reused everywhere
within that step, including the reverse-path terms of the acceptance ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotSpdError
from .linalg import CholeskyFactor, cholesky_batch, solve_lower
from .model_api import Model
from .stages import (
    DriftScheme,
    NoiseScheme,
    StageFractionPolicy,
    select_stage_fraction,
    staged_drift,
    staged_mobility,
)

__all__ = [
    "IntegratorConfig",
    "StepResult",
    "TrajectoryStats",
    "propose",
    "acceptance",
    "step",
    "run_trajectory",
    "propose_batch",
    "acceptance_batch",
    "step_batch",
]


@dataclass(frozen=True)
class IntegratorConfig:
    h: float
    beta: float
    drift: DriftScheme
    noise: NoiseScheme
    policy: StageFractionPolicy = StageFractionPolicy(kind="fixed")

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("time step must be positive")
        if not self.beta > 0:
            raise ValueError("inverse temperature must be positive")
        adaptive = self.policy.kind != "fixed" or self.policy.value is not None
        if adaptive and self.drift.family != "rk2":
            raise ValueError(
                "stage fraction policies apply to two-stage drift schemes only"
            )

    @property
    def noise_scale(self) -> float:
        """Standard deviation of each noise coordinate."""
        return float(np.sqrt(1.0 / self.beta))


@dataclass(frozen=True)
class StepResult:
    x_tilde: np.ndarray
    x_star: np.ndarray
    eta: np.ndarray
    alpha: float
    accepted: bool
    x_new: np.ndarray


@dataclass(frozen=True)
class TrajectoryStats:
    x_final: np.ndarray
    n_steps: int
    n_accepted: int
    alpha_sum: float

    @property
    def accept_rate(self) -> float:
        return self.n_accepted / self.n_steps if self.n_steps else 0.0

    @property
    def mean_alpha(self) -> float:
        return self.alpha_sum / self.n_steps if self.n_steps else 0.0


def _mdot(mats: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", mats, vecs)


def _batch_factor(factor: CholeskyFactor) -> CholeskyFactor:
    return CholeskyFactor(
        lower=factor.lower[None], log_det=np.atleast_1d(factor.log_det)
    )


def propose_batch(config: IntegratorConfig, model: Model, x0: np.ndarray, xi: np.ndarray):
    """Form midpoint and proposal states for a batch of trajectories.

    x0 and xi are (B, n); xi already carries the beta^{-1} covariance.
    Returns (x_tilde, x_star, factor0, b0xi, g_tilde); the latter two are
    reused by the acceptance ratio so the drift at the midpoint is evaluated
    once per step.
    """
    h = config.h
    mh0 = staged_mobility(config.noise, model, x0, h)
    factor0, ok0 = cholesky_batch(mh0)
    if not ok0.all():
        raise NotSpdError("staged covariance at the current state is not SPD")
    b0xi = _mdot(factor0.lower, xi)
    x_tilde = x0 + np.sqrt(h / 2.0) * b0xi

    a12 = None
    if config.policy.kind != "fixed":
        a12 = select_stage_fraction(
            config.policy, config.drift, config.noise, model, x_tilde, h
        )
    elif config.policy.value is not None:
        a12 = config.policy.value
    g_tilde = staged_drift(config.drift, model, x_tilde, h, a12=a12)
    x_star = x_tilde + h * g_tilde + (x_tilde - x0)
    return x_tilde, x_star, factor0, b0xi, g_tilde


def acceptance_batch(
    config: IntegratorConfig,
    model: Model,
    x0: np.ndarray,
    xi: np.ndarray,
    x_star: np.ndarray,
    factor0: CholeskyFactor,
    b0xi: np.ndarray,
    g_tilde: np.ndarray,
):
    """Acceptance probabilities and reverse noise for a batch; (alpha, eta)."""
    h, beta = config.h, config.beta
    mh_star = staged_mobility(config.noise, model, x_star, h)
    factor_star, ok_star = cholesky_batch(mh_star)
    rhs = b0xi + np.sqrt(2.0 * h) * g_tilde
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        eta = solve_lower(factor_star.lower, rhs)
        du = model.energy(x_star) - model.energy(x0)
        quad = 0.5 * ((eta * eta).sum(axis=-1) - (xi * xi).sum(axis=-1))
        log_r = (factor0.log_det - factor_star.log_det) - beta * (quad + du)
    log_r = np.where(ok_star & ~np.isnan(log_r), log_r, -np.inf)
    alpha = np.exp(np.minimum(0.0, log_r))
    return alpha, eta


def step_batch(
    config: IntegratorConfig,
    model: Model,
    x0: np.ndarray,
    xi: np.ndarray,
    uniform: np.ndarray,
):
    """One accept/reject step for a batch.

    Returns (x_new, alpha, accepted, x_star).  uniform is the Bernoulli
    draw, one value in [0, 1) per trajectory.
    """
    x_tilde, x_star, factor0, b0xi, g_tilde = propose_batch(config, model, x0, xi)
    alpha, _ = acceptance_batch(config, model, x0, xi, x_star, factor0, b0xi, g_tilde)
    accepted = uniform < alpha
    x_new = np.where(accepted[..., None], x_star, x0)
    return x_new, alpha, accepted, x_star


def propose(config: IntegratorConfig, model: Model, x0: np.ndarray, xi: np.ndarray):
    """Single-state proposal; returns (x_tilde, x_star, factor0)."""
    x0 = np.asarray(x0, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    x_tilde, x_star, factor0, _, _ = propose_batch(config, model, x0[None], xi[None])
    return (
        x_tilde[0],
        x_star[0],
        CholeskyFactor(lower=factor0.lower[0], log_det=factor0.log_det[0]),
    )


def acceptance(
    config: IntegratorConfig,
    model: Model,
    x0: np.ndarray,
    xi: np.ndarray,
    x_tilde: np.ndarray,
    x_star: np.ndarray,
    factor0: CholeskyFactor,
):
    """Single-state acceptance; returns (alpha, eta).

    The midpoint drift (and any adaptive stage fraction) is recomputed at
    x_tilde; selection is deterministic, so this matches the value used when
    the proposal was formed.
    """
    x0 = np.asarray(x0, dtype=np.float64)[None]
    xi = np.asarray(xi, dtype=np.float64)[None]
    x_tilde = np.asarray(x_tilde, dtype=np.float64)[None]
    x_star = np.asarray(x_star, dtype=np.float64)[None]
    f0 = _batch_factor(factor0)
    b0xi = _mdot(f0.lower, xi)
    a12 = None
    if config.policy.kind != "fixed":
        a12 = select_stage_fraction(
            config.policy, config.drift, config.noise, model, x_tilde, config.h
        )
    elif config.policy.value is not None:
        a12 = config.policy.value
    g_tilde = staged_drift(config.drift, model, x_tilde, config.h, a12=a12)
    alpha, eta = acceptance_batch(config, model, x0, xi, x_star, f0, b0xi, g_tilde)
    return float(alpha[0]), eta[0]


def step(config: IntegratorConfig, model: Model, x0: np.ndarray, rng) -> StepResult:
    """Draw noise, propose, accept or reject; returns the full step record."""
    x0 = np.asarray(x0, dtype=np.float64)
    xi = rng.standard_normal(model.dim) * config.noise_scale
    u = rng.random()
    x_tilde, x_star, factor0, b0xi, g_tilde = propose_batch(config, model, x0[None], xi[None])
    alpha, eta = acceptance_batch(
        config, model, x0[None], xi[None], x_star, factor0, b0xi, g_tilde
    )
    a = float(alpha[0])
    accepted = bool(u < a)
    return StepResult(
        x_tilde=x_tilde[0],
        x_star=x_star[0],
        eta=eta[0],
        alpha=a,
        accepted=accepted,
        x_new=x_star[0] if accepted else x0,
    )


def run_trajectory(
    config: IntegratorConfig,
    model: Model,
    x0: np.ndarray,
    n_steps: int,
    rng,
    observers=(),
) -> TrajectoryStats:
    """Reference single-trajectory driver.

    Observers are called as observer(step_index, result) after every step.
    Batch production runs go through the ensemble driver instead, which uses
    a chunked noise layout and therefore a different draw order.
    """
    x = np.asarray(x0, dtype=np.float64)
    n_accepted = 0
    alpha_sum = 0.0
    for i in range(n_steps):
        result = step(config, model, x, rng)
        x = result.x_new
        n_accepted += result.accepted
        alpha_sum += result.alpha
        for obs in observers:
            obs(i, result)
    return TrajectoryStats(
        x_final=x, n_steps=n_steps, n_accepted=n_accepted, alpha_sum=alpha_sum
    )
