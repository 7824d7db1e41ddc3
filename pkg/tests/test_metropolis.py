"""Proposal geometry, acceptance ratio, and reversibility of the adjusted step.

The acceptance oracle below recomputes the log ratio from scratch — staged
drift, staged covariance, Cholesky, triangular solve, all reimplemented with
plain numpy — so the module's ratio is checked end to end rather than term by
term.
"""

from __future__ import annotations

import warnings

import numpy as np
import pytest
import scipy.linalg

from metrodiff.metropolis import (
    IntegratorConfig,
    acceptance,
    propose,
    run_trajectory,
    step,
    step_batch,
)
from metrodiff.models import make_model
from metrodiff.stages import (
    make_drift_scheme,
    make_noise_scheme,
    make_stage_fraction_policy,
    staged_drift,
)


def make_config(h=0.1, beta=2.0, policy=None):
    return IntegratorConfig(
        h=h,
        beta=beta,
        drift=make_drift_scheme("ralston"),
        noise=make_noise_scheme("rk2"),
        **({"policy": policy} if policy is not None else {}),
    )


# ---------------------------------------------------------------------------
# configuration contract


def test_config_validation():
    with pytest.raises(ValueError):
        make_config(h=0.0)
    with pytest.raises(ValueError):
        make_config(h=-0.1)
    with pytest.raises(ValueError):
        make_config(beta=0.0)
    assert make_config(beta=4.0).noise_scale == pytest.approx(0.5)


def test_adaptive_policies_need_two_stage_drift():
    with pytest.raises(ValueError):
        IntegratorConfig(
            h=0.1,
            beta=1.0,
            drift=make_drift_scheme("kutta"),
            noise=make_noise_scheme("rk3"),
            policy=make_stage_fraction_policy("patched"),
        )
    with pytest.raises(ValueError):
        IntegratorConfig(
            h=0.1,
            beta=1.0,
            drift=make_drift_scheme("kutta"),
            noise=make_noise_scheme("rk3"),
            policy=make_stage_fraction_policy("fixed", value=0.7),
        )


# ---------------------------------------------------------------------------
# proposal geometry


def test_proposal_midpoint_reflection_identity():
    # The proposal is the reflection of x0 through x_tilde plus h times the
    # midpoint drift: x_star = 2 x_tilde - x0 + h G(x_tilde).
    config = make_config()
    model = make_model("double_well2d", mobility="radial")
    gen = np.random.default_rng(5)
    for _ in range(10):
        x0 = gen.uniform(-1.5, 1.5, size=2)
        xi = gen.standard_normal(2) * config.noise_scale
        x_tilde, x_star, _ = propose(config, model, x0, xi)
        expected = 2 * x_tilde - x0 + config.h * staged_drift(
            config.drift, model, x_tilde, config.h)
        np.testing.assert_allclose(x_star, expected, rtol=0, atol=5e-15)


def test_proposal_uses_pinned_stage_fraction():
    config_pinned = make_config(
        policy=make_stage_fraction_policy("fixed", value=0.9))
    config_plain = make_config()
    model = make_model("double_well2d", mobility="radial")
    x0 = np.array([0.8, 0.5])
    xi = np.array([0.3, -0.2])
    _, star_pinned, _ = propose(config_pinned, model, x0, xi)
    x_tilde, star_plain, _ = propose(config_plain, model, x0, xi)
    expected = 2 * x_tilde - x0 + config_pinned.h * staged_drift(
        config_pinned.drift, model, x_tilde, config_pinned.h, a12=0.9)
    np.testing.assert_allclose(star_pinned, expected, rtol=0, atol=5e-15)
    assert not np.allclose(star_pinned, star_plain)


def test_midpoint_noise_uses_staged_covariance_factor():
    # x_tilde - x0 = sqrt(h/2) B(x0) xi with B the factor of the staged
    # covariance; with constant mobility that covariance is the mobility.
    config = make_config()
    model = make_model("gaussian_well2d")
    x0 = np.array([0.2, -0.4])
    xi = np.array([1.0, 0.5])
    x_tilde, _, factor = propose(config, model, x0, xi)
    np.testing.assert_allclose(
        x_tilde - x0, np.sqrt(config.h / 2) * factor.lower @ xi, atol=1e-15)
    np.testing.assert_allclose(
        factor.lower @ factor.lower.T, model.mobility(x0), atol=1e-14)


# ---------------------------------------------------------------------------
# acceptance ratio against an independent oracle


def oracle_log_ratio(config, model, x0, xi):
    """Recompute the log acceptance ratio with plain numpy end to end."""
    h, beta = config.h, config.beta
    b = [float(v) for v in config.drift.b]
    a12 = float(config.drift.a12)
    d = [float(v) for v in config.noise.d]
    c12 = float(config.noise.c12)

    def covariance(x):
        x1 = x + c12 * h * model.mobility(x) @ model.grad(x)
        cov = d[0] * model.mobility(x) + d[1] * model.mobility(x1)
        return 0.5 * (cov + cov.T)

    def drift(x):
        f0 = model.mobility(x) @ model.grad(x)
        x1 = x - h * a12 * f0
        return -(
            b[0] * f0
            + b[1] * model.mobility(x) @ model.grad(x1)
            + b[2] * model.mobility(x1) @ model.grad(x)
            + b[3] * model.mobility(x1) @ model.grad(x1)
        )

    l0 = np.linalg.cholesky(covariance(x0))
    b0xi = l0 @ xi
    x_tilde = x0 + np.sqrt(h / 2) * b0xi
    g = drift(x_tilde)
    x_star = 2 * x_tilde - x0 + h * g
    l_star = np.linalg.cholesky(covariance(x_star))
    eta = scipy.linalg.solve_triangular(
        l_star, b0xi + np.sqrt(2 * h) * g, lower=True)
    du = model.energy(x_star) - model.energy(x0)
    quad = 0.5 * (eta @ eta - xi @ xi)
    _, logdet0 = np.linalg.slogdet(covariance(x0))
    _, logdet_star = np.linalg.slogdet(covariance(x_star))
    return 0.5 * (logdet0 - logdet_star) - beta * (quad + du), x_star, eta


def test_acceptance_matches_scripted_oracle():
    config = make_config(h=0.02, beta=5.0)
    model = make_model("double_well2d", mobility="radial")
    gen = np.random.default_rng(17)
    informative = 0
    for _ in range(20):
        basin = np.array([2.0, 1.0]) * (1.0 if gen.random() < 0.5 else -1.0)
        x0 = basin + gen.uniform(-0.4, 0.4, size=2)
        xi = gen.standard_normal(2) * config.noise_scale
        x_tilde, x_star, factor0 = propose(config, model, x0, xi)
        alpha, eta = acceptance(config, model, x0, xi, x_tilde, x_star, factor0)
        log_r, x_star_oracle, eta_oracle = oracle_log_ratio(config, model, x0, xi)
        np.testing.assert_allclose(x_star, x_star_oracle, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(eta, eta_oracle, rtol=1e-9, atol=1e-12)
        assert alpha == pytest.approx(min(1.0, np.exp(log_r)), rel=1e-10, abs=1e-300)
        informative += 0.0 < alpha < 1.0
    assert informative >= 10


def test_flat_landscape_accepts_every_proposal_exactly():
    config = make_config(h=0.3, beta=1.0)
    model = make_model("quadratic1d", k=0.0)
    gen = np.random.default_rng(2)
    for _ in range(50):
        x0 = gen.standard_normal(1)
        xi = gen.standard_normal(1)
        x_tilde, x_star, factor0 = propose(config, model, x0, xi)
        alpha, eta = acceptance(config, model, x0, xi, x_tilde, x_star, factor0)
        assert alpha == 1.0
        np.testing.assert_array_equal(eta, xi)
        # Pure reflection: x_star - x_tilde = x_tilde - x0.
        np.testing.assert_allclose(x_star - x_tilde, x_tilde - x0, atol=1e-15)


# ---------------------------------------------------------------------------
# reversibility


@pytest.mark.parametrize("policy_kind", ["fixed", "patched"])
def test_reverse_move_reconstructs_the_starting_point(policy_kind):
    config = IntegratorConfig(
        h=0.01,
        beta=1.0,
        drift=make_drift_scheme("ralston"),
        noise=make_noise_scheme("rk2"),
        policy=make_stage_fraction_policy(policy_kind),
    )
    model = make_model("fene_chain")
    gen = np.random.default_rng(23)
    x0 = model.equilibrium_positions()
    checked = 0
    for _ in range(20):
        xi = gen.standard_normal(8) * config.noise_scale
        x_tilde, x_star, factor0 = propose(config, model, x0, xi)
        alpha, eta = acceptance(config, model, x0, xi, x_tilde, x_star, factor0)
        if alpha == 0.0 or not model.in_domain(x_star):
            continue
        checked += 1
        # Proposing from x_star with noise -eta retraces the same midpoint and
        # lands back on x0; its reverse noise is -xi.
        tilde_rev, star_rev, factor_star = propose(config, model, x_star, -eta)
        np.testing.assert_allclose(tilde_rev, x_tilde, rtol=0, atol=1e-10)
        np.testing.assert_allclose(star_rev, x0, rtol=0, atol=1e-10)
        _, eta_rev = acceptance(
            config, model, x_star, -eta, tilde_rev, star_rev, factor_star)
        np.testing.assert_allclose(eta_rev, -xi, rtol=0, atol=1e-10)
    assert checked >= 10


def test_forward_and_reverse_log_ratios_cancel():
    config = make_config(h=0.02, beta=1.0)
    model = make_model("double_well2d", mobility="radial")
    gen = np.random.default_rng(31)
    for _ in range(15):
        basin = np.array([2.0, 1.0]) * (1.0 if gen.random() < 0.5 else -1.0)
        x0 = basin + gen.uniform(-0.4, 0.4, size=2)
        xi = gen.standard_normal(2) * config.noise_scale
        log_fwd, x_star, eta = oracle_log_ratio(config, model, x0, xi)
        log_rev, x_back, _ = oracle_log_ratio(config, model, x_star, -eta)
        # Deep-rejection proposals land on steep curvature where roundoff in
        # the retraced state is amplified; the ratio product stays exact.
        np.testing.assert_allclose(x_back, x0, rtol=0, atol=1e-8)
        assert log_fwd + log_rev == pytest.approx(0.0, abs=1e-10)


# ---------------------------------------------------------------------------
# failure handling


def test_out_of_domain_proposal_rejected_with_zero_probability():
    config = make_config(h=0.1, beta=1.0)
    model = make_model("heavy_tail")
    x0 = np.array([1.05])
    xi = np.array([-5.0])
    x_tilde, x_star, factor0 = propose(config, model, x0, xi)
    assert x_star[0] < 1.0
    alpha, _ = acceptance(config, model, x0, xi, x_tilde, x_star, factor0)
    assert alpha == 0.0


def test_wild_proposals_reject_without_warnings():
    config = make_config(h=0.05, beta=1.0)
    model = make_model("fene_chain")
    x0 = model.default_initial()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        x_new, alpha, accepted, _ = step_batch(
            config,
            model,
            np.tile(x0, (4, 1)),
            np.full((4, 8), 1e8),
            np.full(4, 0.5),
        )
    np.testing.assert_array_equal(alpha, 0.0)
    assert not accepted.any()
    np.testing.assert_array_equal(x_new, np.tile(x0, (4, 1)))


def test_rejected_step_keeps_the_current_state():
    config = make_config(h=0.4, beta=8.0)
    model = make_model("double_well2d", mobility="radial")
    gen = np.random.default_rng(41)
    x0 = np.array([2.0, 1.0])
    saw_reject = False
    for _ in range(200):
        result = step(config, model, x0, gen)
        if not result.accepted:
            saw_reject = True
            np.testing.assert_array_equal(result.x_new, x0)
        else:
            np.testing.assert_array_equal(result.x_new, result.x_star)
    assert saw_reject


# ---------------------------------------------------------------------------
# batch/single agreement and the trajectory driver


def test_batch_step_matches_single_steps():
    config = make_config(h=0.08, beta=1.7)
    model = make_model("double_well2d", mobility="radial")
    gen = np.random.default_rng(53)
    x0 = gen.uniform(-1.0, 1.0, size=(6, 2))
    xi = gen.standard_normal((6, 2)) * config.noise_scale
    uniform = gen.random(6)
    x_new, alpha, accepted, x_star = step_batch(config, model, x0, xi, uniform)
    for k in range(6):
        x_tilde_k, x_star_k, factor_k = propose(config, model, x0[k], xi[k])
        alpha_k, _ = acceptance(
            config, model, x0[k], xi[k], x_tilde_k, x_star_k, factor_k)
        np.testing.assert_allclose(x_star[k], x_star_k, rtol=0, atol=1e-13)
        assert alpha[k] == pytest.approx(alpha_k, rel=1e-12)
        assert accepted[k] == (uniform[k] < alpha_k)


def test_trajectory_driver_is_reproducible_and_consistent():
    config = make_config(h=0.1, beta=2.0)
    model = make_model("double_well2d", mobility="radial")
    records = []

    def observer(i, result):
        records.append((i, result))

    stats = run_trajectory(
        config, model, np.array([0.0, -0.01]), 150,
        np.random.default_rng(99), observers=(observer,))
    again = run_trajectory(
        config, model, np.array([0.0, -0.01]), 150, np.random.default_rng(99))
    np.testing.assert_array_equal(stats.x_final, again.x_final)
    assert stats.n_accepted == again.n_accepted
    assert stats.alpha_sum == again.alpha_sum

    assert len(records) == 150
    assert stats.n_steps == 150
    assert stats.n_accepted == sum(r.accepted for _, r in records)
    assert stats.alpha_sum == pytest.approx(sum(r.alpha for _, r in records))
    assert 0.0 <= stats.mean_alpha <= 1.0
    assert stats.accept_rate == stats.n_accepted / 150
    np.testing.assert_array_equal(stats.x_final, records[-1][1].x_new)
    # Chained states: each step starts from the previous step's outcome.
    x = np.array([0.0, -0.01])
    for _, r in records[:10]:
        assert np.array_equal(r.x_new, r.x_star if r.accepted else x)
        x = r.x_new
