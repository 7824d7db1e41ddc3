"""Hand-computed oracle values for every example model."""

from __future__ import annotations

import math

import numpy as np
import pytest

from metrodiff.errors import OutOfDomainError, ZeroSeparationError
from metrodiff.linalg import numeric_divergence
from metrodiff.models import (
    TILT_PERIOD,
    Chain1dParams,
    RpyChainParams,
    chain1d_mobility,
    fene_energy,
    fene_force_scalar,
    friction_matrix,
    make_model,
    rpy_block,
    rpy_far_coefficients,
    rpy_near_coefficients,
    wlc_energy,
    wlc_force_scalar,
)


# ---------------------------------------------------------------------------
# scalar landscapes


def test_heavy_tail_energy_and_gradient():
    model = make_model("heavy_tail")
    assert model.params.eta == 1.5
    assert model.energy(np.array([2.0])) == pytest.approx(1.5 * math.log(2.0), rel=1e-14)
    assert model.grad(np.array([2.0]))[0] == pytest.approx(0.75, rel=1e-14)
    assert model.energy(np.array([1.0])) == 0.0
    # The domain boundary sits at x = 1.
    assert model.in_domain(np.array([1.0]))
    assert not model.in_domain(np.array([0.999999]))


def test_heavy_tail_eta_parameter_plumbs_through():
    model = make_model("heavy_tail", eta=2.5)
    assert model.energy(np.array([math.e])) == pytest.approx(2.5, rel=1e-12)


def test_tilted_well_energy_values():
    model = make_model("tilted_well")
    assert TILT_PERIOD == 3.0
    assert model.params.force == 0.25
    assert model.params.epsilon == 1e-3
    # Mid-well the tanh walls are saturated: U = -1 - 1 - F x.
    assert model.energy(np.array([1.5])) == pytest.approx(-2.0 - 0.25 * 1.5, abs=1e-12)
    # Mid-plateau (m = 0.5) both walls saturate the other way: U = -1 + 1 - F x.
    assert model.energy(np.array([0.5])) == pytest.approx(-0.25 * 0.5, abs=1e-12)


def test_tilted_well_is_periodic_up_to_the_tilt():
    model = make_model("tilted_well")
    xs = np.linspace(0.1, 2.9, 17)
    u0 = model.energy(xs[:, None])
    u1 = model.energy((xs + TILT_PERIOD)[:, None])
    np.testing.assert_allclose(u1 - u0, -0.25 * TILT_PERIOD, rtol=0, atol=1e-12)
    # The gradient is exactly periodic.
    g0 = model.grad(xs[:, None])
    g1 = model.grad((xs + TILT_PERIOD)[:, None])
    np.testing.assert_allclose(g0, g1, rtol=0, atol=1e-10)


def test_tilted_well_no_overflow_far_from_origin():
    model = make_model("tilted_well")
    x = np.array([3000.5])
    assert np.isfinite(model.energy(x))
    assert np.isfinite(model.grad(x)).all()


def test_quadratic_and_double_well_closed_forms():
    quad = make_model("quadratic1d", k=2.0)
    assert quad.energy(np.array([3.0])) == pytest.approx(9.0, rel=1e-14)
    assert quad.grad(np.array([3.0]))[0] == pytest.approx(6.0, rel=1e-14)

    dw = make_model("double_well1d")
    assert dw.energy(np.array([1.0])) == 0.0
    assert dw.energy(np.array([-1.0])) == 0.0
    assert dw.energy(np.array([0.0])) == pytest.approx(0.25, rel=1e-14)
    assert dw.grad(np.array([0.5]))[0] == pytest.approx(-0.375, rel=1e-14)

    gauss = make_model("gaussian_well2d")
    assert gauss.params.k1 == 1.0 and gauss.params.k2 == 4.0
    assert gauss.energy(np.array([1.0, 1.0])) == pytest.approx(2.5, rel=1e-14)


def test_double_well_2d_minima_are_critical_points():
    model = make_model("double_well2d")
    minima = model.minima()
    assert len(minima) == 2
    for m in minima:
        assert model.energy(np.asarray(m)) == pytest.approx(0.0, abs=1e-14)
        np.testing.assert_allclose(model.grad(np.asarray(m)), 0.0, atol=1e-13)
    np.testing.assert_allclose(np.abs(minima), [[2.0, 1.0], [2.0, 1.0]])
    # Saddle ridge value at the origin: U = 5.
    assert model.energy(np.zeros(2)) == pytest.approx(5.0, rel=1e-14)


def test_double_well_2d_radial_mobility_and_divergence():
    model = make_model("double_well2d", mobility="radial")
    x = np.array([0.7, -0.3])
    f = 1.0 + x @ x
    np.testing.assert_allclose(model.mobility(x), f * np.eye(2), rtol=1e-14)
    np.testing.assert_allclose(model.div_mobility(x), 2.0 * x, rtol=1e-14)
    got = numeric_divergence(lambda y: model.mobility(y), x)
    np.testing.assert_allclose(got, 2.0 * x, rtol=1e-6)


def test_double_well_2d_rejects_unknown_mobility():
    with pytest.raises(ValueError):
        make_model("double_well2d", mobility="sideways")


# ---------------------------------------------------------------------------
# bead-spring chain with wall-mediated friction


def test_fene_energy_at_rest_gap():
    # At gap = ell the spring argument is u = 1/2, so U = -(eps/2) log(1/2).
    assert fene_energy(np.array(1.0 / 6.0), 1.0, 1.0 / 6.0) == pytest.approx(
        0.5 * math.log(2.0), rel=1e-14)
    assert fene_force_scalar(np.array(1.0 / 6.0), 1.0, 1.0 / 6.0) == pytest.approx(
        0.0, abs=1e-14)


def test_fene_energy_symmetric_about_rest_gap():
    ell = 1.0 / 6.0
    delta = 0.04
    lo = fene_energy(np.array(ell - delta), 1.0, ell)
    hi = fene_energy(np.array(ell + delta), 1.0, ell)
    assert lo == pytest.approx(hi, rel=1e-13)
    # Energy grows without bound toward both walls.
    assert fene_energy(np.array(1e-9), 1.0, ell) > 9.0
    assert fene_energy(np.array(2 * ell - 1e-9), 1.0, ell) > 9.0


def test_fene_force_matches_energy_derivative():
    ell = 1.0 / 6.0
    g = 0.21
    step = 1e-8
    fd = (fene_energy(np.array(g + step), 1.0, ell)
          - fene_energy(np.array(g - step), 1.0, ell)) / (2 * step)
    assert fene_force_scalar(np.array(g), 1.0, ell) == pytest.approx(fd, rel=1e-6)


def test_friction_matrix_single_bead_midbox():
    params = Chain1dParams(n_beads=1)
    gamma = friction_matrix(np.array([0.5]), params)
    np.testing.assert_allclose(gamma, [[4.0]], rtol=1e-14)


def test_friction_matrix_two_beads_at_thirds():
    params = Chain1dParams(n_beads=2)
    gamma = friction_matrix(np.array([1.0 / 3.0, 2.0 / 3.0]), params)
    np.testing.assert_allclose(gamma, [[6.0, -3.0], [-3.0, 6.0]], rtol=1e-12)
    mob = chain1d_mobility(np.array([1.0 / 3.0, 2.0 / 3.0]), params)
    np.testing.assert_allclose(27.0 * mob, [[6.0, 3.0], [3.0, 6.0]], rtol=1e-12)


def test_friction_and_mobility_are_inverses(rng):
    params = Chain1dParams()
    model = make_model("fene_chain")
    x = model.default_initial()
    gamma = friction_matrix(x, params)
    mob = chain1d_mobility(x, params)
    np.testing.assert_allclose(mob @ gamma, np.eye(8), rtol=0, atol=1e-10)
    np.testing.assert_allclose(mob, mob.T, rtol=0, atol=1e-14)
    assert np.linalg.eigvalsh(mob).min() > 0


def test_friction_matrix_rejects_disordered_beads():
    params = Chain1dParams(n_beads=2)
    with pytest.raises(OutOfDomainError):
        friction_matrix(np.array([0.6, 0.4]), params)


def test_fene_chain_defaults():
    model = make_model("fene_chain")
    p = model.params
    assert (p.n_beads, p.mu, p.box, p.epsilon) == (8, 1.0, 1.0, 1.0)
    assert p.ell == pytest.approx(1.0 / 6.0)
    assert p.rest_length == p.ell
    x0 = model.default_initial()
    np.testing.assert_allclose(
        x0, [0.10, 0.11, 0.33, 0.34, 0.56, 0.57, 0.79, 0.81])
    assert model.in_domain(x0)
    eq = model.equilibrium_positions()
    np.testing.assert_allclose(eq, np.arange(1, 9) / 9.0)
    assert model.in_domain(eq)


def test_fene_chain_domain_is_open_interval_per_gap():
    model = make_model("fene_chain")
    x = model.equilibrium_positions()
    # Pushing the first bead against the wall leaves the domain.
    y = x.copy()
    y[0] = 0.0
    assert not model.in_domain(y)
    # Stretching one gap past twice the rest length leaves the domain.
    y = x.copy()
    y[3] = y[2] + 2 * model.params.ell + 1e-9
    y[4:] = y[3] + np.arange(1, 5) * 0.01
    assert not model.in_domain(y)


# ---------------------------------------------------------------------------
# bead-bead hydrodynamics


def test_rpy_coefficient_branches_join_continuously():
    a = 0.077
    r = 2 * a
    far = rpy_far_coefficients(np.array(r), a)
    near = rpy_near_coefficients(np.array(r), a)
    assert far[0] == pytest.approx(7.0 / 16.0, rel=1e-14)
    assert far[1] == pytest.approx(3.0 / 16.0, rel=1e-14)
    assert near[0] == pytest.approx(7.0 / 16.0, rel=1e-14)
    assert near[1] == pytest.approx(3.0 / 16.0, rel=1e-14)


def test_rpy_block_far_field_values():
    a = 0.077
    zeta = 6.0 * np.pi * 1e-9 * a
    q = np.array([3 * a, 0.0, 0.0])
    block = rpy_block(q, a, zeta)
    # c1 I + c2 qhat qhat^T: along the separation axis (c1 + c2)/zeta,
    # transverse c1/zeta.
    c1 = 0.75 / 3.0 + 0.5 / 27.0
    c2 = 0.75 / 3.0 - 1.5 / 27.0
    np.testing.assert_allclose(
        block, np.diag([(c1 + c2) / zeta, c1 / zeta, c1 / zeta]), rtol=1e-12)


def test_rpy_block_rejects_zero_separation():
    with pytest.raises(ZeroSeparationError):
        rpy_block(np.zeros(3), 0.077, 1.0)


def test_rpy_mobility_self_blocks_and_symmetry():
    model = make_model("dna_chain")
    x = model.default_initial()
    mob = model.mobility(x)
    zeta = model.params.zeta
    for b in range(model.params.n_beads):
        np.testing.assert_allclose(
            mob[3 * b:3 * b + 3, 3 * b:3 * b + 3], np.eye(3) / zeta, rtol=1e-12)
    np.testing.assert_allclose(mob, mob.T, rtol=0, atol=1e-20)


def test_rpy_mobility_positive_definite_with_overlaps(rng):
    model = make_model("dna_chain")
    n = model.params.n_beads
    for _ in range(25):
        pos = rng.uniform(-0.5, 0.5, size=(n, 3))  # dense: many overlapping pairs
        x = pos.reshape(-1)
        if not model.in_domain(x):
            continue
        mob = model.mobility(x)
        assert np.linalg.eigvalsh(mob).min() > 0


def test_wlc_energy_and_force_closed_forms():
    params = RpyChainParams()
    pref = params.kT / (2.0 * params.kuhn_length)
    # r = 0: U = pref * ell, force = 0.
    assert wlc_energy(np.array(0.0), params) == pytest.approx(pref * params.ell, rel=1e-12)
    assert wlc_force_scalar(np.array(0.0), params) == pytest.approx(0.0, abs=1e-20)
    # r = ell/2: U = pref * (2 ell - ell/2 + ell/2) = 2 pref ell.
    assert wlc_energy(np.array(params.ell / 2), params) == pytest.approx(
        2.0 * pref * params.ell, rel=1e-12)
    # The scalar helper is the radial derivative of the energy.
    r = 1.3
    step = 1e-7
    fd = (wlc_energy(np.array(r + step), params)
          - wlc_energy(np.array(r - step), params)) / (2 * step)
    assert wlc_force_scalar(np.array(r), params) == pytest.approx(fd, rel=1e-5)


def test_wlc_energy_diverges_at_contour_length():
    params = RpyChainParams()
    assert wlc_energy(np.array(params.ell * (1 - 1e-9)), params) > 1e3 * params.kT


def test_dna_chain_defaults_and_initial_state():
    model = make_model("dna_chain")
    p = model.params
    assert p.n_beads == 11
    assert p.bead_radius == 0.077
    assert p.ell == 2.1
    assert p.kuhn_length == 0.1
    assert p.solvent_viscosity == 1e-9
    assert p.kT == 4.11e-9
    assert p.zeta == pytest.approx(6 * math.pi * 1e-9 * 0.077, rel=1e-14)
    x0 = model.default_initial()
    assert x0.shape == (33,)
    pos = x0.reshape(11, 3)
    np.testing.assert_allclose(pos[:, 0], 1.5 * np.arange(11))
    np.testing.assert_allclose(pos[:, 1:], 0.0)
    assert model.in_domain(x0)


def test_dna_chain_domain_bounds_spring_lengths():
    model = make_model("dna_chain")
    pos = model.default_initial().reshape(11, 3)
    far = pos.copy()
    far[-1, 0] += 1.0  # last spring reaches 2.5 > ell
    assert not model.in_domain(far.reshape(-1))


def test_rouse_chain_stiffness_value():
    model = make_model("rouse_chain")
    p = model.params
    expected = 3.0 * p.kT / (p.kuhn_length * p.ell)
    assert model.stiffness == pytest.approx(expected, rel=1e-14)
    # Quadratic spring energy: 10 springs of length 1.5 from the default state.
    x0 = model.default_initial()
    assert model.energy(x0) == pytest.approx(10 * 0.5 * expected * 1.5 ** 2, rel=1e-12)


def test_rpy_chain_divergence_term_vanishes():
    model = make_model("dna_chain")
    x = model.default_initial()
    np.testing.assert_array_equal(model.div_mobility(x), np.zeros(model.dim))


def test_make_model_rejects_unknown_names_and_params():
    with pytest.raises(ValueError):
        make_model("no_such_model")
    with pytest.raises(TypeError):
        make_model("quadratic1d", stiffness=2.0)
