"""Compiled fast path for 1D models with unit mobility.

With M = 1 the staged covariance is 1 for every noise scheme, its factor is
1, and the determinant ratio drops out of the acceptance probability, so the
whole step reduces to scalar arithmetic.  A single kernel advances a block
of independent trajectories ("lanes") through a chunk of pre-drawn noise,
accumulating acceptance statistics and optionally recording strided
positions or first-passage step indices.

Model dispatch is by integer id with two parameter floats; the formulas
mirror the vector path expression-for-expression so both paths agree to
rounding.  Mega-sample experiments run here; everything else uses the
general batched path.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .metropolis import IntegratorConfig
from .model_api import Model

__all__ = ["scalar_kernel_spec", "scalar_model_id", "run_lanes", "run_lanes_fixman"]

# drift family codes for the kernel
FAMILY_ZERO = 0
FAMILY_RK2 = 1
FAMILY_RK3 = 2


def scalar_kernel_spec(model: Model, config: IntegratorConfig):
    """Kernel arguments if the fast path applies, else None.

    Applicable when the model exposes a scalar kernel id (1D, unit
    mobility) and the stage fraction is fixed for the run.
    """
    kid = getattr(model, "scalar_kernel_id", None)
    if kid is None or model.dim != 1 or not model.has_constant_mobility:
        return None
    if config.policy.kind != "fixed":
        return None
    drift = config.drift
    fam = drift.family
    pa, pb = model.scalar_kernel_params
    if fam == "zero":
        return (int(kid), float(pa), float(pb), FAMILY_ZERO,
                0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    b = [float(v) for v in drift.b]
    a12 = float(drift.a12) if config.policy.value is None else float(config.policy.value)
    if fam == "rk2":
        return (int(kid), float(pa), float(pb), FAMILY_RK2,
                b[0], b[1], b[2], b[3], a12, 0.0, 0.0)
    return (int(kid), float(pa), float(pb), FAMILY_RK3,
            b[0], b[1], b[2], 0.0, a12, float(drift.a31), float(drift.a32))


@njit(cache=True, inline="always")
def _sech_sq(u):
    a = np.exp(-abs(u))
    return (2.0 * a / (1.0 + a * a)) ** 2


@njit(cache=True, inline="always")
def _grad(model_id, pa, pb, x):
    # mirrors the vector models, including the zero-gradient extension
    if not np.isfinite(x):
        return 0.0
    if model_id == 0:
        if x < 1.0:
            return 0.0
        return pa / x
    elif model_id == 1:
        m = x - 3.0 * np.floor(x / 3.0)
        return (_sech_sq((m - 2.0) / pb) - _sech_sq((m - 1.0) / pb)) / pb - pa
    elif model_id == 2:
        return x * (x * x - 1.0)
    else:
        return pa * x


@njit(cache=True, inline="always")
def _energy(model_id, pa, pb, x):
    if not np.isfinite(x):
        return np.inf
    if model_id == 0:
        if x < 1.0:
            return np.inf
        return pa * np.log(x)
    elif model_id == 1:
        m = x - 3.0 * np.floor(x / 3.0)
        return np.tanh((m - 2.0) / pb) - np.tanh((m - 1.0) / pb) - pa * x
    elif model_id == 2:
        return 0.25 * (1.0 - x * x) ** 2
    else:
        return 0.5 * pa * x * x


@njit(cache=True)
def run_lanes(
    model_id, pa, pb,
    h, beta,
    family, b1, b2, b3, b4, a12, a31, a32,
    x, normals, uniforms, t0,
    stride, rec, rec_count,
    fpt_on, fpt_target, crossed,
    alpha_sum, acc_count, steps_taken,
):
    """Advance all lanes through one noise chunk, in place.

    x: (nlanes,) states.  normals/uniforms: (nchunk, nlanes) pre-drawn
    noise, normals already scaled to variance 1/beta.  t0: global index of
    the chunk's first step.  stride > 0 records states into rec after every
    stride-th global step, bumping rec_count[0].  fpt_on freezes a lane once
    its state reaches fpt_target and stores the 0-based crossing step in
    crossed.  alpha_sum, acc_count, steps_taken accumulate per lane over
    the steps actually taken.
    """
    nchunk, nlanes = normals.shape
    sqh2 = np.sqrt(h / 2.0)
    sq2h = np.sqrt(2.0 * h)
    for t in range(nchunk):
        for k in range(nlanes):
            if fpt_on and crossed[k] >= 0:
                continue
            x0 = x[k]
            xi = normals[t, k]
            xt = x0 + sqh2 * xi
            if family == 0:
                g = 0.0
            elif family == 1:
                du0 = _grad(model_id, pa, pb, xt)
                x1 = xt - h * a12 * du0
                du1 = _grad(model_id, pa, pb, x1)
                g = -(b1 * du0 + b2 * du1 + b3 * du0 + b4 * du1)
            else:
                du0 = _grad(model_id, pa, pb, xt)
                x1 = xt - h * a12 * du0
                du1 = _grad(model_id, pa, pb, x1)
                x2 = xt - h * a31 * du0 - h * a32 * du1
                du2 = _grad(model_id, pa, pb, x2)
                g = -(b1 * du0 + b2 * du1 + b3 * du2)
            xs = xt + h * g + (xt - x0)
            us = _energy(model_id, pa, pb, xs)
            if np.isfinite(us):
                u0 = _energy(model_id, pa, pb, x0)
                eta = xi + sq2h * g
                quad = 0.5 * (eta * eta - xi * xi)
                log_r = -beta * (quad + (us - u0))
                if np.isnan(log_r):
                    alpha = 0.0
                elif log_r >= 0.0:
                    alpha = 1.0
                else:
                    alpha = np.exp(log_r)
            else:
                alpha = 0.0
            accepted = uniforms[t, k] < alpha
            if accepted:
                x[k] = xs
            alpha_sum[k] += alpha
            if accepted:
                acc_count[k] += 1
            steps_taken[k] += 1
            if fpt_on and x[k] >= fpt_target:
                crossed[k] = t0 + t
        if stride > 0 and ((t0 + t + 1) % stride) == 0:
            r = rec_count[0]
            for k in range(nlanes):
                rec[r, k] = x[k]
            rec_count[0] = r + 1


def scalar_model_id(model: Model):
    """(model_id, pa, pb) if the model runs on the scalar kernels, else None."""
    kid = getattr(model, "scalar_kernel_id", None)
    if kid is None or model.dim != 1 or not model.has_constant_mobility:
        return None
    pa, pb = model.scalar_kernel_params
    return (int(kid), float(pa), float(pb))


@njit(cache=True)
def run_lanes_fixman(
    model_id, pa, pb,
    h,
    x, normals, t0,
    stride, rec, rec_count,
    fpt_on, fpt_target, crossed,
    dead, steps_taken,
):
    """Predictor-corrector lanes with unit mobility, advanced in place.

    Mirrors the vector path with M = 1: the mean-square factor and its
    inverse transpose drop out, leaving plain scalar sums.  A lane whose
    predictor or corrector lands outside the domain (or goes non-finite)
    is marked dead with the offending global step in dead[k] and stops
    moving; live lanes accumulate steps_taken.  Recording and
    first-passage bookkeeping match run_lanes.
    """
    nchunk, nlanes = normals.shape
    sq2h = np.sqrt(2.0 * h)
    for t in range(nchunk):
        for k in range(nlanes):
            if dead[k] >= 0 or (fpt_on and crossed[k] >= 0):
                continue
            x0 = x[k]
            xi = normals[t, k]
            du0 = _grad(model_id, pa, pb, x0)
            xp = x0 - h * du0 + sq2h * xi
            if not np.isfinite(_energy(model_id, pa, pb, xp)):
                dead[k] = t0 + t
                continue
            dup = _grad(model_id, pa, pb, xp)
            x1 = x0 - 0.5 * h * (du0 + dup) + 0.5 * sq2h * (2.0 * xi)
            if not np.isfinite(_energy(model_id, pa, pb, x1)):
                dead[k] = t0 + t
                continue
            x[k] = x1
            steps_taken[k] += 1
            if fpt_on and x1 >= fpt_target:
                crossed[k] = t0 + t
        if stride > 0 and ((t0 + t + 1) % stride) == 0:
            r = rec_count[0]
            for k in range(nlanes):
                rec[r, k] = x[k]
            rec_count[0] = r + 1
