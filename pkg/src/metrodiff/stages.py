"""Staged drift and noise-covariance construction for proposal moves.

The proposal drift is a staggered Runge-Kutta combination of mobility-times-
force products, and the proposal noise covariance is a matching weighted sum
of mobility evaluations at displaced stage points.  Both families keep their
coefficients as exact rationals so order-condition residuals can be checked
in exact arithmetic; evaluation happens in floats.

Two coefficient families exist:

  two-stage   G(x)  = -b1 M(x)DU(x) - b2 M(x)DU(x1)
                      - b3 M(x1)DU(x) - b4 M(x1)DU(x1),
              x1    = x - a12 h M(x)DU(x)
              cov   = d1 M(x) + d2 M(y1),   y1 = x + c12 h M(x)DU(x)

  three-stage G(x)  = -b1 M(x)DU(x) - b2 M(x1)DU(x1) - b3 M(x2)DU(x2),
              x1    = x - a12 h M(x)DU(x),
              x2    = x - a31 h M(x)DU(x) - a32 h M(x1)DU(x1)
              cov   = d1 M(x) + d2 M(y1) + d3 M(y2) with y-points displaced
                      uphill by the c couplings

Note the covariance stage points move along +M DU (uphill) while the drift
stage points move along -M DU; this asymmetry is intentional.

Stage points that leave the model domain use the domain extension (M = I,
DU = 0); the energy-shift diagnostic returns +inf there instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .linalg import cholesky_batch, full_solve
from .model_api import Model, as_state_batch

__all__ = [
    "DriftScheme",
    "NoiseScheme",
    "StageFractionPolicy",
    "DRIFT_SCHEME_NAMES",
    "NOISE_SCHEME_NAMES",
    "make_drift_scheme",
    "make_noise_scheme",
    "make_stage_fraction_policy",
    "order_condition_residuals",
    "staged_drift",
    "staged_mobility",
    "small_noise_exponent",
    "select_stage_fraction",
    "scan_energy_grid",
    "PATCHED_CANDIDATES",
    "OPTIMIZED_INTERVAL",
]

_F = Fraction


def _frac(value) -> Fraction:
    return value if isinstance(value, Fraction) else Fraction(value)


@dataclass(frozen=True)
class DriftScheme:
    """Stage weights and couplings for the proposal drift.

    kind is one of zero, euler, midpoint, rk2, rk3.  euler and midpoint are
    fixed two-stage parameterizations (b = (1,0,0,0) and (0,0,0,1)); rk2 is
    the general two-stage family; rk3 the general three-stage family.
    """

    kind: str
    b: tuple = ()
    a12: Fraction = _F(0)
    a31: Fraction = _F(0)
    a32: Fraction = _F(0)

    @property
    def family(self) -> str:
        if self.kind == "zero":
            return "zero"
        if self.kind == "rk3":
            return "rk3"
        return "rk2"


@dataclass(frozen=True)
class NoiseScheme:
    """Stage weights d and couplings c for the proposal noise covariance."""

    kind: str  # frozen | rk2 | rk3
    d: tuple = ()
    c12: Fraction = _F(0)
    c31: Fraction = _F(0)
    c32: Fraction = _F(0)


@dataclass(frozen=True)
class StageFractionPolicy:
    """How the first stage fraction a12 is chosen at the midpoint state.

    fixed      use the drift scheme's own value (or an explicit override)
    patched    exact argmin of the energy-shift diagnostic over the
               candidate set (2/3, 1, 1/2), ties kept in set order
    optimized  continuous argmin over [1/2, 1] by grid plus golden section
    """

    kind: str
    value: float | None = None


PATCHED_CANDIDATES = (_F(2, 3), _F(1), _F(1, 2))
OPTIMIZED_INTERVAL = (_F(1, 2), _F(1))

_RALSTON_B = (_F(5, 8), _F(-3, 8), _F(-3, 8), _F(9, 8))
_KUTTA_B = (_F(1, 6), _F(2, 3), _F(1, 6))

_DRIFT_PRESETS = {
    "zero": DriftScheme(kind="zero"),
    "euler": DriftScheme(kind="euler", b=(_F(1), _F(0), _F(0), _F(0)), a12=_F(0)),
    "midpoint": DriftScheme(kind="midpoint", b=(_F(0), _F(0), _F(0), _F(1)), a12=_F(1, 2)),
    "ralston": DriftScheme(kind="rk2", b=_RALSTON_B, a12=_F(2, 3)),
    "kutta": DriftScheme(kind="rk3", b=_KUTTA_B, a12=_F(1, 2), a31=_F(-1), a32=_F(2)),
}

_NOISE_PRESETS = {
    "frozen": NoiseScheme(kind="frozen"),
    "rk2": NoiseScheme(kind="rk2", d=(_F(1, 4), _F(3, 4)), c12=_F(2, 3)),
    "rk3": NoiseScheme(kind="rk3", d=_KUTTA_B, c12=_F(1, 2), c31=_F(-1), c32=_F(2)),
}

DRIFT_SCHEME_NAMES = tuple(sorted(_DRIFT_PRESETS))
NOISE_SCHEME_NAMES = tuple(sorted(_NOISE_PRESETS))


def make_drift_scheme(name: str, **coeffs) -> DriftScheme:
    """Look up a preset by name, optionally overriding coefficients.

    Overrides accept b1..b4 (b1..b3 for the three-stage family), a12, a31,
    a32, as reals or rationals.
    """
    if name not in _DRIFT_PRESETS:
        raise ValueError(
            f"unknown drift scheme {name!r}; known: {', '.join(DRIFT_SCHEME_NAMES)}"
        )
    base = _DRIFT_PRESETS[name]
    if not coeffs:
        return base
    if base.family == "zero":
        raise ValueError("the zero scheme has no coefficients")
    nb = len(base.b)
    b = list(base.b)
    kw = {}
    for key, value in coeffs.items():
        if key.startswith("b") and key[1:].isdigit():
            i = int(key[1:]) - 1
            if not 0 <= i < nb:
                raise ValueError(f"{name!r} has no coefficient {key}")
            b[i] = _frac(value)
        elif key in ("a12", "a31", "a32"):
            if base.family == "rk2" and key != "a12":
                raise ValueError(f"two-stage scheme has no coefficient {key}")
            kw[key] = _frac(value)
        else:
            raise ValueError(f"unknown drift coefficient {key!r}")
    return DriftScheme(
        kind=base.kind,
        b=tuple(b),
        a12=kw.get("a12", base.a12),
        a31=kw.get("a31", base.a31),
        a32=kw.get("a32", base.a32),
    )


def make_noise_scheme(name: str, **coeffs) -> NoiseScheme:
    if name not in _NOISE_PRESETS:
        raise ValueError(
            f"unknown noise scheme {name!r}; known: {', '.join(NOISE_SCHEME_NAMES)}"
        )
    base = _NOISE_PRESETS[name]
    if not coeffs:
        return base
    if base.kind == "frozen":
        raise ValueError("the frozen scheme has no coefficients")
    d = list(base.d)
    kw = {}
    for key, value in coeffs.items():
        if key.startswith("d") and key[1:].isdigit():
            i = int(key[1:]) - 1
            if not 0 <= i < len(d):
                raise ValueError(f"{name!r} has no coefficient {key}")
            d[i] = _frac(value)
        elif key in ("c12", "c31", "c32"):
            if base.kind == "rk2" and key != "c12":
                raise ValueError(f"two-stage scheme has no coefficient {key}")
            kw[key] = _frac(value)
        else:
            raise ValueError(f"unknown noise coefficient {key!r}")
    return NoiseScheme(
        kind=base.kind,
        d=tuple(d),
        c12=kw.get("c12", base.c12),
        c31=kw.get("c31", base.c31),
        c32=kw.get("c32", base.c32),
    )


def make_stage_fraction_policy(kind: str, value: float | None = None) -> StageFractionPolicy:
    if kind not in ("fixed", "patched", "optimized"):
        raise ValueError(f"unknown stage fraction policy {kind!r}")
    if kind != "fixed" and value is not None:
        raise ValueError(f"policy {kind!r} takes no fixed value")
    return StageFractionPolicy(kind=kind, value=None if value is None else float(value))


def order_condition_residuals(scheme: DriftScheme) -> tuple:
    """Residuals of the accuracy conditions, in exact rational arithmetic.

    Two-stage family: sum(b) = 1, (b2 + b4) a12 = 1/2, b3 = b2.
    Three-stage family: sum(b) = 1, b2 a12 + b3 (a31 + a32) = 1/2,
    b2 a12^2 + b3 (a31 + a32)^2 = 1/3, a12 a32 b3 = 1/6.
    """
    fam = scheme.family
    if fam == "rk2":
        b1, b2, b3, b4 = scheme.b
        a12 = scheme.a12
        return (
            b1 + b2 + b3 + b4 - 1,
            (b2 + b4) * a12 - _F(1, 2),
            b3 - b2,
        )
    if fam == "rk3":
        b1, b2, b3 = scheme.b
        a12, a31, a32 = scheme.a12, scheme.a31, scheme.a32
        return (
            b1 + b2 + b3 - 1,
            b2 * a12 + b3 * (a31 + a32) - _F(1, 2),
            b2 * a12 ** 2 + b3 * (a31 + a32) ** 2 - _F(1, 3),
            a12 * a32 * b3 - _F(1, 6),
        )
    raise ValueError("order conditions are defined for staged schemes only")


def _mdot(mats: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", mats, vecs)


def _fraction_column(value, batch: int) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return np.broadcast_to(arr, (batch,))[..., None]


def staged_drift(
    scheme: DriftScheme,
    model: Model,
    x: np.ndarray,
    h: float,
    a12=None,
) -> np.ndarray:
    """Evaluate the staged proposal drift at x.

    ``a12`` overrides the scheme's first stage fraction; it may be a scalar
    or a per-batch-element array (two-stage family only).  Stage points that
    leave the domain contribute through the extension (M = I, DU = 0).
    """
    xb, single = as_state_batch(x, model.dim)
    fam = scheme.family
    if fam == "zero":
        g = np.zeros_like(xb)
        return g[0] if single else g
    if a12 is not None and fam != "rk2":
        raise ValueError("stage fraction override applies to the two-stage family only")

    nbatch = xb.shape[0]
    du0 = model.grad(xb)
    m0 = model.mobility(xb)
    f0 = _mdot(m0, du0)

    if fam == "rk2":
        b1, b2, b3, b4 = (float(v) for v in scheme.b)
        a_col = _fraction_column(float(scheme.a12) if a12 is None else a12, nbatch)
        x1 = xb - h * a_col * f0
        du1 = model.grad(x1)
        m1 = model.mobility(x1)
        g = -(b1 * f0 + b2 * _mdot(m0, du1) + b3 * _mdot(m1, du0) + b4 * _mdot(m1, du1))
    else:
        b1, b2, b3 = (float(v) for v in scheme.b)
        a12f, a31, a32 = float(scheme.a12), float(scheme.a31), float(scheme.a32)
        x1 = xb - h * a12f * f0
        f1 = _mdot(model.mobility(x1), model.grad(x1))
        x2 = xb - h * a31 * f0 - h * a32 * f1
        f2 = _mdot(model.mobility(x2), model.grad(x2))
        g = -(b1 * f0 + b2 * f1 + b3 * f2)

    return g[0] if single else g


def staged_mobility(
    scheme: NoiseScheme,
    model: Model,
    x: np.ndarray,
    h: float,
) -> np.ndarray:
    """Weighted stage sum of mobility evaluations, symmetrized.

    With constant mobility every stage sees the same matrix and the sum
    collapses to it exactly, so the matrix is returned directly.
    """
    xb, single = as_state_batch(x, model.dim)
    if scheme.kind == "frozen" or model.has_constant_mobility:
        out = model.mobility(xb)
        return out[0] if single else out

    du0 = model.grad(xb)
    m0 = model.mobility(xb)
    f0 = _mdot(m0, du0)
    if scheme.kind == "rk2":
        d1, d2 = (float(v) for v in scheme.d)
        y1 = xb + h * float(scheme.c12) * f0
        out = d1 * m0 + d2 * model.mobility(y1)
    elif scheme.kind == "rk3":
        d1, d2, d3 = (float(v) for v in scheme.d)
        y1 = xb + h * float(scheme.c12) * f0
        m1 = model.mobility(y1)
        f1 = _mdot(m1, model.grad(y1))
        y2 = xb + h * float(scheme.c31) * f0 + h * float(scheme.c32) * f1
        out = d1 * m0 + d2 * m1 + d3 * model.mobility(y2)
    else:
        raise ValueError(f"unknown noise scheme kind {scheme.kind!r}")
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    return out[0] if single else out


def small_noise_exponent(
    drift: DriftScheme,
    noise: NoiseScheme,
    model: Model,
    x: np.ndarray,
    h: float,
    a12=None,
) -> np.ndarray:
    """Energy shift governing acceptance in the vanishing-noise limit.

    E(x) = U(x + hG(x)) - U(x) + h G(x)^T Mh(x + hG(x))^{-1} G(x).
    Negative values mean the deterministic proposal is accepted in the limit;
    +inf is returned when x or the shifted point leaves the domain or the
    staged covariance fails to factor.
    """
    xb, single = as_state_batch(x, model.dim)
    g = staged_drift(drift, model, xb, h, a12=a12)
    y = xb + h * g
    ok = model.in_domain(xb) & model.in_domain(y)
    u0 = model.energy(xb)
    u1 = model.energy(y)
    mh = staged_mobility(noise, model, y, h)
    factor, spd_ok = cholesky_batch(mh)
    ok = ok & spd_ok
    z = full_solve(factor, g)
    quad = h * np.einsum("...i,...i->...", g, z)
    with np.errstate(invalid="ignore"):
        e = u1 - u0 + quad
    e = np.where(ok & np.isfinite(e), e, np.inf)
    return e[0] if single else e


def select_stage_fraction(
    policy: StageFractionPolicy,
    drift: DriftScheme,
    noise: NoiseScheme,
    model: Model,
    x_tilde: np.ndarray,
    h: float,
) -> np.ndarray:
    """Pick a12 per batch element at the midpoint state, by policy.

    patched takes the exact argmin over the candidate triple; ties keep the
    earliest candidate, and an all-infinite row also falls back to it.
    optimized runs a nine-point grid then golden-section refinement to an
    interval width below 1e-4.
    """
    xb, single = as_state_batch(x_tilde, model.dim)
    nbatch = xb.shape[0]

    if policy.kind == "fixed":
        val = float(drift.a12) if policy.value is None else policy.value
        out = np.full(nbatch, val)
        return out[0] if single else out
    if drift.family != "rk2":
        raise ValueError("adaptive stage fraction applies to the two-stage family only")

    def energies(a_vals: np.ndarray) -> np.ndarray:
        return small_noise_exponent(drift, noise, model, xb, h, a12=a_vals)

    if policy.kind == "patched":
        cand = np.array([float(c) for c in PATCHED_CANDIDATES])
        evals = np.stack([energies(np.full(nbatch, c)) for c in cand])
        out = cand[np.argmin(evals, axis=0)]
        return out[0] if single else out

    if policy.kind != "optimized":
        raise ValueError(f"unknown stage fraction policy {policy.kind!r}")

    lo_f, hi_f = float(OPTIMIZED_INTERVAL[0]), float(OPTIMIZED_INTERVAL[1])
    grid = np.linspace(lo_f, hi_f, 9)
    evals = np.stack([energies(np.full(nbatch, gv)) for gv in grid])
    k = np.argmin(evals, axis=0)
    lo = grid[np.clip(k - 1, 0, len(grid) - 1)]
    hi = grid[np.clip(k + 1, 0, len(grid) - 1)]

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc = energies(c)
    fd = energies(d)
    # max starting width is 1/4; stop below 1e-4
    n_iter = int(np.ceil(np.log(1e-4 / 0.25) / np.log(invphi)))
    for _ in range(n_iter):
        left = fc < fd
        new_lo = np.where(left, lo, c)
        new_hi = np.where(left, d, hi)
        new_c = new_hi - invphi * (new_hi - new_lo)
        new_d = new_lo + invphi * (new_hi - new_lo)
        probe = np.where(left, new_c, new_d)
        fprobe = energies(probe)
        fc, fd = np.where(left, fprobe, fd), np.where(left, fc, fprobe)
        lo, hi, c, d = new_lo, new_hi, new_c, new_d
    out = 0.5 * (lo + hi)
    return out[0] if single else out


def scan_energy_grid(
    drift: DriftScheme,
    noise: NoiseScheme,
    model: Model,
    region,
    resolution,
    h: float,
) -> tuple:
    """Sample the small-noise energy shift on a regular grid.

    For a 2D model the region is ((x1_lo, x1_hi), (x2_lo, x2_hi)) in state
    space.  For a 1D model the first range sweeps the coordinate and the
    second sweeps the stage fraction a12, so the grid shows where each a12
    keeps the shift negative.  Returns (axis1, axis2, values) with values
    shaped (len(axis1), len(axis2)).
    """
    if model.dim not in (1, 2):
        raise ValueError("grid scans support 1D and 2D models only")
    (lo1, hi1), (lo2, hi2) = region
    n1, n2 = (resolution, resolution) if np.isscalar(resolution) else resolution
    ax1 = np.linspace(lo1, hi1, n1)
    ax2 = np.linspace(lo2, hi2, n2)
    if n1 == 0 or n2 == 0:
        return ax1, ax2, np.zeros((n1, n2))
    g1, g2 = np.meshgrid(ax1, ax2, indexing="ij")
    if model.dim == 2:
        pts = np.stack([g1.ravel(), g2.ravel()], axis=-1)
        vals = small_noise_exponent(drift, noise, model, pts, h)
    else:
        pts = g1.reshape(-1, 1)
        vals = small_noise_exponent(drift, noise, model, pts, h, a12=g2.ravel())
    return ax1, ax2, vals.reshape(n1, n2)
