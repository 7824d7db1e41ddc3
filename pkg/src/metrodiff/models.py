"""Model catalog: the benchmark potentials and mobilities.

Each model couples a potential energy U with a mobility field M (SPD for every
state in the domain).  The catalog covers:

  heavy_tail       1D logarithmic potential on {x >= 1}; heavy-tailed
                   stationary law, unit mobility.
  tilted_well      1D periodic square-well profile built from tanh steps,
                   tilted by a constant force; unit mobility.
  fene_chain       1D chain of finitely extensible springs pinned to a box,
                   mobility equal to the inverse of a tridiagonal friction
                   matrix whose entries diverge as gaps close.
  dna_chain        3D bead chain with worm-like-chain springs and the
                   Rotne-Prager-Yamakawa pair mobility.
  rouse_chain      Hookean-spring calibration variant of dna_chain.
  double_well2d    2D double-well potential, identity or radially scaled
                   mobility.
  double_well1d    1D quartic double well, unit mobility.
  quadratic1d      harmonic potential, unit mobility (calibration).
  gaussian_well2d  separable quadratic in 2D (calibration).

Parameter records are frozen dataclasses; models are constructed through
``make_model(name, **params)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfDomainError, ZeroSeparationError
from .linalg import cholesky_batch, full_solve
from .model_api import Model, as_state_batch

__all__ = [
    "HeavyTailParams",
    "TiltedWellParams",
    "Chain1dParams",
    "RpyChainParams",
    "DoubleWell2dParams",
    "HeavyTail",
    "TiltedWell",
    "FeneChain",
    "RpyChainWlc",
    "RpyChainHookean",
    "DoubleWell2d",
    "DoubleWell1d",
    "Quadratic1d",
    "GaussianWell2d",
    "fene_energy",
    "fene_force_scalar",
    "friction_matrix",
    "chain1d_mobility",
    "wlc_energy",
    "wlc_force_scalar",
    "rpy_far_coefficients",
    "rpy_near_coefficients",
    "rpy_block",
    "MODEL_NAMES",
    "make_model",
]

TILT_PERIOD = 3.0


def _sech_sq(u: np.ndarray) -> np.ndarray:
    """Numerically safe sech(u)^2 for large |u|."""
    a = np.exp(-np.abs(u))
    return (2.0 * a / (1.0 + a * a)) ** 2


# ---------------------------------------------------------------------------
# heavy_tail
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeavyTailParams:
    eta: float = 1.5


class HeavyTail(Model):
    """U(x) = eta * log(x) on {x >= 1}; stationary density ~ x^(-eta)."""

    name = "heavy_tail"
    dim = 1
    has_constant_mobility = True

    def __init__(self, params: HeavyTailParams = HeavyTailParams()):
        self.params = params

    def _in_domain(self, x):
        return x[..., 0] >= 1.0

    def _energy(self, x):
        return self.params.eta * np.log(x[..., 0])

    def _grad(self, x):
        return self.params.eta / x

    def default_initial(self):
        return np.array([2.0])

    scalar_kernel_id = 0

    @property
    def scalar_kernel_params(self):
        return (self.params.eta, 0.0)


# ---------------------------------------------------------------------------
# tilted_well
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TiltedWellParams:
    force: float = 0.25
    epsilon: float = 1e-3


class TiltedWell(Model):
    """Periodic well profile tilted by a constant force.

    The energy is tanh((m - 2)/eps) - tanh((m - 1)/eps) - F*x where
    m = x mod 3 (floor convention, so m is always in [0, 3)).  The well
    floor sits on (1, 2) within each period, with plateaus on either side;
    eps controls the wall steepness.
    """

    name = "tilted_well"
    dim = 1
    has_constant_mobility = True

    def __init__(self, params: TiltedWellParams = TiltedWellParams()):
        self.params = params

    def _energy(self, x):
        xx = x[..., 0]
        m = xx - TILT_PERIOD * np.floor(xx / TILT_PERIOD)
        eps = self.params.epsilon
        return np.tanh((m - 2.0) / eps) - np.tanh((m - 1.0) / eps) - self.params.force * xx

    def _grad(self, x):
        m = x - TILT_PERIOD * np.floor(x / TILT_PERIOD)
        eps = self.params.epsilon
        return (_sech_sq((m - 2.0) / eps) - _sech_sq((m - 1.0) / eps)) / eps - self.params.force

    def default_initial(self):
        return np.array([1.5])

    scalar_kernel_id = 1

    @property
    def scalar_kernel_params(self):
        return (self.params.force, self.params.epsilon)


# ---------------------------------------------------------------------------
# fene_chain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Chain1dParams:
    # Default rest length 1/6: the benchmark initial state packs bead pairs
    # 0.01 apart with 0.22-wide gaps between pairs, so the finite-extension
    # limit 2*ell must stay above 0.22 with enough margin that staged
    # proposals at the production step sizes remain inside the domain.
    n_beads: int = 8
    mu: float = 1.0
    box: float = 1.0
    epsilon: float = 1.0
    ell: float = 1.0 / 6.0

    @property
    def rest_length(self) -> float:
        return self.ell


def fene_energy(gap: np.ndarray, epsilon: float, ell: float) -> np.ndarray:
    """Finitely extensible spring energy; finite only for gap in (0, 2*ell)."""
    u = gap / (2.0 * ell)
    return -(epsilon / 2.0) * np.log(2.0 * u * (1.0 - u))


def fene_force_scalar(gap: np.ndarray, epsilon: float, ell: float) -> np.ndarray:
    """d/dgap of fene_energy."""
    return -(epsilon / 2.0) * (1.0 / gap - 1.0 / (2.0 * ell - gap))


def _chain_gaps(x: np.ndarray, box: float) -> np.ndarray:
    return np.diff(x, axis=-1, prepend=0.0, append=box)


def friction_matrix(x: np.ndarray, params: Chain1dParams) -> np.ndarray:
    """Tridiagonal bead friction with ghost neighbors pinned at 0 and box.

    Gamma_ii = mu/gap_i + mu/gap_{i+1}, Gamma_{i,i+1} = -mu/gap_{i+1}.
    Requires the state in the domain (all gaps positive).
    """
    xb, single = as_state_batch(x, params.n_beads)
    g = _chain_gaps(xb, params.box)
    if not (g > 0.0).all():
        raise OutOfDomainError("friction matrix needs strictly ordered beads inside the box")
    inv = params.mu / g
    n = params.n_beads
    out = np.zeros(xb.shape[:-1] + (n, n))
    idx = np.arange(n)
    out[..., idx, idx] = inv[..., :-1] + inv[..., 1:]
    off = -inv[..., 1:-1]
    out[..., idx[:-1], idx[1:]] = off
    out[..., idx[1:], idx[:-1]] = off
    return out[0] if single else out


def chain1d_mobility(x: np.ndarray, params: Chain1dParams) -> np.ndarray:
    """Inverse of the friction matrix, via Cholesky solves, symmetrized."""
    gamma = friction_matrix(x, params)
    single = gamma.ndim == 2
    if single:
        gamma = gamma[None]
    factor, ok = cholesky_batch(gamma)
    if not ok.all():
        raise OutOfDomainError("friction matrix not positive definite")
    eye = np.broadcast_to(np.eye(params.n_beads), gamma.shape)
    m = full_solve(factor, eye)
    m = 0.5 * (m + np.swapaxes(m, -1, -2))
    return m[0] if single else m


class FeneChain(Model):
    """1D chain of finitely extensible springs with gap-dependent friction."""

    name = "fene_chain"

    def __init__(self, params: Chain1dParams = Chain1dParams()):
        self.params = params
        self.dim = params.n_beads

    def _in_domain(self, x):
        g = _chain_gaps(x, self.params.box)
        lim = 2.0 * self.params.rest_length
        return (g > 0.0).all(axis=-1) & (g < lim).all(axis=-1)

    def _energy(self, x):
        g = _chain_gaps(x, self.params.box)
        return fene_energy(g, self.params.epsilon, self.params.rest_length).sum(axis=-1)

    def _grad(self, x):
        g = _chain_gaps(x, self.params.box)
        fp = fene_force_scalar(g, self.params.epsilon, self.params.rest_length)
        return fp[..., :-1] - fp[..., 1:]

    def _mobility(self, x):
        return chain1d_mobility(x, self.params)

    def default_initial(self):
        # pairwise compressed configuration used by the chain benchmarks
        return np.array([0.10, 0.11, 0.33, 0.34, 0.56, 0.57, 0.79, 0.81])

    def equilibrium_positions(self):
        n = self.params.n_beads
        return self.params.box * np.arange(1, n + 1) / (n + 1)


# ---------------------------------------------------------------------------
# Rotne-Prager-Yamakawa chains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RpyChainParams:
    n_beads: int = 11
    bead_radius: float = 0.077
    ell: float = 2.1
    kuhn_length: float = 0.1
    solvent_viscosity: float = 1e-9
    kT: float = 4.11e-9

    @property
    def zeta(self) -> float:
        return 6.0 * np.pi * self.solvent_viscosity * self.bead_radius


def rpy_far_coefficients(r: np.ndarray, bead_radius: float):
    """Pair mobility coefficients for separations beyond two radii."""
    t = bead_radius / r
    t3 = t ** 3
    return 0.75 * t + 0.5 * t3, 0.75 * t - 1.5 * t3


def rpy_near_coefficients(r: np.ndarray, bead_radius: float):
    """Overlap-regularized pair coefficients for separations within two radii."""
    s = r / bead_radius
    return 1.0 - (9.0 / 32.0) * s, (3.0 / 32.0) * s


def rpy_block(q: np.ndarray, bead_radius: float, zeta: float) -> np.ndarray:
    """3x3 cross-mobility block for bead separation vector q (single pair)."""
    q = np.asarray(q, dtype=np.float64)
    r = float(np.sqrt((q * q).sum()))
    if r == 0.0:
        raise ZeroSeparationError("pair mobility undefined for coincident beads")
    if r > 2.0 * bead_radius:
        c1, c2 = rpy_far_coefficients(r, bead_radius)
    else:
        c1, c2 = rpy_near_coefficients(r, bead_radius)
    qhat = q / r
    return (c1 * np.eye(3) + c2 * np.outer(qhat, qhat)) / zeta


def _rpy_mobility(pos: np.ndarray, params: RpyChainParams) -> np.ndarray:
    """Assemble the full 3N x 3N mobility for positions (..., N, 3)."""
    nb = params.n_beads
    ii, jj = np.triu_indices(nb, 1)
    d = pos[..., ii, :] - pos[..., jj, :]
    r = np.sqrt((d * d).sum(axis=-1))
    c1f, c2f = rpy_far_coefficients(r, params.bead_radius)
    c1n, c2n = rpy_near_coefficients(r, params.bead_radius)
    far = r > 2.0 * params.bead_radius
    c1 = np.where(far, c1f, c1n)
    c2 = np.where(far, c2f, c2n)
    qhat = d / r[..., None]
    blocks = c1[..., None, None] * np.eye(3) + c2[..., None, None] * (
        qhat[..., :, None] * qhat[..., None, :]
    )
    blocks = blocks / params.zeta
    n = 3 * nb
    out = np.zeros(pos.shape[:-2] + (n, n))
    rows = (3 * ii[:, None] + np.arange(3)[None, :])[:, :, None]
    cols = (3 * jj[:, None] + np.arange(3)[None, :])[:, None, :]
    out[..., rows, cols] = blocks
    out[..., cols.swapaxes(-1, -2), rows.swapaxes(-1, -2)] = blocks
    k = np.arange(n)
    out[..., k, k] = 1.0 / params.zeta
    return out


def wlc_energy(r: np.ndarray, params: RpyChainParams) -> np.ndarray:
    """Worm-like-chain spring energy, finite for extension r in [0, ell)."""
    ell = params.ell
    pref = params.kT / (2.0 * params.kuhn_length)
    return pref * (ell * ell / (ell - r) - r + 2.0 * r * r / ell)


def wlc_force_scalar(r: np.ndarray, params: RpyChainParams) -> np.ndarray:
    """d/dr of wlc_energy; vanishes at r = 0."""
    ell = params.ell
    pref = params.kT / (2.0 * params.kuhn_length)
    return pref * (ell * ell / (ell - r) ** 2 - 1.0 + 4.0 * r / ell)


class _RpyChainBase(Model):
    def __init__(self, params: RpyChainParams = RpyChainParams()):
        self.params = params
        self.dim = 3 * params.n_beads

    def _positions(self, x):
        return x.reshape(x.shape[:-1] + (self.params.n_beads, 3))

    def _spring_vectors(self, pos):
        d = pos[..., 1:, :] - pos[..., :-1, :]
        r = np.sqrt((d * d).sum(axis=-1))
        return d, r

    def _pair_distances_positive(self, pos):
        ii, jj = np.triu_indices(self.params.n_beads, 1)
        d = pos[..., ii, :] - pos[..., jj, :]
        r2 = (d * d).sum(axis=-1)
        return (r2 > 0.0).all(axis=-1)

    def _mobility(self, x):
        return _rpy_mobility(self._positions(x), self.params)

    def div_mobility(self, x):
        # the pair tensor is divergence free in both branches
        xb, single = as_state_batch(x, self.dim)
        out = np.zeros_like(xb)
        return out[0] if single else out

    def default_initial(self):
        pos = np.zeros((self.params.n_beads, 3))
        pos[:, 0] = 1.5 * np.arange(self.params.n_beads)
        return pos.reshape(-1)


class RpyChainWlc(_RpyChainBase):
    """Bead chain with worm-like-chain springs and pair hydrodynamics."""

    name = "dna_chain"

    def _in_domain(self, x):
        pos = self._positions(x)
        _, r = self._spring_vectors(pos)
        ok = (r < self.params.ell).all(axis=-1) & (r > 0.0).all(axis=-1)
        return ok & self._pair_distances_positive(pos)

    def _energy(self, x):
        _, r = self._spring_vectors(self._positions(x))
        return wlc_energy(r, self.params).sum(axis=-1)

    def _grad(self, x):
        pos = self._positions(x)
        d, r = self._spring_vectors(pos)
        f = wlc_force_scalar(r, self.params)
        contrib = (f / r)[..., None] * d
        out = np.zeros_like(pos)
        out[..., :-1, :] -= contrib
        out[..., 1:, :] += contrib
        return out.reshape(x.shape)


class RpyChainHookean(_RpyChainBase):
    """Hookean-spring calibration variant: stiffness 3 kT / (kuhn * ell)."""

    name = "rouse_chain"

    @property
    def stiffness(self) -> float:
        return 3.0 * self.params.kT / (self.params.kuhn_length * self.params.ell)

    def _in_domain(self, x):
        pos = self._positions(x)
        _, r = self._spring_vectors(pos)
        return (r > 0.0).all(axis=-1) & self._pair_distances_positive(pos)

    def _energy(self, x):
        _, r = self._spring_vectors(self._positions(x))
        return 0.5 * self.stiffness * (r * r).sum(axis=-1)

    def _grad(self, x):
        pos = self._positions(x)
        d, _ = self._spring_vectors(pos)
        contrib = self.stiffness * d
        out = np.zeros_like(pos)
        out[..., :-1, :] -= contrib
        out[..., 1:, :] += contrib
        return out.reshape(x.shape)


# ---------------------------------------------------------------------------
# double wells and quadratics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DoubleWell2dParams:
    mobility: str = "constant"  # "constant" or "radial"


class DoubleWell2d(Model):
    """U = 5 (x2^2 - 1)^2 + 5/4 (x2 - x1/2)^2 with minima at (+-2, +-1)."""

    name = "double_well2d"
    dim = 2

    def __init__(self, params: DoubleWell2dParams = DoubleWell2dParams()):
        if params.mobility not in ("constant", "radial"):
            raise ValueError(f"unknown mobility kind {params.mobility!r}")
        self.params = params
        self.has_constant_mobility = params.mobility == "constant"

    def _energy(self, x):
        x1, x2 = x[..., 0], x[..., 1]
        return 5.0 * (x2 * x2 - 1.0) ** 2 + 1.25 * (x2 - 0.5 * x1) ** 2

    def _grad(self, x):
        x1, x2 = x[..., 0], x[..., 1]
        s = x2 - 0.5 * x1
        g = np.empty_like(x)
        g[..., 0] = -1.25 * s
        g[..., 1] = 20.0 * x2 * (x2 * x2 - 1.0) + 2.5 * s
        return g

    def _mobility(self, x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        if self.has_constant_mobility:
            out[..., 0, 0] = 1.0
            out[..., 1, 1] = 1.0
        else:
            f = 1.0 + (x * x).sum(axis=-1)
            out[..., 0, 0] = f
            out[..., 1, 1] = f
        return out

    def div_mobility(self, x):
        if self.has_constant_mobility:
            return super().div_mobility(x)
        xb, single = as_state_batch(x, self.dim)
        out = 2.0 * xb
        return out[0] if single else out

    def minima(self):
        return np.array([[2.0, 1.0], [-2.0, -1.0]])

    def default_initial(self):
        return np.array([0.0, -0.01])


class DoubleWell1d(Model):
    """U(x) = (1 - x^2)^2 / 4; unit mobility."""

    name = "double_well1d"
    dim = 1
    has_constant_mobility = True

    def __init__(self):
        self.params = None

    def _energy(self, x):
        xx = x[..., 0]
        return 0.25 * (1.0 - xx * xx) ** 2

    def _grad(self, x):
        return x * (x * x - 1.0)

    def default_initial(self):
        return np.array([0.5])

    scalar_kernel_id = 2
    scalar_kernel_params = (0.0, 0.0)


@dataclass(frozen=True)
class Quadratic1dParams:
    k: float = 1.0


class Quadratic1d(Model):
    """U(x) = k x^2 / 2; unit mobility.  The workhorse calibration model."""

    name = "quadratic1d"
    dim = 1
    has_constant_mobility = True

    def __init__(self, params: Quadratic1dParams = Quadratic1dParams()):
        self.params = params

    def _energy(self, x):
        return 0.5 * self.params.k * (x[..., 0] ** 2)

    def _grad(self, x):
        return self.params.k * x

    def default_initial(self):
        return np.array([1.0])

    scalar_kernel_id = 3

    @property
    def scalar_kernel_params(self):
        return (self.params.k, 0.0)


@dataclass(frozen=True)
class GaussianWell2dParams:
    k1: float = 1.0
    k2: float = 4.0


class GaussianWell2d(Model):
    """Separable quadratic in two dimensions; unit mobility."""

    name = "gaussian_well2d"
    dim = 2
    has_constant_mobility = True

    def __init__(self, params: GaussianWell2dParams = GaussianWell2dParams()):
        self.params = params

    def _energy(self, x):
        return 0.5 * (self.params.k1 * x[..., 0] ** 2 + self.params.k2 * x[..., 1] ** 2)

    def _grad(self, x):
        g = np.empty_like(x)
        g[..., 0] = self.params.k1 * x[..., 0]
        g[..., 1] = self.params.k2 * x[..., 1]
        return g

    def default_initial(self):
        return np.array([1.0, 1.0])


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

_REGISTRY = {
    "heavy_tail": (HeavyTail, HeavyTailParams),
    "tilted_well": (TiltedWell, TiltedWellParams),
    "fene_chain": (FeneChain, Chain1dParams),
    "dna_chain": (RpyChainWlc, RpyChainParams),
    "rouse_chain": (RpyChainHookean, RpyChainParams),
    "double_well2d": (DoubleWell2d, DoubleWell2dParams),
    "double_well1d": (DoubleWell1d, None),
    "quadratic1d": (Quadratic1d, Quadratic1dParams),
    "gaussian_well2d": (GaussianWell2d, GaussianWell2dParams),
}

MODEL_NAMES = tuple(sorted(_REGISTRY))


def make_model(name: str, **params) -> Model:
    if name not in _REGISTRY:
        raise ValueError(f"unknown model {name!r}; known: {', '.join(MODEL_NAMES)}")
    cls, pcls = _REGISTRY[name]
    if pcls is None:
        if params:
            raise ValueError(f"model {name!r} takes no parameters")
        return cls()
    return cls(pcls(**params))
