"""Estimators and study drivers built on the ensemble layer.

Everything here reduces raw ensemble output to the quantities experiments
report: moment estimates with normal-approximation error bars, strided
observable series, first-passage samples, wrapped stationary histograms
with their quadrature reference, and weak-error studies with a fitted
log-log slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .ensemble import (
    OBSERVABLES,
    EnsembleTask,
    PassageResult,
    run_endpoints,
    run_first_passage,
    run_series,
)
from .model_api import Model
from .models import TILT_PERIOD, TiltedWellParams

__all__ = [
    "EnsembleEstimate",
    "ConvergenceStudy",
    "estimate",
    "estimate_endpoint_observable",
    "gyration_radius_sq",
    "first_passage_time",
    "passage_times",
    "mfpt_oracle",
    "wrapped_density",
    "wrapped_gibbs_reference",
    "empirical_sup_distance",
    "heavy_tail_cdf",
    "fit_loglog_slope",
    "richardson_reference",
    "weak_error_study",
]


@dataclass(frozen=True)
class EnsembleEstimate:
    """Sample mean with its normal-approximation standard error."""

    value: float
    std_error: float
    n_samples: int

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("an estimate needs at least two samples")

    def interval(self, width: float = 1.96) -> tuple:
        return (self.value - width * self.std_error,
                self.value + width * self.std_error)


@dataclass(frozen=True)
class ConvergenceStudy:
    """Per-step-size errors against a reference, with a fitted rate."""

    h_values: tuple
    errors: tuple
    std_errors: tuple
    slope: float
    reference: str
    reliable: bool

    def __post_init__(self):
        hs = self.h_values
        if any(hs[i] <= hs[i + 1] for i in range(len(hs) - 1)):
            raise ValueError("h values must be strictly decreasing")


def estimate(samples: np.ndarray) -> EnsembleEstimate:
    samples = np.asarray(samples, dtype=float).ravel()
    n = samples.size
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return EnsembleEstimate(value=mean, std_error=se, n_samples=n)


def estimate_endpoint_observable(endpoints: np.ndarray, observable: str,
                                 model: Model) -> EnsembleEstimate:
    fn = OBSERVABLES[observable]
    return estimate(fn(endpoints, model))


def gyration_radius_sq(x: np.ndarray) -> float:
    """Mean squared distance of 3D beads from their centroid."""
    pos = np.asarray(x, dtype=float).reshape(-1, 3)
    centered = pos - pos.mean(axis=0)
    return float((centered * centered).sum() / pos.shape[0])


# ---------------------------------------------------------------------------
# first passage

def first_passage_time(n_steps_to_cross: int, h: float) -> float:
    """Midpoint-corrected passage time for a crossing at step n (1-based).

    The crossing happened somewhere inside the final step, so reporting the
    full nh would overestimate systematically; half a step is knocked off.
    """
    return n_steps_to_cross * h - h / 2.0


def passage_times(result: PassageResult, h: float) -> np.ndarray:
    """Corrected passage times for every crossing in a driver result."""
    return (result.crossing_steps + 1) * h - h / 2.0


def _tilted_energy(z: float, params: TiltedWellParams) -> float:
    m = z - TILT_PERIOD * math.floor(z / TILT_PERIOD)
    eps = params.epsilon
    return math.tanh((m - 2.0) / eps) - math.tanh((m - 1.0) / eps) - params.force * z


def mfpt_oracle(params: TiltedWellParams, beta: float, x0: float,
                flat_tilt: bool = False) -> float:
    """Mean first-passage time from x0 to x0 + period by double quadrature.

        tau = beta * int_{x0}^{x0+L} e^{beta U(y)} int_{-inf}^{y} e^{-beta U(z)} dz dy

    The inner integrand decays like e^{beta F z} to the left, so the lower
    limit is truncated where the integrand falls 16 decades below its
    maximum.  flat_tilt drops the wells and keeps only the linear tilt,
    for which the integrals collapse to period/F analytically.
    """
    if params.force <= 0:
        raise ValueError("the oracle needs a positive tilt")
    beta = float(beta)
    period = TILT_PERIOD

    if flat_tilt:
        def u(z):
            return -params.force * z
    else:
        def u(z):
            return _tilted_energy(z, params)

    # well walls sit where the fractional part crosses 1 or 2
    def jump_points(lo, hi):
        pts = []
        k = math.floor(lo / period)
        while k * period < hi + period:
            for off in (1.0, 2.0):
                p = k * period + off
                if lo < p < hi:
                    pts.append(p)
            k += 1
        return pts

    # conservative cutoff: potential range of the wells is 2
    tail = (16.0 * math.log(10.0) + 2.0 * beta * 2.0) / (beta * params.force)

    def weight(z):
        return math.exp(-beta * u(z))

    # the truncated left tail splits into whole periods; each is the one
    # nearest x0 scaled by e^{-beta F period} per period of shift, so the
    # pieces sum as a finite geometric series and only one needs quadrature
    n_tail = math.ceil(tail / period)
    ratio = math.exp(-beta * params.force * period)
    base, _ = quad(weight, x0 - period, x0,
                   points=jump_points(x0 - period, x0), limit=200, epsrel=1e-8)
    left = base * (1.0 - ratio ** n_tail) / (1.0 - ratio)

    def inner(y):
        seg, _ = quad(weight, x0, y, points=jump_points(x0, y),
                      limit=200, epsrel=1e-8)
        return left + seg

    hi = x0 + period
    val, err = quad(lambda y: math.exp(beta * u(y)) * inner(y), x0, hi,
                    points=jump_points(x0, hi), limit=200, epsrel=1e-6)
    if not math.isfinite(val) or (val != 0 and abs(err / val) > 1e-4):
        raise ArithmeticError("mean passage time quadrature did not converge")
    return beta * val


# ---------------------------------------------------------------------------
# wrapped stationary density

def wrapped_density(samples: np.ndarray, n_bins: int,
                    period: float = TILT_PERIOD) -> tuple:
    """Normalized histogram of samples folded into [0, period)."""
    wrapped = np.mod(np.asarray(samples, dtype=float).ravel(), period)
    counts, edges = np.histogram(wrapped, bins=n_bins, range=(0.0, period))
    width = period / n_bins
    density = counts / (counts.sum() * width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, density


def wrapped_gibbs_reference(params: TiltedWellParams, beta: float,
                            n_bins: int, period: float = TILT_PERIOD) -> tuple:
    """Per-bin quadrature of e^{-beta U} over one period, normalized.

    Within a single period the tilt contributes its e^{beta F x} factor;
    wrapping a reversible-measure trajectory reproduces exactly this shape.
    """
    edges = np.linspace(0.0, period, n_bins + 1)
    masses = np.empty(n_bins)

    def w(z):
        return math.exp(-beta * _tilted_energy(z, params))

    for i in range(n_bins):
        pts = [p for p in (1.0, 2.0) if edges[i] < p < edges[i + 1]]
        masses[i], _ = quad(w, edges[i], edges[i + 1], points=pts or None,
                            limit=200, epsrel=1e-8)
    width = period / n_bins
    density = masses / (masses.sum() * width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, density


# ---------------------------------------------------------------------------
# distribution comparison

def heavy_tail_cdf(eta: float, x: np.ndarray) -> np.ndarray:
    """Stationary distribution function of the log-potential model.

    Density x^{-eta} on [1, inf) normalizes only for eta > 1.
    """
    if eta <= 1:
        raise ValueError("the stationary density is not normalizable")
    x = np.asarray(x, dtype=float)
    out = 1.0 - np.power(np.clip(x, 1.0, None), 1.0 - eta)
    return np.where(x < 1.0, 0.0, out)


def empirical_sup_distance(samples: np.ndarray, cdf) -> float:
    """Kolmogorov distance between the sample and a reference CDF."""
    xs = np.sort(np.asarray(samples, dtype=float).ravel())
    n = xs.size
    f = np.asarray(cdf(xs), dtype=float)
    grid = np.arange(1, n + 1) / n
    return float(np.maximum(grid - f, f - (grid - 1.0 / n)).max())


# ---------------------------------------------------------------------------
# convergence studies

def fit_loglog_slope(h_values, errors) -> float:
    """Least-squares slope of log error against log step size."""
    h = np.asarray(h_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    keep = e > 0
    if keep.sum() < 2:
        return float("nan")
    slope = np.polyfit(np.log(h[keep]), np.log(e[keep]), 1)[0]
    return float(slope)


def richardson_reference(coarse: EnsembleEstimate, fine: EnsembleEstimate,
                         ratio: float, order: float) -> EnsembleEstimate:
    """Extrapolate two estimates at step sizes h and h/ratio to the limit.

    Assumes the leading error term scales like h^order; the caller supplies
    the order because it depends on the scheme and on whether the mobility
    is constant.
    """
    if ratio <= 1:
        raise ValueError("ratio must exceed 1")
    w = ratio ** order
    value = (w * fine.value - coarse.value) / (w - 1.0)
    var = (w * w * fine.std_error ** 2 + coarse.std_error ** 2) / (w - 1.0) ** 2
    return EnsembleEstimate(value=float(value), std_error=float(math.sqrt(var)),
                            n_samples=min(coarse.n_samples, fine.n_samples))


def _series_table(times, values, std_errors=None) -> dict:
    """Map rounded times to (value, std_error) for grid matching."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    ses = (np.zeros_like(values) if std_errors is None
           else np.asarray(std_errors, dtype=float))
    return {round(float(t), 9): (float(v), float(s))
            for t, v, s in zip(times, values, ses)}


def _sup_series_error(times, means, ses, table: dict) -> tuple:
    """Worst relative deviation from a reference curve over shared times.

    Returns (error, std_error_at_argmax).  The comparison skips t = 0,
    where every scheme starts from the same state.
    """
    best = (0.0, 0.0)
    matched = 0
    for t, m, s in zip(times, means, ses):
        key = round(float(t), 9)
        if key == 0.0 or key not in table:
            continue
        rv, rs = table[key]
        matched += 1
        denom = max(abs(rv), 1e-12)
        err = abs(m - rv) / denom
        if err >= best[0]:
            se = math.sqrt((0.0 if math.isnan(s) else s) ** 2 + rs ** 2) / denom
            best = (err, se)
    if matched < 2:
        raise ValueError("series comparison grids share fewer than two times")
    return best


def weak_error_study(kind: str, model: Model, x0, t_final: float,
                     observable: str, h_values, n_traj: int, seed: int,
                     make_config, reference, workers: int = 1,
                     resample_budget: int = 10,
                     functional: str = "terminal") -> ConvergenceStudy:
    """Measure an observable's error at several step sizes and fit the rate.

    make_config maps a step size to an integrator configuration.  With
    functional="terminal" the error is |terminal estimate - reference| and
    reference is ("value", v), ("fine", h_ref, n_traj_ref), or
    ("richardson", order): a known limit, a dedicated fine-step run, or
    extrapolation from the two finest entries of h_values.

    With functional="sup_series" the error is the worst relative deviation
    of the observable's mean time series from a reference curve over the
    shared reporting times; reference is ("series", times, values) for a
    precomputed noise-free curve, ("fine", h_ref, n_traj_ref) for a
    fine-step ensemble series, or ("richardson", order) for pointwise
    extrapolation from the two finest step sizes.  Step sizes must be
    nested so the comparison grids overlap.

    A study whose errors drown in statistical noise is flagged unreliable
    rather than trusted.
    """
    hs = tuple(float(h) for h in h_values)
    if any(hs[i] <= hs[i + 1] for i in range(len(hs) - 1)):
        raise ValueError("h values must be strictly decreasing")
    if functional not in ("terminal", "sup_series"):
        raise ValueError(f"unknown error functional {functional!r}")

    def make_task(h, n, run_seed):
        return EnsembleTask(
            kind=kind, config=make_config(h), model=model, x0=x0,
            n_steps=int(round(t_final / h)), n_traj=n, seed=run_seed,
            workers=workers, resample_budget=resample_budget)

    if functional == "terminal":
        def run_at(h, n, run_seed):
            result = run_endpoints(make_task(h, n, run_seed))
            return estimate_endpoint_observable(
                result.endpoints, observable, model)

        estimates = [run_at(h, n_traj, seed + k) for k, h in enumerate(hs)]

        mode = reference[0]
        if mode == "value":
            ref = EnsembleEstimate(float(reference[1]), 0.0, 2)
            ref_desc = f"fixed value {reference[1]}"
        elif mode == "fine":
            _, h_ref, n_ref = reference
            ref = run_at(float(h_ref), int(n_ref), seed + len(hs))
            ref_desc = f"fine run at h={h_ref}"
        elif mode == "richardson":
            order = float(reference[1])
            ratio = hs[-2] / hs[-1]
            ref = richardson_reference(
                estimates[-2], estimates[-1], ratio, order)
            ref_desc = f"richardson order {order} from h={hs[-2]},{hs[-1]}"
        else:
            raise ValueError(f"unknown reference mode {mode!r}")

        errors = tuple(abs(est.value - ref.value) for est in estimates)
        std_errors = tuple(
            math.sqrt(est.std_error ** 2 + ref.std_error ** 2)
            for est in estimates)
    else:
        series = [run_series(make_task(h, n_traj, seed + k), 1, observable)
                  for k, h in enumerate(hs)]

        mode = reference[0]
        if mode == "series":
            _, ref_times, ref_values = reference
            table = _series_table(ref_times, ref_values)
            ref_desc = "precomputed reference series"
        elif mode == "fine":
            _, h_ref, n_ref = reference
            fine = run_series(
                make_task(float(h_ref), int(n_ref), seed + len(hs)),
                1, observable)
            table = _series_table(fine.times, fine.mean, fine.std_error)
            ref_desc = f"fine series at h={h_ref}"
        elif mode == "richardson":
            order = float(reference[1])
            ratio = hs[-2] / hs[-1]
            w = ratio ** order
            fine_tab = _series_table(
                series[-1].times, series[-1].mean, series[-1].std_error)
            table = {}
            for t, cv, cs in zip(series[-2].times, series[-2].mean,
                                 series[-2].std_error):
                key = round(float(t), 9)
                if key not in fine_tab:
                    continue
                fv, fs = fine_tab[key]
                val = (w * fv - cv) / (w - 1.0)
                se = math.sqrt(w * w * fs ** 2 + cs ** 2) / (w - 1.0)
                table[key] = (val, se)
            ref_desc = f"richardson order {order} from h={hs[-2]},{hs[-1]}"
        else:
            raise ValueError(
                f"unknown reference mode {mode!r} for sup_series")

        pairs = [_sup_series_error(s.times, s.mean, s.std_error, table)
                 for s in series]
        errors = tuple(p[0] for p in pairs)
        std_errors = tuple(p[1] for p in pairs)

    slope = fit_loglog_slope(hs, errors)
    reliable = (
        math.isfinite(slope)
        and all(e > 2.0 * se for e, se in zip(errors, std_errors)))
    return ConvergenceStudy(
        h_values=hs, errors=errors, std_errors=std_errors, slope=slope,
        reference=ref_desc, reliable=reliable)
