"""Config-driven batch experiment runner.

Experiments are TOML files: a model, an integrator, and an experiment kind
(endpoints, series, density, fpt, study, trajectory, scan).  Each run
writes CSV outputs plus a summary.json into its output directory and
prints a one-line summary.  Outputs are bit-identical for a fixed
(config, seed) no matter how many workers are used.

Exit codes: 0 success, 1 malformed config or usage, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

from . import __version__, observables as obs
from .ensemble import (
    OBSERVABLES,
    EnsembleTask,
    deterministic_reference,
    run_endpoints,
    run_first_passage,
    run_positions,
    run_series,
)
from .errors import (
    BudgetExceededError,
    ConfigError,
    NotSpdError,
    OutOfDomainError,
    ZeroSeparationError,
)
from .fixman import FixmanConfig
from .linalg import cholesky, numeric_divergence, solve_lower
from .metropolis import IntegratorConfig, acceptance_batch, propose_batch
from .models import (
    MODEL_NAMES,
    RpyChainParams,
    TiltedWellParams,
    make_model,
    rpy_far_coefficients,
    rpy_near_coefficients,
)
from .stages import (
    DRIFT_SCHEME_NAMES,
    NOISE_SCHEME_NAMES,
    make_drift_scheme,
    make_noise_scheme,
    make_stage_fraction_policy,
    order_condition_residuals,
    scan_energy_grid,
    small_noise_exponent,
    staged_drift,
)

EXPERIMENT_KINDS = (
    "endpoints", "series", "density", "fpt", "study", "trajectory", "scan")


# ---------------------------------------------------------------------------
# config parsing and serialization

def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("config", f"no such file: {p}")
    try:
        with open(p, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("config", f"parse failure: {e}") from None


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise ConfigError("config", f"cannot serialize value of type {type(v).__name__}")


def dump_config(record: dict) -> str:
    """Serialize a config record back to TOML.

    Supports the schema the runner uses: nested tables of scalars and
    flat lists.  parse(dump(parse(f))) == parse(f) for every bundled file.
    """
    lines = []

    def emit(prefix, table):
        scalars = [(k, v) for k, v in table.items() if not isinstance(v, dict)]
        subs = [(k, v) for k, v in table.items() if isinstance(v, dict)]
        if prefix and (scalars or not subs):
            lines.append(f"[{prefix}]")
        for k, v in scalars:
            lines.append(f"{k} = {_format_value(v)}")
        if prefix and scalars:
            lines.append("")
        for k, v in subs:
            emit(f"{prefix}.{k}" if prefix else k, v)

    emit("", record)
    return "\n".join(lines).rstrip() + "\n"


def merge_full_overrides(record: dict) -> dict:
    """Apply the [full] table over the desk-scale keys; drops [full]."""
    out = json.loads(json.dumps(record))
    full = out.pop("full", None)
    if not full:
        return out

    def deep(dst, src):
        for k, v in src.items():
            if isinstance(v, dict) and isinstance(dst.get(k), dict):
                deep(dst[k], v)
            else:
                dst[k] = v

    deep(out, full)
    return out


def _table(record, name) -> dict:
    t = record.get(name, {})
    if not isinstance(t, dict):
        raise ConfigError(name, "must be a table")
    return t


def _need(table, tname, key, types, what):
    if key not in table:
        raise ConfigError(f"{tname}.{key}", f"missing; expected {what}")
    v = table[key]
    if not isinstance(v, types) or isinstance(v, bool) and bool not in (
            types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{tname}.{key}", f"expected {what}")
    return v


def _positive_number(table, tname, key, default=None):
    v = table.get(key, default)
    if v is None:
        raise ConfigError(f"{tname}.{key}", "missing; expected a positive number")
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
        raise ConfigError(f"{tname}.{key}", "must be positive")
    return float(v)


def build_model(record):
    table = _table(record, "model")
    name = table.get("name")
    if not isinstance(name, str):
        raise ConfigError("model.name", "missing; expected a model name")
    params = {k: v for k, v in table.items() if k not in ("name", "initial")}
    try:
        model = make_model(name, **params)
    except (ValueError, TypeError) as e:
        raise ConfigError("model", str(e)) from None
    x0 = table.get("initial")
    if x0 is None:
        x0 = model.default_initial()
    else:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (model.dim,):
            raise ConfigError(
                "model.initial", f"expected {model.dim} coordinates")
    return model, x0


def _build_scheme(record, section, builder, default):
    table = _table(record, section)
    name = table.get("scheme", default)
    coeffs = {k: v for k, v in table.items() if k != "scheme"}
    try:
        return builder(name, **coeffs)
    except (ValueError, TypeError) as e:
        raise ConfigError(section, str(e)) from None


def _build_policy(record):
    table = _table(record, "policy")
    try:
        return make_stage_fraction_policy(
            table.get("kind", "fixed"), table.get("value"))
    except (ValueError, TypeError) as e:
        raise ConfigError("policy", str(e)) from None


def h_values(record) -> list:
    table = _table(record, "integrator")
    h = table.get("h")
    hs = h if isinstance(h, list) else [h]
    if not hs or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0
            for v in hs):
        raise ConfigError("integrator.h", "must be positive")
    return [float(v) for v in hs]


def integrator_kind(record) -> str:
    kind = _table(record, "integrator").get("kind", "metropolis")
    if kind not in ("metropolis", "fixman"):
        raise ConfigError("integrator.kind", "expected metropolis or fixman")
    return kind


def build_config(record, h: float, beta: float):
    if integrator_kind(record) == "fixman":
        return FixmanConfig(h=h, beta=beta)
    try:
        return IntegratorConfig(
            h=h, beta=beta,
            drift=_build_scheme(record, "drift", make_drift_scheme, "ralston"),
            noise=_build_scheme(record, "noise", make_noise_scheme, "rk2"),
            policy=_build_policy(record))
    except ValueError as e:
        raise ConfigError("integrator", str(e)) from None


def steps_for(record, h: float) -> int:
    table = _table(record, "integrator")
    has_t = "t_final" in table
    has_n = "n_steps" in table
    if has_t == has_n:
        raise ConfigError(
            "integrator.t_final",
            "exactly one of t_final and n_steps must be given")
    if has_n:
        n = table["n_steps"]
        if isinstance(n, bool) or not isinstance(n, int) or n <= 0:
            raise ConfigError("integrator.n_steps", "must be a positive integer")
        return n
    t = _positive_number(table, "integrator", "t_final")
    n = int(round(t / h))
    if n < 1:
        raise ConfigError("integrator.t_final", f"shorter than one step of h={h}")
    return n


def _experiment_kind(record) -> str:
    kind = _table(record, "experiment").get("kind")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(
            "experiment.kind", f"expected one of {', '.join(EXPERIMENT_KINDS)}")
    return kind


def _observable_names(record) -> list:
    names = _table(record, "observables").get("names", [])
    if not isinstance(names, list) or any(not isinstance(n, str) for n in names):
        raise ConfigError("observables.names", "expected a list of names")
    for n in names:
        if n not in OBSERVABLES:
            raise ConfigError(
                "observables.names",
                f"unknown observable {n!r}; known: {', '.join(sorted(OBSERVABLES))}")
    return names


def _seed(record, override) -> int:
    if override is not None:
        return int(override)
    s = _table(record, "integrator").get("seed", 0)
    if isinstance(s, bool) or not isinstance(s, int) or s < 0:
        raise ConfigError("integrator.seed", "must be a nonnegative integer")
    return s


def _betas(record) -> list:
    b = _table(record, "integrator").get("beta")
    bs = b if isinstance(b, list) else [b]
    if not bs or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0
            for v in bs):
        raise ConfigError("integrator.beta", "must be positive")
    return [float(v) for v in bs]


def _single(values, field):
    if len(values) != 1:
        raise ConfigError(field, "expected a single value for this experiment kind")
    return values[0]


def _n_traj(record) -> int:
    n = _table(record, "integrator").get("n_traj", 1)
    if isinstance(n, bool) or not isinstance(n, int) or n <= 0:
        raise ConfigError("integrator.n_traj", "must be a positive integer")
    return n


def _stride(record) -> int:
    s = _table(record, "integrator").get("stride", 1)
    if isinstance(s, bool) or not isinstance(s, int) or s <= 0:
        raise ConfigError("integrator.stride", "must be a positive integer")
    return s


def _tag(value: float) -> str:
    return f"{value:g}".replace("+", "")


# ---------------------------------------------------------------------------
# output helpers

def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return v


def _stats_summary(stats) -> dict:
    return {
        "n_traj": stats.n_traj,
        "steps_total": stats.steps_total,
        "mean_acceptance": stats.mean_alpha,
        "accept_rate": stats.accept_rate,
        "exploded_attempts": stats.exploded_attempts,
        "unfilled": stats.unfilled,
    }


# ---------------------------------------------------------------------------
# experiment kinds

def _base_task(record, kind, cfg, model, x0, n_steps, seed, workers):
    return EnsembleTask(
        kind=kind, config=cfg, model=model, x0=x0, n_steps=n_steps,
        n_traj=_n_traj(record), seed=seed, workers=workers)


def _run_endpoints_kind(record, out_dir, seed, workers) -> dict:
    model, x0 = build_model(record)
    kind = integrator_kind(record)
    h = _single(h_values(record), "integrator.h")
    beta = _single(_betas(record), "integrator.beta")
    cfg = build_config(record, h, beta)
    task = _base_task(record, kind, cfg, model, x0, steps_for(record, h),
                      seed, workers)
    result = run_endpoints(task)
    rows = []
    estimates = {}
    for name in _observable_names(record):
        est = obs.estimate_endpoint_observable(result.endpoints, name, model)
        estimates[name] = {"value": est.value, "std_error": est.std_error}
        rows.append((name, est.value, est.std_error, est.n_samples))
    if rows:
        _write_csv(out_dir / "estimates.csv",
                   ("observable", "value", "stderr", "n_samples"), rows)
    return {"estimates": estimates, "stats": _stats_summary(result.stats),
            "outputs": ["estimates.csv"] if rows else []}


def _run_series_kind(record, out_dir, seed, workers) -> dict:
    model, x0 = build_model(record)
    kind = integrator_kind(record)
    h = _single(h_values(record), "integrator.h")
    stride = _stride(record)
    names = _observable_names(record)
    if not names:
        raise ConfigError("observables.names", "series needs an observable")
    betas = _betas(record)
    outputs = []
    stats_all = {}
    for beta in betas:
        cfg = build_config(record, h, beta)
        task = _base_task(record, kind, cfg, model, x0, steps_for(record, h),
                          seed, workers)
        for name in names:
            series = run_series(task, stride, name)
            fname = f"series_{name}.csv" if len(betas) == 1 else (
                f"series_{name}_beta{_tag(beta)}.csv")
            _write_csv(out_dir / fname, ("t", "mean", "stderr"),
                       zip(series.times, series.mean, series.std_error))
            outputs.append(fname)
            stats_all[f"beta{_tag(beta)}"] = _stats_summary(series.stats)
    return {"stats": stats_all if len(betas) > 1 else next(iter(stats_all.values())),
            "outputs": outputs}


def _run_density_kind(record, out_dir, seed, workers) -> dict:
    model, x0 = build_model(record)
    if model.dim != 1:
        raise ConfigError("model.name", "density experiments need a 1D model")
    kind = integrator_kind(record)
    h = _single(h_values(record), "integrator.h")
    beta = _single(_betas(record), "integrator.beta")
    table = _table(record, "density")
    n_bins = table.get("bins", 60)
    if isinstance(n_bins, bool) or not isinstance(n_bins, int) or n_bins < 2:
        raise ConfigError("density.bins", "must be an integer >= 2")
    burn = table.get("burn_in", 0.1)
    if isinstance(burn, bool) or not isinstance(burn, (int, float)) \
            or not 0 <= burn < 1:
        raise ConfigError("density.burn_in", "must be in [0, 1)")
    wrapped = bool(table.get("wrapped", False))

    cfg = build_config(record, h, beta)
    n_steps = steps_for(record, h)
    task = _base_task(record, kind, cfg, model, x0, n_steps, seed, workers)
    result = run_positions(task, _stride(record))
    n_slots = result.states.shape[0]
    start = int(np.ceil(burn * n_slots))
    samples = result.states[start:, :, 0].ravel()

    summary = {"stats": _stats_summary(result.stats),
               "n_samples": int(samples.size)}
    outputs = ["density.csv"]
    if wrapped:
        centers, density = obs.wrapped_density(samples, n_bins)
        if model.name == "tilted_well":
            _, ref = obs.wrapped_gibbs_reference(model.params, beta, n_bins)
            _write_csv(out_dir / "reference.csv", ("bin_center", "density"),
                       zip(centers, ref))
            outputs.append("reference.csv")
            width = centers[1] - centers[0]
            summary["l1_distance"] = float(np.abs(density - ref).sum() * width)
    else:
        lo = table.get("lo", float(samples.min()))
        hi = table.get("hi", float(samples.max()))
        if not lo < hi:
            raise ConfigError("density.lo", "needs lo < hi")
        counts, edges = np.histogram(samples, bins=n_bins, range=(lo, hi))
        width = (hi - lo) / n_bins
        kept = counts.sum()
        density = counts / (kept * width) if kept else np.zeros(n_bins)
        centers = 0.5 * (edges[:-1] + edges[1:])
        if model.name == "heavy_tail" and model.params.eta > 1:
            cdf = obs.heavy_tail_cdf(model.params.eta, edges)
            ref = np.diff(cdf) / width
            _write_csv(out_dir / "reference.csv", ("bin_center", "density"),
                       zip(centers, ref))
            outputs.append("reference.csv")
            summary["sup_cdf_distance"] = obs.empirical_sup_distance(
                samples, lambda y: obs.heavy_tail_cdf(model.params.eta, y))
    _write_csv(out_dir / "density.csv", ("bin_center", "density"),
               zip(centers, density))
    summary["outputs"] = outputs
    return summary


def _run_fpt_kind(record, out_dir, seed, workers) -> dict:
    model, x0 = build_model(record)
    if model.dim != 1:
        raise ConfigError("model.name", "passage experiments need a 1D model")
    kind = integrator_kind(record)
    beta = _single(_betas(record), "integrator.beta")
    offset = _table(record, "fpt").get("target_offset", 3.0)
    if isinstance(offset, bool) or not isinstance(offset, (int, float)) \
            or offset <= 0:
        raise ConfigError("fpt.target_offset", "must be positive")
    target = float(x0[0]) + float(offset)

    oracle = None
    if model.name == "tilted_well":
        oracle = obs.mfpt_oracle(model.params, beta, float(x0[0]))

    outputs = []
    per_h = {}
    rows = []
    stats_last = None
    for k, h in enumerate(h_values(record)):
        cfg = build_config(record, h, beta)
        task = _base_task(record, kind, cfg, model, x0, steps_for(record, h),
                          seed + k, workers)
        result = run_first_passage(task, target)
        taus = obs.passage_times(result, h)
        fname = f"tau_h{_tag(h)}.csv"
        _write_csv(out_dir / fname, ("tau",), ((t,) for t in taus))
        outputs.append(fname)
        est = obs.estimate(taus)
        entry = {"mfpt": est.value, "std_error": est.std_error,
                 "n_samples": est.n_samples}
        if oracle is not None:
            entry["relative_error"] = abs(est.value - oracle) / oracle
            rows.append((h, abs(est.value - oracle), est.std_error))
        per_h[f"h{_tag(h)}"] = entry
        stats_last = result.stats
    if rows:
        _write_csv(out_dir / "study.csv", ("h", "error", "stderr"), rows)
        outputs.append("study.csv")
    summary = {"per_h": per_h, "target": target,
               "stats": _stats_summary(stats_last), "outputs": outputs}
    if oracle is not None:
        summary["oracle"] = oracle
    return summary


def _run_study_kind(record, out_dir, seed, workers) -> dict:
    model, x0 = build_model(record)
    kind = integrator_kind(record)
    beta = _single(_betas(record), "integrator.beta")
    hs = h_values(record)
    hs_sorted = sorted(set(hs), reverse=True)
    if len(hs_sorted) != len(hs):
        raise ConfigError("integrator.h", "step sizes must be distinct")
    table = _table(record, "study")
    names = _observable_names(record)
    observable = table.get("observable", names[0] if names else None)
    if observable not in OBSERVABLES:
        raise ConfigError("study.observable", "unknown observable")
    t_table = _table(record, "integrator")
    if "t_final" not in t_table:
        raise ConfigError("integrator.t_final", "studies need a final time")
    t_final = _positive_number(t_table, "integrator", "t_final")

    functional = table.get("functional", "terminal")
    if functional not in ("terminal", "sup_series"):
        raise ConfigError("study.functional",
                          "expected terminal or sup_series")

    ref_kind = table.get("reference")
    if ref_kind == "value":
        if functional == "sup_series":
            raise ConfigError(
                "study.reference",
                "a fixed value cannot reference a series comparison")
        reference = ("value", float(_need(table, "study", "reference_value",
                                          (int, float), "a number")))
    elif ref_kind == "fine":
        reference = ("fine",
                     _positive_number(table, "study", "reference_h"),
                     int(table.get("reference_n_traj", _n_traj(record))))
    elif ref_kind == "richardson":
        reference = ("richardson",
                     _positive_number(table, "study", "richardson_order"))
    elif ref_kind == "deterministic":
        if kind != "metropolis":
            raise ConfigError(
                "study.reference", "deterministic reference needs metropolis")
        h_ref = _positive_number(table, "study", "reference_h")
        drift = _build_scheme(record, "drift", make_drift_scheme, "ralston")
        if functional == "sup_series":
            h_min = hs_sorted[-1]
            stride = int(round(h_min / h_ref))
            if stride < 1 or abs(stride * h_ref - h_min) > 1e-9 * h_min:
                raise ConfigError(
                    "study.reference_h",
                    "must divide the smallest step size evenly")
            times, states = deterministic_reference(
                drift, model, x0, h_ref, t_final, stride=stride)
            values = OBSERVABLES[observable](states, model)
            reference = ("series", times, values)
        else:
            _, states = deterministic_reference(
                drift, model, x0, h_ref, t_final)
            value = float(OBSERVABLES[observable](states[-1][None, :],
                                                  model)[0])
            reference = ("value", value)
    else:
        raise ConfigError(
            "study.reference",
            "expected value, fine, richardson, or deterministic")

    try:
        study = obs.weak_error_study(
            kind=kind, model=model, x0=x0, t_final=t_final,
            observable=observable, h_values=hs_sorted, n_traj=_n_traj(record),
            seed=seed, make_config=lambda h: build_config(record, h, beta),
            reference=reference, workers=workers, functional=functional)
    except ValueError as exc:
        raise ConfigError("study", str(exc)) from exc
    _write_csv(out_dir / "study.csv", ("h", "error", "stderr"),
               zip(study.h_values, study.errors, study.std_errors))
    return {
        "slope": study.slope,
        "reliable": study.reliable,
        "reference": study.reference,
        "errors": dict(zip((f"h{_tag(h)}" for h in study.h_values),
                           study.errors)),
        "outputs": ["study.csv"],
    }


def _run_trajectory_kind(record, out_dir, seed, workers) -> dict:
    model, x0 = build_model(record)
    kind = integrator_kind(record)
    h = _single(h_values(record), "integrator.h")
    beta = _single(_betas(record), "integrator.beta")
    cfg = build_config(record, h, beta)
    task = _base_task(record, kind, cfg, model, x0, steps_for(record, h),
                      seed, workers)
    result = run_positions(task, _stride(record))
    coord_names = [f"x{i + 1}" for i in range(model.dim)]
    outputs = []
    for lane in range(result.states.shape[1]):
        fname = "trajectory.csv" if lane == 0 else f"trajectory_{lane}.csv"
        _write_csv(out_dir / fname, ["t"] + coord_names,
                   (np.concatenate(([t], state)) for t, state in
                    zip(result.times, result.states[:, lane])))
        outputs.append(fname)
    finals = [list(map(float, s)) for s in result.states[-1]]
    summary = {"final_states": finals,
               "stats": _stats_summary(result.stats), "outputs": outputs}
    minima = getattr(model, "minima", None)
    if callable(minima):
        pts = np.asarray(minima())
        summary["distance_to_minima"] = [
            float(np.linalg.norm(pts - np.asarray(s), axis=1).min())
            for s in finals]
    return summary


def _run_scan_kind(record, out_dir, seed, workers) -> dict:
    model, _ = build_model(record)
    if model.dim > 2:
        raise ConfigError("model.name", "scans need a 1D or 2D model")
    table = _table(record, "scan")
    h = _positive_number(table, "scan", "h")
    axis1 = table.get("x1")
    axis2 = table.get("x2")
    res = table.get("resolution", 101)

    def check_range(name, r):
        if (not isinstance(r, list) or len(r) != 2
                or any(isinstance(v, bool) or not isinstance(v, (int, float))
                       for v in r)):
            raise ConfigError(f"scan.{name}", "expected [lo, hi]")
        if not r[0] < r[1]:
            raise ConfigError(f"scan.{name}", "needs lo < hi")
        return (float(r[0]), float(r[1]))

    region = (check_range("x1", axis1), check_range("x2", axis2))
    if isinstance(res, int) and not isinstance(res, bool):
        resolution = (res, res)
    elif (isinstance(res, list) and len(res) == 2
          and all(isinstance(v, int) and not isinstance(v, bool) for v in res)):
        resolution = tuple(res)
    else:
        raise ConfigError("scan.resolution", "expected an integer or [n1, n2]")
    if any(r < 2 for r in resolution):
        raise ConfigError("scan.resolution", "needs at least 2 points per axis")

    drift = _build_scheme(record, "drift", make_drift_scheme, "ralston")
    noise = _build_scheme(record, "noise", make_noise_scheme, "rk2")
    ax1, ax2, grid = scan_energy_grid(drift, noise, model, region, resolution, h)
    rows = ((a, b, grid[i, j])
            for i, a in enumerate(ax1) for j, b in enumerate(ax2))
    _write_csv(out_dir / "grid.csv", ("x1", "x2", "E"), rows)
    finite = np.isfinite(grid)
    positive = float(np.count_nonzero(finite & (grid > 0)) / grid.size)
    return {
        "positive_fraction": positive,
        "min_E": float(np.nanmin(np.where(finite, grid, np.nan))),
        "axes": ["x", "stage_fraction"] if model.dim == 1 else ["x1", "x2"],
        "h": h,
        "outputs": ["grid.csv"],
    }


_KIND_HANDLERS = {
    "endpoints": _run_endpoints_kind,
    "series": _run_series_kind,
    "density": _run_density_kind,
    "fpt": _run_fpt_kind,
    "study": _run_study_kind,
    "trajectory": _run_trajectory_kind,
    "scan": _run_scan_kind,
}


def execute(record: dict, out_base, seed_override=None, workers=1,
            full=False, name=None) -> dict:
    """Run one experiment record; returns the summary written to disk."""
    record = merge_full_overrides(record) if full else {
        k: v for k, v in record.items() if k != "full"}
    kind = _experiment_kind(record)
    exp_name = name or _table(record, "experiment").get("name", "experiment")
    seed = _seed(record, seed_override)

    out_dir = Path(out_base) if out_base else Path(
        _table(record, "output").get("dir", exp_name))
    out_dir.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    body = _KIND_HANDLERS[kind](record, out_dir, seed, workers)
    wall = time.perf_counter() - start

    summary = {"experiment": exp_name, "kind": kind, "seed": seed,
               "wall_time_s": wall, **body}
    with open(out_dir / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")

    stats = body.get("stats", {})
    if not (isinstance(stats, dict) and "mean_acceptance" in stats):
        accept = "acceptance=n/a"
    elif _table(record, "integrator").get("kind", "metropolis") == "fixman":
        accept = (f"exploded_attempts={stats['exploded_attempts']} "
                  f"unfilled={stats['unfilled']}")
    else:
        accept = f"acceptance={stats['mean_acceptance']:.4f}"
    print(f"{exp_name}: kind={kind} {accept} wall={wall:.1f}s -> {out_dir}")
    return summary


# ---------------------------------------------------------------------------
# verify: exact identity suite

def _check_verlet() -> tuple:
    """Proposal with the one-stage drift is one leapfrog step.

    With constant unit mobility, step length sqrt(2h), and initial
    velocity equal to the noise vector, the position half-step lands on
    the proposal's intermediate point, the full proposal equals the
    leapfrog endpoint, and the velocity output equals the momentum
    variable of the acceptance test.
    """
    model = make_model("gaussian_well2d", k1=1.0, k2=4.0)
    cfg = IntegratorConfig(
        h=0.25, beta=1.0, drift=make_drift_scheme("euler"),
        noise=make_noise_scheme("frozen"))
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        x0 = rng.normal(size=(1, 2))
        xi = rng.normal(size=(1, 2))
        x_tilde, x_star, factor0, b0xi, g = propose_batch(cfg, model, x0, xi)
        _, eta = acceptance_batch(cfg, model, x0, xi, x_star, factor0, b0xi, g)
        dt = np.sqrt(2.0 * cfg.h)
        half = x0 + 0.5 * dt * xi
        v1 = xi - dt * model.grad(half)
        x1 = half + 0.5 * dt * v1
        worst = max(worst,
                    float(np.abs(x_star - x1).max()),
                    float(np.abs(x_tilde - half).max()),
                    float(np.abs(eta - v1).max()))
    return worst <= 5e-14, f"max deviation {worst:.2e}"


def _check_reverse() -> tuple:
    """Reversing a proposal reconstructs the start point and negated noise."""
    model = make_model("fene_chain")
    cfg = IntegratorConfig(
        h=0.01, beta=10.0, drift=make_drift_scheme("ralston"),
        noise=make_noise_scheme("rk2"))
    rng = np.random.default_rng(7)
    base = model.equilibrium_positions()
    worst = 0.0
    recip = 0.0
    for _ in range(20):
        x0 = base[None, :] + 0.01 * rng.normal(size=(1, model.dim))
        xi = rng.normal(size=(1, model.dim)) * cfg.noise_scale
        _, x_star, factor0, b0xi, g = propose_batch(cfg, model, x0, xi)
        alpha, eta = acceptance_batch(cfg, model, x0, xi, x_star, factor0,
                                      b0xi, g)
        _, x_back, factor_star, bseta, g_rev = propose_batch(
            cfg, model, x_star, -eta)
        alpha_rev, eta_rev = acceptance_batch(
            cfg, model, x_star, -eta, x_back, factor_star, bseta, g_rev)
        worst = max(worst, float(np.abs(x_back - x0).max()),
                    float(np.abs(eta_rev + xi).max()))

        def log_ratio(fa, fb, e, z, ua, ub):
            return float((fa.log_det[0] - fb.log_det[0])
                         - cfg.beta * (0.5 * ((e * e).sum() - (z * z).sum())
                                       + (ub - ua)))
        lr_f = log_ratio(factor0, factor_star, eta, xi,
                         model.energy(x0)[0], model.energy(x_star)[0])
        lr_b = log_ratio(factor_star, factor0, eta_rev, -eta,
                         model.energy(x_star)[0], model.energy(x_back)[0])
        recip = max(recip, abs(lr_f + lr_b))
    ok = worst <= 1e-10 and recip <= 1e-10
    return ok, f"reconstruction {worst:.2e}, reciprocity {recip:.2e}"


def _check_order_conditions(perturb_rk2=False) -> tuple:
    two = make_drift_scheme("ralston")
    if perturb_rk2:
        two = make_drift_scheme("ralston", b2=float(two.b[1]) + 1e-3)
    three = make_drift_scheme("kutta")
    res2 = order_condition_residuals(two)
    res3 = order_condition_residuals(three)
    ok = all(r == 0 for r in res2) and all(r == 0 for r in res3)
    return ok, f"residuals {[str(r) for r in res2 + res3]}"


def _check_energy_shift() -> tuple:
    model = make_model("quadratic1d")
    cfg = IntegratorConfig(
        h=0.125, beta=1.0, drift=make_drift_scheme("ralston"),
        noise=make_noise_scheme("rk2"))
    e = small_noise_exponent(cfg.drift, cfg.noise, model,
                             np.array([[1.0]]), cfg.h)[0]
    target = -15.0 / 32768.0
    worst = abs(e - target)
    # closed form for quadratic energy with unit mobility:
    # E = -(h^3/4) |A M DU|^2 (1 - (h/2) a) with A = a = k
    rng = np.random.default_rng(3)
    for _ in range(40):
        x = rng.uniform(-2, 2)
        h = rng.uniform(0.01, 0.5)
        e = small_noise_exponent(cfg.drift, cfg.noise, model,
                                 np.array([[x]]), h)[0]
        closed = -(h ** 3 / 4.0) * x * x * (1.0 - h / 2.0)
        worst = max(worst, abs(e - closed))
    return worst <= 1e-12, f"max deviation {worst:.2e}"


def _check_rpy() -> tuple:
    params = RpyChainParams()
    model = make_model("dna_chain")
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        pos = _random_bead_positions(rng, params)
        x = pos.ravel()[None, :]
        m = model.mobility(x)[0]
        try:
            cholesky(m)
        except NotSpdError:
            return False, "mobility not SPD"
        div = numeric_divergence(lambda y: model.mobility(y[None, :])[0],
                                 x[0])
        scale = float(np.linalg.norm(m))
        worst = max(worst, float(np.linalg.norm(div)) / scale)
    c1f, c2f = rpy_far_coefficients(np.array([2 * params.bead_radius]),
                                    params.bead_radius)
    c1n, c2n = rpy_near_coefficients(np.array([2 * params.bead_radius]),
                                     params.bead_radius)
    branch = (c1f[0] == 7 / 16 and c1n[0] == 7 / 16
              and c2f[0] == 3 / 16 and c2n[0] == 3 / 16)
    return worst <= 1e-6 and branch, (
        f"relative divergence {worst:.2e}, branch continuity {branch}")


def _random_bead_positions(rng, params) -> np.ndarray:
    n = params.n_beads
    min_sep = 2.0 * params.bead_radius * 1.05
    while True:
        pos = rng.uniform(0.0, 1.2, size=(n, 3))
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff * diff).sum(-1))
        iu = np.triu_indices(n, 1)
        if dist[iu].min() > min_sep:
            return pos


def run_verify(perturb_rk2=False) -> list:
    checks = [
        ("verlet_equivalence", _check_verlet),
        ("reverse_move", _check_reverse),
        ("order_conditions",
         lambda: _check_order_conditions(perturb_rk2=perturb_rk2)),
        ("energy_shift_closed_form", _check_energy_shift),
        ("rpy_divergence_free", _check_rpy),
    ]
    results = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as e:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(e).__name__}: {e}"
        results.append((name, ok, detail))
    return results


# ---------------------------------------------------------------------------
# entry points

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _cmd_run(args) -> int:
    record = load_config(args.config)
    execute(record, args.out, seed_override=args.seed,
            workers=_resolve_workers(args.workers), full=args.full,
            name=Path(args.config).stem)
    return 0


def _cmd_scan(args) -> int:
    record = load_config(args.config)
    record.setdefault("experiment", {})["kind"] = "scan"
    execute(record, args.out, seed_override=args.seed,
            workers=1, full=args.full, name=Path(args.config).stem)
    return 0


def _cmd_verify(args) -> int:
    results = run_verify(perturb_rk2=args.perturb_rk2)
    failed = 0
    for name, ok, detail in results:
        print(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}")
        failed += 0 if ok else 1
    print(f"{len(results) - failed}/{len(results)} identity checks passed")
    return 2 if failed else 0


def _cmd_list_models(args) -> int:
    for name in MODEL_NAMES:
        model = make_model(name)
        mobility = "constant" if model.has_constant_mobility else "varying"
        print(f"{name}: dim {model.dim}, {mobility} mobility")
    return 0


def _cmd_list_schemes(args) -> int:
    print("drift schemes: " + ", ".join(DRIFT_SCHEME_NAMES))
    print("noise schemes: " + ", ".join(NOISE_SCHEME_NAMES))
    print("stage fraction policies: fixed, patched, optimized")
    return 0


def _resolve_workers(flag) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("METRODIFF_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("METRODIFF_WORKERS", "must be an integer") from None
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metrodiff",
                     description="batch experiments for staged "
                                 "Metropolis-adjusted diffusion integrators")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a config-driven experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--full", action="store_true",
                     help="apply the [full] overrides (full-scale budgets)")
    run.add_argument("--out", default=None)
    run.set_defaults(func=_cmd_run)

    scan = sub.add_parser("scan", help="tabulate the small-noise energy shift")
    scan.add_argument("--config", required=True)
    scan.add_argument("--seed", type=int, default=None)
    scan.add_argument("--full", action="store_true")
    scan.add_argument("--out", default=None)
    scan.set_defaults(func=_cmd_scan)

    verify = sub.add_parser("verify", help="run the exact identity suite")
    verify.add_argument("--perturb-rk2", action="store_true",
                        help="debug: break a stage weight to see a failure")
    verify.set_defaults(func=_cmd_verify)

    lm = sub.add_parser("list-models", help="show the model catalog")
    lm.set_defaults(func=_cmd_list_models)

    ls = sub.add_parser("list-schemes", help="show schemes and policies")
    ls.set_defaults(func=_cmd_list_schemes)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        return int(e.code or 0)
    except ConfigError as e:
        print(f"config error at {e.key}: {e.message}", file=sys.stderr)
        return 1
    except (NotSpdError, OutOfDomainError, ZeroSeparationError,
            BudgetExceededError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
