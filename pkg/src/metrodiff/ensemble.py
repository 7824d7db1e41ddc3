"""Ensemble drivers: many independent trajectories, reproducibly.

Trajectories are grouped into fixed-size blocks.  Every trajectory (general
path) or lane block (compiled scalar path) owns a counter-based random
stream keyed by the master seed plus a structured spawn key, so results are
bit-identical for any worker count: workers only decide which process runs
which block, never what noise a block sees.  Partial results are merged in
block order.

Spawn keys live in two disjoint spaces:

  (0, trajectory_index, attempt)   general path, one stream per trajectory
  (1, block_index, attempt)        scalar path, one stream per lane block

``attempt`` is 0 except when a predictor-corrector lane explodes and is
rerun; each rerun gets a fresh stream so retries never recycle noise.
Within a chunk the draw order is fixed: normals first, then (for the
accept-reject integrator) uniforms.

The predictor-corrector integrator has no acceptance test, so an exploded
trajectory yields nothing; drivers rerun failed lanes up to
``resample_budget`` attempts total and report survivors-only statistics
plus the exploded and unfilled counts.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from . import _scalar1d
from .errors import BudgetExceededError
from .fixman import FixmanConfig, fixman_step_batch
from .metropolis import IntegratorConfig, step_batch
from .model_api import Model

__all__ = [
    "TRAJ_BLOCK",
    "OBSERVABLES",
    "EnsembleTask",
    "EnsembleStats",
    "EndpointsResult",
    "SeriesResult",
    "PositionsResult",
    "PassageResult",
    "trajectory_stream",
    "block_stream",
    "run_endpoints",
    "run_series",
    "run_positions",
    "run_first_passage",
    "deterministic_reference",
]

TRAJ_BLOCK = 256
GENERAL_STEP_CHUNK = 256
SCALAR_STEP_CHUNK = 4096


# ---------------------------------------------------------------------------
# observables applied to state batches inside workers (referenced by name so
# tasks stay picklable)

def observable_mean_coord(x: np.ndarray, model: Model) -> np.ndarray:
    return x.mean(axis=-1)


def observable_first_coord(x: np.ndarray, model: Model) -> np.ndarray:
    return x[..., 0]


def observable_msd(x: np.ndarray, model: Model) -> np.ndarray:
    """Squared distance from the origin."""
    return (x * x).sum(axis=-1)


def observable_energy(x: np.ndarray, model: Model) -> np.ndarray:
    return model.energy(x)


def observable_gyration_sq(x: np.ndarray, model: Model) -> np.ndarray:
    """Squared radius of gyration of a chain of 3D beads."""
    pos = x.reshape(x.shape[:-1] + (-1, 3))
    centered = pos - pos.mean(axis=-2, keepdims=True)
    return (centered * centered).sum(axis=(-1, -2)) / pos.shape[-2]


OBSERVABLES = {
    "mean_coord": observable_mean_coord,
    "first_coord": observable_first_coord,
    "msd": observable_msd,
    "energy": observable_energy,
    "gyration_sq": observable_gyration_sq,
}


# ---------------------------------------------------------------------------
# task and result containers

@dataclass(frozen=True)
class EnsembleTask:
    """One batch experiment: an integrator, a model, and a sample budget."""

    kind: str                       # "metropolis" or "fixman"
    config: object                  # IntegratorConfig or FixmanConfig
    model: Model
    x0: np.ndarray
    n_steps: int
    n_traj: int
    seed: int
    workers: int = 1
    resample_budget: int = 10       # total attempts per exploding lane

    def __post_init__(self):
        if self.kind not in ("metropolis", "fixman"):
            raise ValueError(f"unknown integrator kind {self.kind!r}")
        expected = FixmanConfig if self.kind == "fixman" else IntegratorConfig
        if not isinstance(self.config, expected):
            raise TypeError(f"{self.kind} task needs a {expected.__name__}")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.model.dim,):
            raise ValueError(
                f"x0 has shape {x0.shape}, model dimension is {self.model.dim}")
        object.__setattr__(self, "x0", x0)
        if self.n_steps <= 0 or self.n_traj <= 0:
            raise ValueError("n_steps and n_traj must be positive")
        if self.resample_budget < 1:
            raise ValueError("resample_budget must be at least 1")


@dataclass
class EnsembleStats:
    """Pooled counters over every step actually taken."""

    n_traj: int = 0                 # trajectories that produced a result
    steps_total: int = 0
    alpha_sum: float = 0.0
    accepted_total: int = 0
    exploded_attempts: int = 0      # predictor-corrector lanes lost, any round
    unfilled: int = 0               # slots still empty after the retry budget

    @property
    def mean_alpha(self) -> float:
        return self.alpha_sum / self.steps_total if self.steps_total else 0.0

    @property
    def accept_rate(self) -> float:
        return self.accepted_total / self.steps_total if self.steps_total else 0.0

    def absorb(self, other: "EnsembleStats") -> None:
        self.n_traj += other.n_traj
        self.steps_total += other.steps_total
        self.alpha_sum += other.alpha_sum
        self.accepted_total += other.accepted_total
        self.exploded_attempts += other.exploded_attempts
        self.unfilled += other.unfilled


@dataclass
class EndpointsResult:
    endpoints: np.ndarray           # (n_filled, dim) final states, block order
    stats: EnsembleStats


@dataclass
class SeriesResult:
    times: np.ndarray               # (n_slots,) includes t = 0
    mean: np.ndarray
    std_error: np.ndarray
    n_traj: int
    stats: EnsembleStats


@dataclass
class PositionsResult:
    times: np.ndarray               # (n_slots,)
    states: np.ndarray              # (n_slots, n_filled, dim)
    stats: EnsembleStats


@dataclass
class PassageResult:
    crossing_steps: np.ndarray      # (n_filled,) 0-based step of first crossing
    stats: EnsembleStats


@dataclass(frozen=True)
class _Mode:
    stride: int = 0
    observable: str | None = None
    record_states: bool = False
    fpt_target: float | None = None


@dataclass
class _BlockPartial:
    endpoints: np.ndarray
    crossed: np.ndarray
    states: np.ndarray | None
    obs_sum: np.ndarray | None
    obs_sumsq: np.ndarray | None
    stats: EnsembleStats = field(default_factory=EnsembleStats)


# ---------------------------------------------------------------------------
# random streams

def trajectory_stream(seed: int, traj_index: int, attempt: int = 0) -> np.random.Generator:
    """Counter-based stream for one trajectory on the general path."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(0, traj_index, attempt))
    return np.random.Generator(np.random.Philox(ss))


def block_stream(seed: int, block_index: int, attempt: int = 0) -> np.random.Generator:
    """Counter-based stream for one lane block on the scalar path."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(1, block_index, attempt))
    return np.random.Generator(np.random.Philox(ss))


def _blocks(n_traj: int):
    out = []
    for i in range(0, n_traj, TRAJ_BLOCK):
        out.append((i // TRAJ_BLOCK, i, min(i + TRAJ_BLOCK, n_traj)))
    return out


def _slot_times(task: EnsembleTask, stride: int) -> np.ndarray:
    h = task.config.h
    n_rec = task.n_steps // stride
    return np.concatenate(([0.0], (np.arange(1, n_rec + 1) * stride) * h))


# ---------------------------------------------------------------------------
# general (batched numpy) block engine

def _general_block(task: EnsembleTask, lo: int, hi: int, mode: _Mode) -> _BlockPartial:
    model = task.model
    n = model.dim
    cfg = task.config
    scale = cfg.noise_scale
    is_fix = task.kind == "fixman"
    budget = task.resample_budget if is_fix else 1
    n_slots = (task.n_steps // mode.stride) + 1 if mode.stride else 0

    width = hi - lo
    out_x = np.full((width, n), np.nan)
    out_crossed = np.full(width, -1, dtype=np.int64)
    out_states = (
        np.full((n_slots, width, n), np.nan) if mode.record_states else None)
    obs_fn = OBSERVABLES[mode.observable] if mode.observable else None
    obs_sum = np.zeros(n_slots) if obs_fn else None
    obs_sumsq = np.zeros(n_slots) if obs_fn else None
    stats = EnsembleStats()
    filled = np.zeros(width, dtype=bool)

    pending = np.arange(width)
    for attempt in range(budget):
        if pending.size == 0:
            break
        bp = pending.size
        rngs = [trajectory_stream(task.seed, lo + int(j), attempt) for j in pending]
        x = np.tile(task.x0, (bp, 1))
        dead = np.zeros(bp, dtype=bool)
        crossed = np.full(bp, -1, dtype=np.int64)
        states = np.empty((n_slots, bp, n)) if mode.stride else None
        if mode.stride:
            states[0] = x
        done = 0
        while done < task.n_steps:
            take = min(GENERAL_STEP_CHUNK, task.n_steps - done)
            normals = np.empty((bp, take, n))
            uniforms = np.empty((bp, take)) if not is_fix else None
            for i, rng in enumerate(rngs):
                normals[i] = rng.standard_normal((take, n))
                if not is_fix:
                    uniforms[i] = rng.random(take)
            normals *= scale
            for t in range(take):
                step = done + t
                if is_fix:
                    live = ~dead
                    if mode.fpt_target is not None:
                        live &= crossed < 0
                    x_new, exploded = fixman_step_batch(cfg, model, x, normals[:, t])
                    x = np.where((live & ~exploded)[:, None], x_new, x)
                    dead |= live & exploded
                    stats.steps_total += int(np.count_nonzero(live & ~exploded))
                else:
                    active = crossed < 0 if mode.fpt_target is not None else None
                    x_new, alpha, accepted, _ = step_batch(
                        cfg, model, x, normals[:, t], uniforms[:, t])
                    if active is None:
                        x = x_new
                        stats.steps_total += bp
                        stats.alpha_sum += float(alpha.sum())
                        stats.accepted_total += int(np.count_nonzero(accepted))
                    else:
                        x = np.where(active[:, None], x_new, x)
                        stats.steps_total += int(np.count_nonzero(active))
                        stats.alpha_sum += float(alpha[active].sum())
                        stats.accepted_total += int(
                            np.count_nonzero(accepted & active))
                if mode.fpt_target is not None:
                    fresh = (crossed < 0) & ~dead & (x[:, 0] >= mode.fpt_target)
                    crossed[fresh] = step
                if mode.stride and ((step + 1) % mode.stride) == 0:
                    states[(step + 1) // mode.stride] = x
            done += take
            if is_fix and bool(dead.all()):
                break
            if (mode.fpt_target is not None and not is_fix
                    and bool((crossed >= 0).all())):
                break
        surv = ~dead
        idx = pending[surv]
        out_x[idx] = x[surv]
        out_crossed[idx] = crossed[surv]
        filled[idx] = True
        if mode.record_states:
            out_states[:, idx] = states[:, surv]
        if obs_fn is not None and idx.size:
            vals = obs_fn(states[:, surv].reshape(n_slots * idx.size, n), model)
            vals = vals.reshape(n_slots, idx.size)
            obs_sum += vals.sum(axis=1)
            obs_sumsq += (vals * vals).sum(axis=1)
        stats.exploded_attempts += int(np.count_nonzero(dead))
        pending = pending[dead]

    stats.n_traj = int(np.count_nonzero(filled))
    stats.unfilled = width - stats.n_traj
    keep = filled
    return _BlockPartial(
        endpoints=out_x[keep],
        crossed=out_crossed[keep],
        states=out_states[:, keep] if mode.record_states else None,
        obs_sum=obs_sum,
        obs_sumsq=obs_sumsq,
        stats=stats,
    )


# ---------------------------------------------------------------------------
# compiled scalar block engine

def _scalar_block(task: EnsembleTask, block_index: int, lo: int, hi: int,
                  mode: _Mode, spec) -> _BlockPartial:
    is_fix = task.kind == "fixman"
    cfg = task.config
    scale = cfg.noise_scale
    budget = task.resample_budget if is_fix else 1
    n_slots = (task.n_steps // mode.stride) + 1 if mode.stride else 0
    fpt_on = mode.fpt_target is not None
    target = mode.fpt_target if fpt_on else 0.0

    width = hi - lo
    out_x = np.full(width, np.nan)
    out_crossed = np.full(width, -1, dtype=np.int64)
    out_states = np.full((n_slots, width), np.nan) if mode.record_states else None
    obs_fn = OBSERVABLES[mode.observable] if mode.observable else None
    obs_sum = np.zeros(n_slots) if obs_fn else None
    obs_sumsq = np.zeros(n_slots) if obs_fn else None
    stats = EnsembleStats()
    filled = np.zeros(width, dtype=bool)

    pending = np.arange(width)
    for attempt in range(budget):
        if pending.size == 0:
            break
        bp = pending.size
        rng = block_stream(task.seed, block_index, attempt)
        x = np.full(bp, float(task.x0[0]))
        crossed = np.full(bp, -1, dtype=np.int64)
        dead = np.full(bp, -1, dtype=np.int64)
        alpha_sum = np.zeros(bp)
        acc_count = np.zeros(bp, dtype=np.int64)
        steps_taken = np.zeros(bp, dtype=np.int64)
        rec = np.empty((max(n_slots, 1), bp))
        rec_count = np.zeros(1, dtype=np.int64)
        if mode.stride:
            rec[0] = x
            rec_count[0] = 1
        done = 0
        while done < task.n_steps:
            take = min(SCALAR_STEP_CHUNK, task.n_steps - done)
            normals = rng.standard_normal((take, bp)) * scale
            if is_fix:
                _scalar1d.run_lanes_fixman(
                    spec[0], spec[1], spec[2], cfg.h,
                    x, normals, done,
                    mode.stride, rec, rec_count,
                    fpt_on, target, crossed,
                    dead, steps_taken)
            else:
                uniforms = rng.random((take, bp))
                _scalar1d.run_lanes(
                    spec[0], spec[1], spec[2],
                    cfg.h, cfg.beta,
                    spec[3], spec[4], spec[5], spec[6], spec[7],
                    spec[8], spec[9], spec[10],
                    x, normals, uniforms, done,
                    mode.stride, rec, rec_count,
                    fpt_on, target, crossed,
                    alpha_sum, acc_count, steps_taken)
            done += take
            if is_fix and bool((dead >= 0).all()):
                break
            if fpt_on and not is_fix and bool((crossed >= 0).all()):
                break
        surv = dead < 0 if is_fix else np.ones(bp, dtype=bool)
        idx = pending[surv]
        out_x[idx] = x[surv]
        out_crossed[idx] = crossed[surv]
        filled[idx] = True
        if mode.record_states:
            out_states[:, idx] = rec[:, surv]
        if obs_fn is not None and idx.size:
            vals = obs_fn(rec[:, surv].reshape(n_slots * idx.size, 1), task.model)
            vals = vals.reshape(n_slots, idx.size)
            obs_sum += vals.sum(axis=1)
            obs_sumsq += (vals * vals).sum(axis=1)
        stats.steps_total += int(steps_taken[surv].sum())
        stats.alpha_sum += float(alpha_sum[surv].sum())
        stats.accepted_total += int(acc_count[surv].sum())
        stats.exploded_attempts += int(np.count_nonzero(~surv))
        pending = pending[~surv]

    stats.n_traj = int(np.count_nonzero(filled))
    stats.unfilled = width - stats.n_traj
    keep = filled
    return _BlockPartial(
        endpoints=out_x[keep, None],
        crossed=out_crossed[keep],
        states=out_states[:, keep, None] if mode.record_states else None,
        obs_sum=obs_sum,
        obs_sumsq=obs_sumsq,
        stats=stats,
    )


# ---------------------------------------------------------------------------
# dispatch, worker pool, merging

def _scalar_spec(task: EnsembleTask):
    if task.kind == "metropolis":
        return _scalar1d.scalar_kernel_spec(task.model, task.config)
    return _scalar1d.scalar_model_id(task.model)


def _run_one_block(task: EnsembleTask, blk, mode: _Mode, spec) -> _BlockPartial:
    index, lo, hi = blk
    if spec is not None:
        return _scalar_block(task, index, lo, hi, mode, spec)
    return _general_block(task, lo, hi, mode)


def _slab_worker(args) -> list:
    task, mode, slab = args
    spec = _scalar_spec(task)
    return [_run_one_block(task, blk, mode, spec) for blk in slab]


def _run_blocks(task: EnsembleTask, mode: _Mode) -> list:
    blocks = _blocks(task.n_traj)
    workers = max(1, int(task.workers))
    if workers == 1 or len(blocks) == 1:
        spec = _scalar_spec(task)
        return [_run_one_block(task, blk, mode, spec) for blk in blocks]
    workers = min(workers, len(blocks))
    bounds = np.linspace(0, len(blocks), workers + 1).astype(int)
    slabs = [(task, mode, blocks[bounds[i]:bounds[i + 1]])
             for i in range(workers) if bounds[i] < bounds[i + 1]]
    with ProcessPoolExecutor(
            max_workers=len(slabs), mp_context=get_context("fork")) as pool:
        nested = list(pool.map(_slab_worker, slabs))
    return [part for slab in nested for part in slab]


def _merge_stats(partials) -> EnsembleStats:
    total = EnsembleStats()
    for part in partials:
        total.absorb(part.stats)
    return total


# ---------------------------------------------------------------------------
# public drivers

def run_endpoints(task: EnsembleTask) -> EndpointsResult:
    """Final states of every trajectory that completed."""
    partials = _run_blocks(task, _Mode())
    endpoints = np.concatenate([p.endpoints for p in partials], axis=0)
    return EndpointsResult(endpoints=endpoints, stats=_merge_stats(partials))


def run_series(task: EnsembleTask, stride: int, observable: str) -> SeriesResult:
    """Ensemble mean and standard error of an observable on a strided grid."""
    if stride <= 0:
        raise ValueError("stride must be positive")
    if observable not in OBSERVABLES:
        raise ValueError(f"unknown observable {observable!r}")
    partials = _run_blocks(task, _Mode(stride=stride, observable=observable))
    stats = _merge_stats(partials)
    n = stats.n_traj
    total = np.zeros_like(partials[0].obs_sum)
    total_sq = np.zeros_like(partials[0].obs_sumsq)
    for part in partials:
        total += part.obs_sum
        total_sq += part.obs_sumsq
    mean = total / n if n else np.full_like(total, np.nan)
    if n > 1:
        var = np.maximum(total_sq - n * mean * mean, 0.0) / (n - 1)
        std_error = np.sqrt(var / n)
    else:
        std_error = np.full_like(total, np.nan)
    return SeriesResult(
        times=_slot_times(task, stride),
        mean=mean,
        std_error=std_error,
        n_traj=n,
        stats=stats,
    )


def run_positions(task: EnsembleTask, stride: int) -> PositionsResult:
    """Full states on a strided grid, for densities and trajectory plots."""
    if stride <= 0:
        raise ValueError("stride must be positive")
    partials = _run_blocks(task, _Mode(stride=stride, record_states=True))
    states = np.concatenate([p.states for p in partials], axis=1)
    return PositionsResult(
        times=_slot_times(task, stride),
        states=states,
        stats=_merge_stats(partials),
    )


def run_first_passage(task: EnsembleTask, target: float) -> PassageResult:
    """First step at which each trajectory's first coordinate reaches target.

    Trajectories still short of the target after n_steps exhaust the step
    budget; that raises rather than returning censored samples.
    """
    partials = _run_blocks(task, _Mode(fpt_target=float(target)))
    crossed = np.concatenate([p.crossed for p in partials])
    missing = int(np.count_nonzero(crossed < 0))
    if missing:
        raise BudgetExceededError(
            f"{missing} of {crossed.size} trajectories never reached "
            f"{target} within {task.n_steps} steps")
    return PassageResult(crossing_steps=crossed, stats=_merge_stats(partials))


def deterministic_reference(drift, model: Model, x0, h: float, t_final: float,
                            stride: int = 1):
    """Iterate the noise-free update x += h G_h(x) and record a time grid.

    Used as the small-noise reference curve: with vanishing temperature the
    sampled dynamics contracts to this map.  Returns (times, states).
    """
    from .stages import staged_drift

    x = np.asarray(x0, dtype=float)[None, :]
    n_steps = int(round(t_final / h))
    times = [0.0]
    states = [x[0].copy()]
    for i in range(n_steps):
        x = x + h * staged_drift(drift, model, x, h)
        if (i + 1) % stride == 0:
            times.append((i + 1) * h)
            states.append(x[0].copy())
    return np.asarray(times), np.asarray(states)
