"""Monte Carlo engine: killed Euler-Maruyama paths, the conditioned process,
exact continuous-time chain simulation, and exit-rate estimation.

Paths are advanced in shards of fixed size, one counter-based substream per
shard (Philox keyed by master seed and shard ordinal), and shard results are
concatenated in shard order.  Worker count therefore cannot change any output
bit.  Exits use the plain first-step-outside rule with no bridge correction;
the O(sqrt(dt)) bias this leaves is covered by the dt-refinement test.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
from numpy.random import Generator as RandomGenerator
from numpy.random import Philox

from .errors import TooFewSurvivors, TooLargeForDense
from .grid import Generator, Grid, discrete_gradient
from ._util import ordered_map, write_csv

SHARD = 32768
DENSE_CTMC_CAP = 2000
_MASK = (1 << 64) - 1
_STREAM_QPROCESS = 0x900000000
_STREAM_BOOTSTRAP = 0xB00000000
_STREAM_CTMC = 0xC00000000


def _philox(seed: int, stream: int) -> RandomGenerator:
    key = np.array([seed & _MASK, stream & _MASK], dtype=np.uint64)
    return RandomGenerator(Philox(key=key))


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """Killed-SDE sample: exit or censor time and terminal state per path."""

    n_paths: int
    dt: float
    horizon: float
    exit_times: np.ndarray
    censored: np.ndarray
    terminal_states: np.ndarray
    seed: int
    x0: np.ndarray


def _policy_drift(
    problem,
    policy: Union[int, np.ndarray],
    grid: Optional[Grid],
    points: np.ndarray,
) -> np.ndarray:
    if isinstance(policy, (int, np.integer)):
        return problem.drift(points, int(policy))
    if grid is None:
        raise ValueError("a per-node policy needs the grid it lives on")
    actions = np.asarray(policy, dtype=np.int64)[grid.nearest_index(points)]
    out = np.empty_like(points)
    for u in np.unique(actions):
        mask = actions == u
        out[mask] = problem.drift(points[mask], int(u))
    return out


def simulate_killed(
    problem,
    policy: Union[int, np.ndarray],
    x0,
    dt: float,
    T: float,
    n_paths: int,
    seed: int,
    grid: Optional[Grid] = None,
) -> TrajectoryEnsemble:
    """Euler-Maruyama until the first step that lands outside the open box."""

    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    lo = np.asarray(problem.lo)
    hi = np.asarray(problem.hi)
    if np.any(x0 <= lo) or np.any(x0 >= hi):
        raise ValueError("start point is not inside the domain")
    n_steps = int(round(T / dt))
    horizon = n_steps * dt
    d = len(x0)
    sq = np.sqrt(dt)

    def run_shard(shard: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        count = min(SHARD, n_paths - shard * SHARD)
        rng = _philox(seed, shard)
        x = np.tile(x0, (count, 1))
        alive = np.arange(count)
        exit_times = np.full(count, horizon)
        censored = np.ones(count, dtype=bool)
        terminal = np.zeros((count, d))
        for k in range(n_steps):
            if not len(alive):
                break
            m = _policy_drift(problem, policy, grid, x)
            s = problem.sigma(x)
            x = x + m * dt + s * rng.standard_normal(x.shape) * sq
            out = np.any((x <= lo) | (x >= hi), axis=1)
            if out.any():
                gone = alive[out]
                exit_times[gone] = (k + 1) * dt
                censored[gone] = False
                terminal[gone] = x[out]
                keep = ~out
                x = x[keep]
                alive = alive[keep]
        terminal[alive] = x
        return exit_times, censored, terminal

    n_shards = (n_paths + SHARD - 1) // SHARD
    parts = ordered_map(run_shard, list(range(n_shards)))
    return TrajectoryEnsemble(
        n_paths=n_paths,
        dt=dt,
        horizon=horizon,
        exit_times=np.concatenate([p[0] for p in parts]),
        censored=np.concatenate([p[1] for p in parts]),
        terminal_states=np.concatenate([p[2] for p in parts]),
        seed=seed,
        x0=x0,
    )


def survival(ensemble: TrajectoryEnsemble, t: float) -> float:
    if t > ensemble.horizon + 1e-12:
        raise ValueError("cannot evaluate survival beyond the horizon")
    alive = ensemble.censored | (ensemble.exit_times > t)
    return float(alive.mean())


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    stderr: float
    r_squared: float
    window: tuple[float, float]
    survivors_at_start: int


def estimate_exit_rate(
    ensemble: TrajectoryEnsemble,
    fit_window: tuple[float, float] = (0.5, 1.5),
    n_points: int = 41,
    n_boot: int = 200,
) -> RateEstimate:
    """Least-squares slope of log survival; bootstrap over paths for stderr."""

    t0, t1 = fit_window
    if not 0.0 <= t0 < t1 <= ensemble.horizon + 1e-12:
        raise ValueError("fit window must sit inside [0, horizon]")
    n = ensemble.n_paths
    tau = np.sort(ensemble.exit_times[~ensemble.censored])
    times = np.linspace(t0, t1, n_points)

    def log_survival(sorted_tau: np.ndarray, total: int) -> np.ndarray:
        alive = total - np.searchsorted(sorted_tau, times, side="right")
        return np.log(np.maximum(alive, 1) / total)

    survivors = n - int(np.searchsorted(tau, t0, side="right"))
    if survivors < 100:
        raise TooFewSurvivors(f"only {survivors} paths survive past t={t0:g}")

    y = log_survival(tau, n)
    slope, intercept = np.polyfit(times, y, 1)
    fitted = slope * times + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    rng = _philox(ensemble.seed, _STREAM_BOOTSTRAP)
    slopes = np.empty(n_boot)
    exit_all = ensemble.exit_times
    censored_all = ensemble.censored
    for b in range(n_boot):
        pick = rng.integers(0, n, n)
        tau_b = np.sort(exit_all[pick][~censored_all[pick]])
        slopes[b] = np.polyfit(times, log_survival(tau_b, n), 1)[0]
    return RateEstimate(
        rate=float(-slope),
        stderr=float(slopes.std(ddof=1)),
        r_squared=r2,
        window=(t0, t1),
        survivors_at_start=survivors,
    )


def interpolate_field(grid: Grid, field: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of node values, clamped at the node hull."""

    field = np.asarray(field, dtype=float)
    squeeze = field.ndim == 1
    if squeeze:
        field = field[:, None]
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = grid.d
    dims = grid.dims
    base = np.empty((len(points), d), dtype=np.int64)
    frac = np.empty((len(points), d))
    for k in range(d):
        t = (points[:, k] - (grid.lo[k] + grid.h)) / grid.h
        if dims[k] == 1:
            base[:, k] = 0
            frac[:, k] = 0.0
        else:
            cell = np.clip(np.floor(t), 0, dims[k] - 2)
            base[:, k] = cell.astype(np.int64)
            frac[:, k] = np.clip(t - cell, 0.0, 1.0)
    out = np.zeros((len(points), field.shape[1]))
    for corner in product((0, 1), repeat=d):
        idx = [np.minimum(base[:, k] + corner[k], dims[k] - 1) for k in range(d)]
        flat = np.ravel_multi_index(idx, dims)
        w = np.ones(len(points))
        for k in range(d):
            w *= frac[:, k] if corner[k] else 1.0 - frac[:, k]
        out += w[:, None] * field[flat]
    return out[:, 0] if squeeze else out


@dataclass(frozen=True)
class QOccupancy:
    """Occupancy histogram and running cost of the conditioned process."""

    histogram: np.ndarray
    mean_quadratic_cost: float
    terminal_states: np.ndarray
    projections: int
    flagged: bool
    killed: int
    n_paths: int
    dt: float
    horizon: float
    seed: int


def simulate_qprocess(
    problem,
    grid: Grid,
    policy: Union[int, np.ndarray],
    psi_log: np.ndarray,
    x0,
    dt: float,
    T: float,
    n_paths: int,
    seed: int,
    max_halvings: int = 20,
) -> QOccupancy:
    """Conditioned-process SDE with boundary rejection.

    The drift adds a * (interpolated gradient of psi_log) to the policy drift.
    A proposal leaving the box is retried with half the step; after
    max_halvings failures the proposal is projected onto the layer two cells
    inside the boundary and the projection counter is incremented.  Paths are
    never killed.
    """

    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    lo, hi, h = grid.lo, grid.hi, grid.h
    if np.any(x0 <= lo + 2 * h) or np.any(x0 >= hi - 2 * h):
        raise ValueError("start point must sit at least two cells inside")
    grad = discrete_gradient(grid, psi_log, extension="log-zero")
    n_steps = int(round(T / dt))
    horizon = n_steps * dt
    rng = _philox(seed, _STREAM_QPROCESS)

    x = np.tile(x0, (n_paths, 1))
    occupancy = np.zeros(grid.n)
    quad_time = 0.0
    projections = 0
    for _ in range(n_steps):
        remaining = np.full(n_paths, dt)
        trial = np.full(n_paths, dt)
        halvings = np.zeros(n_paths, dtype=np.int64)
        while True:
            idx = np.flatnonzero(remaining > 1e-18)
            if not len(idx):
                break
            xs = x[idx]
            step = np.minimum(trial[idx], remaining[idx])
            s = problem.sigma(xs)
            w = interpolate_field(grid, grad, xs)
            m = _policy_drift(problem, policy, grid, xs) + s * s * w
            prop = xs + m * step[:, None] + s * rng.standard_normal(xs.shape) * np.sqrt(step)[:, None]
            inside = np.all((prop > lo) & (prop < hi), axis=1)
            stuck = ~inside & (halvings[idx] >= max_halvings)
            if stuck.any():
                prop[stuck] = np.clip(prop[stuck], lo + 2 * h, hi - 2 * h)
                projections += int(stuck.sum())
            commit = inside | stuck
            ci = idx[commit]
            dt_c = step[commit]
            occupancy_cells = grid.nearest_index(xs[commit])
            occupancy += np.bincount(occupancy_cells, weights=dt_c, minlength=grid.n)
            quad_time += float(np.sum(0.5 * np.sum((s[commit] * w[commit]) ** 2, axis=1) * dt_c))
            x[ci] = prop[commit]
            remaining[ci] -= dt_c
            # Retry the whole leftover next time; without the reset a path
            # that halved k times would need 2^k micro-steps to finish.
            trial[ci] = np.maximum(remaining[ci], 0.0)
            retry = idx[~commit]
            halvings[retry] += 1
            trial[retry] *= 0.5
    total = n_paths * horizon if horizon > 0 else 1.0
    return QOccupancy(
        histogram=occupancy / total,
        mean_quadratic_cost=quad_time / total,
        terminal_states=x,
        projections=projections,
        flagged=projections > 0.001 * n_paths * n_steps,
        killed=0,
        n_paths=n_paths,
        dt=dt,
        horizon=horizon,
        seed=seed,
    )


@dataclass(frozen=True)
class CTMCEnsemble:
    occupancy: np.ndarray
    exit_times: np.ndarray
    censored: np.ndarray
    final_states: np.ndarray
    horizon: float
    seed: int


def _dense_rates(generator) -> tuple[np.ndarray, np.ndarray]:
    """Extract (dense matrix, kill deficit per state) from a generator."""

    if isinstance(generator, Generator):
        mat = generator.matrix.toarray()
        deficit = generator.killed.copy()
    else:
        mat = generator.toarray() if sp.issparse(generator) else np.array(generator, dtype=float)
        deficit = -mat.sum(axis=1)
        deficit[np.abs(deficit) < 1e-13] = 0.0
    if mat.shape[0] > DENSE_CTMC_CAP:
        raise TooLargeForDense(f"{mat.shape[0]} states exceeds the CTMC cap {DENSE_CTMC_CAP}")
    return mat, deficit


def simulate_ctmc(
    generator,
    x0_index: int,
    T: float,
    seed: int,
    n_paths: int = 1,
) -> CTMCEnsemble:
    """Exact event-driven simulation; sub-conservative rows kill the path."""

    mat, deficit = _dense_rates(generator)
    n = mat.shape[0]
    rates = -np.diag(mat)
    if np.any(rates < 0):
        raise ValueError("generator diagonal must be nonpositive")
    jump = np.maximum(mat, 0.0)
    np.fill_diagonal(jump, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(rates[:, None] > 0, jump / rates[:, None], 0.0)
        kill = np.where(rates > 0, deficit / rates, 0.0)
    cum = np.cumsum(np.hstack([probs, kill[:, None]]), axis=1)

    rng = _philox(seed, _STREAM_CTMC)
    state = np.full(n_paths, int(x0_index), dtype=np.int64)
    t = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=bool)
    censored = np.ones(n_paths, dtype=bool)
    exit_times = np.full(n_paths, float(T))
    final_states = np.full(n_paths, int(x0_index), dtype=np.int64)
    occupancy = np.zeros(n)
    while alive.any():
        idx = np.flatnonzero(alive)
        r = rates[state[idx]]
        hold = np.where(r > 0, rng.exponential(1.0, len(idx)) / np.maximum(r, 1e-300), np.inf)
        commit = np.minimum(hold, T - t[idx])
        np.add.at(occupancy, state[idx], commit)
        t_next = t[idx] + hold
        done = t_next >= T
        final_states[idx[done]] = state[idx[done]]
        alive[idx[done]] = False
        movers = idx[~done]
        if not len(movers):
            continue
        u = rng.random(len(movers))
        sel = np.sum(cum[state[movers]] < u[:, None], axis=1)
        killed = sel >= n
        dead = movers[killed]
        exit_times[dead] = t_next[~done][killed]
        censored[dead] = False
        final_states[dead] = state[dead]
        alive[dead] = False
        live = movers[~killed]
        state[live] = sel[~killed]
        t[live] = t_next[~done][~killed]
    return CTMCEnsemble(
        occupancy=occupancy,
        exit_times=exit_times,
        censored=censored,
        final_states=final_states,
        horizon=float(T),
        seed=seed,
    )


def mc_girsanov_check(
    problem,
    grid: Grid,
    policy: Union[int, np.ndarray],
    pair,
    g: Callable[[np.ndarray], np.ndarray],
    t: float,
    x0,
    n_killed: int,
    n_qpaths: int,
    seed: int,
    dt: float = 1e-3,
    dt_q: float | None = None,
) -> dict:
    """Two independent estimates of the killed expectation of g at time t.

    The direct side averages g over surviving killed paths; the conditioned
    side reweights the confined process by the eigenfunction and its rate.
    The killed side carries the O(sqrt(dt)) exit bias and usually needs a
    finer dt than the confined side, whose paths stay off the boundary.
    """

    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    psi_log = np.log(pair.psi)
    ens = simulate_killed(problem, policy, x0, dt, t, n_killed, seed, grid=grid)
    lhs_samples = np.where(ens.censored, g(ens.terminal_states), 0.0)
    lhs = float(lhs_samples.mean())
    lhs_half = 1.96 * float(lhs_samples.std(ddof=1)) / np.sqrt(n_killed)

    occ = simulate_qprocess(problem, grid, policy, psi_log, x0, dt_q or dt, t, n_qpaths, seed)
    psi_end = interpolate_field(grid, psi_log, occ.terminal_states)
    psi0 = float(interpolate_field(grid, psi_log, x0[None, :])[0])
    weight = np.exp(-pair.lam * t + psi0)
    rhs_samples = weight * g(occ.terminal_states) * np.exp(-psi_end)
    rhs = float(rhs_samples.mean())
    rhs_half = 1.96 * float(rhs_samples.std(ddof=1)) / np.sqrt(n_qpaths)

    overlap = (lhs - lhs_half) <= (rhs + rhs_half) and (rhs - rhs_half) <= (lhs + lhs_half)
    return {
        "lhs": lhs,
        "lhs_ci": (lhs - lhs_half, lhs + lhs_half),
        "rhs": rhs,
        "rhs_ci": (rhs - rhs_half, rhs + rhs_half),
        "overlap": bool(overlap),
        "lam": pair.lam,
        "psi0": psi0,
        "projections": occ.projections,
    }


def export_ensemble_csv(ensemble: TrajectoryEnsemble, path: str) -> None:
    d = ensemble.terminal_states.shape[1]
    header = ["path", "exit_time", "censored"] + [f"x{k + 1}" for k in range(d)]
    rows = [
        [i, ensemble.exit_times[i], int(ensemble.censored[i])]
        + list(ensemble.terminal_states[i])
        for i in range(ensemble.n_paths)
    ]
    write_csv(path, header, rows)


def export_histogram_csv(grid: Grid, histogram: np.ndarray, path: str) -> None:
    header = [f"x{k + 1}" for k in range(grid.d)] + ["mass"]
    rows = [list(grid.nodes[i]) + [histogram[i]] for i in range(grid.n)]
    write_csv(path, header, rows)
