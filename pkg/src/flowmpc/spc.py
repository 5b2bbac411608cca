"""Sampling-based predictive control over knot-parameterized action plans.

Plans are short sequences of control knots interpolated to dense per-step
controls (natural cubic spline or linear).  A Gaussian sampling distribution
over knots is refined each replanning cycle by either CEM (elite statistics)
or MPPI (exponentially weighted averaging), with optional action-level
annealing of the sampling variance along the horizon and a variance reset
when progress toward the goal stalls.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import tasks
from .tasks import InvalidInputError, State

__all__ = [
    "INTERPOLATION_KINDS",
    "ControlKnots",
    "EpisodeTrace",
    "InvalidConfigError",
    "ReplanRecord",
    "SamplingDistribution",
    "SpcConfig",
    "annealing_scales",
    "cem_update",
    "get_action",
    "initial_distribution",
    "interpolate",
    "interpolate_batch",
    "mppi_update",
    "mppi_weights",
    "sample_candidates",
    "shift",
    "spc_plan_episode",
    "variance_reset",
]

INTERPOLATION_KINDS = ("cubic_spline", "linear")

ALGORITHMS = ("cem", "mppi")

_TIME_EPS = 1e-9


class InvalidConfigError(ValueError):
    """Raised when a planner configuration is internally inconsistent."""


def _as_knot_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] < 1:
        raise InvalidInputError(
            f"{name} must have shape (n_knots >= 2, control_dim >= 1), "
            f"got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class ControlKnots:
    """A control plan: knot vectors interpolated over a fixed time horizon."""

    knots: np.ndarray
    interpolation: str
    horizon_seconds: float

    def __post_init__(self):
        arr = _as_knot_array(self.knots, "knots")
        arr.setflags(write=False)
        object.__setattr__(self, "knots", arr)
        if self.interpolation not in INTERPOLATION_KINDS:
            raise InvalidInputError(
                f"unknown interpolation {self.interpolation!r}; "
                f"expected one of {INTERPOLATION_KINDS}")
        horizon = float(self.horizon_seconds)
        if not np.isfinite(horizon) or horizon <= 0.0:
            raise InvalidInputError("horizon_seconds must be positive")
        object.__setattr__(self, "horizon_seconds", horizon)

    @property
    def n_knots(self) -> int:
        return self.knots.shape[0]

    @property
    def control_dim(self) -> int:
        return self.knots.shape[1]


@dataclass(frozen=True, eq=False)
class SamplingDistribution:
    """Diagonal Gaussian over control knots."""

    mean: ControlKnots
    variances: np.ndarray
    initial_variance: float

    def __post_init__(self):
        if not isinstance(self.mean, ControlKnots):
            raise InvalidInputError("mean must be a ControlKnots instance")
        var = np.array(self.variances, dtype=np.float64)
        if var.shape != self.mean.knots.shape:
            raise InvalidInputError(
                f"variances shape {var.shape} does not match mean knots "
                f"shape {self.mean.knots.shape}")
        if not np.all(np.isfinite(var)) or np.any(var < 0.0):
            raise InvalidInputError("variances must be finite and >= 0")
        var.setflags(write=False)
        object.__setattr__(self, "variances", var)
        iv = float(self.initial_variance)
        if not np.isfinite(iv) or iv <= 0.0:
            raise InvalidInputError("initial_variance must be positive")
        object.__setattr__(self, "initial_variance", iv)


@dataclass(frozen=True)
class SpcConfig:
    """Planner settings shared by the CEM and MPPI loops."""

    n_rollouts: int = 32
    n_elite: int = 8
    mppi_temperature: float = 100.0
    annealing_alpha: float = 1.0
    reset_window: int = 10
    replan_interval: int = 10
    seed: int = 0
    n_knots: int = 4
    interpolation: str = "cubic_spline"
    horizon_seconds: float = 3.0
    sigma0: float = 40.0
    variance_floor_fraction: float = 0.01

    def __post_init__(self):
        if self.n_rollouts < 1:
            raise InvalidConfigError("n_rollouts must be >= 1")
        if not (1 <= self.n_elite <= self.n_rollouts):
            raise InvalidConfigError(
                f"n_elite must be in [1, n_rollouts], got {self.n_elite} "
                f"with n_rollouts={self.n_rollouts}")
        if not self.mppi_temperature > 0.0:
            raise InvalidConfigError("mppi_temperature must be > 0")
        if self.annealing_alpha < 0.0:
            raise InvalidConfigError("annealing_alpha must be >= 0")
        if self.reset_window < 1:
            raise InvalidConfigError("reset_window must be >= 1")
        if self.replan_interval < 1:
            raise InvalidConfigError("replan_interval must be >= 1")
        if self.n_knots < 2:
            raise InvalidConfigError("n_knots must be >= 2")
        if self.interpolation not in INTERPOLATION_KINDS:
            raise InvalidConfigError(
                f"unknown interpolation {self.interpolation!r}")
        if not self.horizon_seconds > 0.0:
            raise InvalidConfigError("horizon_seconds must be > 0")
        if not self.sigma0 > 0.0:
            raise InvalidConfigError("sigma0 must be > 0")
        if not 0.0 <= self.variance_floor_fraction <= 1.0:
            raise InvalidConfigError(
                "variance_floor_fraction must be in [0, 1]")


@dataclass
class ReplanRecord:
    """What the planner knew and decided at one replanning step."""

    state: State
    history: State
    knots: np.ndarray
    best_cost: float


@dataclass
class EpisodeTrace:
    """Full closed-loop record of one planning episode."""

    records: list
    states: list
    executed_controls: np.ndarray
    success: bool
    success_step: int | None
    reports: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _cubic_basis_spline(n_knots: int) -> CubicSpline:
    grid = np.linspace(0.0, 1.0, n_knots)
    return CubicSpline(grid, np.eye(n_knots), bc_type="natural", axis=0)


def _basis_at(kind: str, n_knots: int, t_norm: np.ndarray) -> np.ndarray:
    """Interpolation weights: rows are times in [0, 1], columns are knots."""
    t = np.atleast_1d(np.asarray(t_norm, dtype=np.float64))
    if kind == "cubic_spline":
        return np.asarray(_cubic_basis_spline(n_knots)(t), dtype=np.float64)
    grid = np.linspace(0.0, 1.0, n_knots)
    eye = np.eye(n_knots)
    return np.stack([np.interp(t, grid, eye[:, k]) for k in range(n_knots)],
                    axis=1)


@lru_cache(maxsize=256)
def _basis_matrix(kind: str, n_knots: int, n_steps: int) -> np.ndarray:
    basis = _basis_at(kind, n_knots, np.linspace(0.0, 1.0, n_steps))
    basis.setflags(write=False)
    return basis


def _n_steps(horizon_seconds: float, dt: float, n_knots: int) -> int:
    if not dt > 0.0:
        raise InvalidInputError("dt must be > 0")
    n_steps = int(round(horizon_seconds / dt))
    if n_steps < n_knots:
        raise InvalidConfigError(
            f"horizon of {n_steps} steps cannot carry {n_knots} knots; "
            "lengthen horizon_seconds or reduce n_knots")
    return n_steps


def interpolate(knots: ControlKnots, dt: float) -> np.ndarray:
    """Densify a knot plan into one control vector per simulation step.

    Sample times are spread uniformly over [0, horizon] inclusive; the
    result passes exactly through the knot values at the knot times.
    """
    n_steps = _n_steps(knots.horizon_seconds, dt, knots.n_knots)
    basis = _basis_matrix(knots.interpolation, knots.n_knots, n_steps)
    return basis @ knots.knots


def interpolate_batch(knot_stack: np.ndarray, interpolation: str,
                      horizon_seconds: float, dt: float) -> np.ndarray:
    """Densify a stack of knot arrays (n, K, m) into controls (n, H, m)."""
    stack = np.asarray(knot_stack, dtype=np.float64)
    if stack.ndim != 3:
        raise InvalidInputError("knot_stack must have shape (n, K, m)")
    n_steps = _n_steps(horizon_seconds, dt, stack.shape[1])
    basis = _basis_matrix(interpolation, stack.shape[1], n_steps)
    return np.einsum("hk,nkm->nhm", basis, stack)


def get_action(knots: ControlKnots, t_offset: float) -> np.ndarray:
    """Evaluate the interpolated plan at one time offset in [0, horizon]."""
    t = float(t_offset)
    horizon = knots.horizon_seconds
    if not np.isfinite(t) or t < -_TIME_EPS or t > horizon + _TIME_EPS:
        raise InvalidInputError(
            f"t_offset {t} outside the plan horizon [0, {horizon}]")
    t = min(max(t, 0.0), horizon)
    row = _basis_at(knots.interpolation, knots.n_knots,
                    np.array([t / horizon]))[0]
    return row @ knots.knots


def shift(knots: ControlKnots, elapsed_seconds: float) -> ControlKnots:
    """Re-anchor a plan after executing its first `elapsed_seconds`.

    The new knot values are the old interpolant evaluated at the elapsed
    time plus each knot time, clamped to the horizon (the last value holds
    past the end of the old plan).
    """
    elapsed = float(elapsed_seconds)
    horizon = knots.horizon_seconds
    if not np.isfinite(elapsed) or elapsed < 0.0 or elapsed >= horizon:
        raise InvalidInputError(
            f"elapsed_seconds must lie in [0, horizon), got {elapsed}")
    knot_times = np.linspace(0.0, horizon, knots.n_knots)
    eval_times = np.minimum(elapsed + knot_times, horizon)
    basis = _basis_at(knots.interpolation, knots.n_knots, eval_times / horizon)
    return ControlKnots(basis @ knots.knots, knots.interpolation, horizon)


# ---------------------------------------------------------------------------
# sampling and distribution updates
# ---------------------------------------------------------------------------

def annealing_scales(alpha: float, n_knots: int) -> np.ndarray:
    """Per-knot variance multipliers (1 + alpha * k / (K - 1))**2."""
    if alpha < 0.0:
        raise InvalidInputError("alpha must be >= 0")
    if n_knots < 2:
        raise InvalidInputError("n_knots must be >= 2")
    k = np.arange(n_knots, dtype=np.float64)
    return (1.0 + alpha * k / (n_knots - 1)) ** 2


def sample_candidates(dist: SamplingDistribution, n: int, alpha: float,
                      rng_seed) -> list[ControlKnots]:
    """Draw n candidate plans from the annealed Gaussian over knots."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    mean = dist.mean.knots
    scales = annealing_scales(alpha, dist.mean.n_knots)
    std = np.sqrt(dist.variances * scales[:, None])
    draws = mean + std * rng.standard_normal((n,) + mean.shape)
    return [ControlKnots(d, dist.mean.interpolation,
                         dist.mean.horizon_seconds) for d in draws]


def _check_population(candidates: Sequence[ControlKnots],
                      costs: np.ndarray) -> np.ndarray:
    costs = np.asarray(costs, dtype=np.float64).reshape(-1)
    if len(candidates) == 0:
        raise InvalidInputError("candidate list is empty")
    if costs.shape[0] != len(candidates):
        raise InvalidInputError(
            f"{len(candidates)} candidates but {costs.shape[0]} costs")
    return costs


def cem_update(dist: SamplingDistribution,
               candidates: Sequence[ControlKnots], costs,
               n_elite: int) -> SamplingDistribution:
    """Refit the Gaussian to the elite (lowest-cost) candidates.

    NaN costs are excluded from the ranking; ties are broken toward the
    lower candidate index.  The new variance is the population variance of
    the elite set.
    """
    costs = _check_population(candidates, costs)
    if not (1 <= n_elite <= costs.shape[0]):
        raise InvalidInputError(
            f"n_elite must be in [1, {costs.shape[0]}], got {n_elite}")
    valid = np.flatnonzero(~np.isnan(costs))
    if valid.size == 0:
        raise InvalidInputError("all candidate costs are NaN")
    order = valid[np.argsort(costs[valid], kind="stable")]
    elite_idx = order[:min(n_elite, valid.size)]
    elite = np.stack([candidates[i].knots for i in elite_idx])
    mean = ControlKnots(elite.mean(axis=0), dist.mean.interpolation,
                        dist.mean.horizon_seconds)
    return SamplingDistribution(mean, elite.var(axis=0),
                                dist.initial_variance)


def mppi_weights(costs, temperature: float) -> np.ndarray:
    """Normalized exponential weights exp(-(J - min J) / temperature).

    NaN and +inf costs get zero weight; at least one cost must be finite.
    """
    if not temperature > 0.0:
        raise InvalidInputError("temperature must be > 0")
    costs = np.asarray(costs, dtype=np.float64).reshape(-1)
    finite = np.isfinite(costs)
    if not finite.any():
        raise InvalidInputError("all candidate costs are non-finite")
    weights = np.zeros(costs.shape[0])
    best = costs[finite].min()
    weights[finite] = np.exp(-(costs[finite] - best) / temperature)
    return weights / weights.sum()


def mppi_update(dist: SamplingDistribution,
                candidates: Sequence[ControlKnots], costs,
                temperature: float) -> SamplingDistribution:
    """Move the mean to the weight-averaged candidate; keep variances."""
    costs = _check_population(candidates, costs)
    weights = mppi_weights(costs, temperature)
    stack = np.stack([c.knots for c in candidates])
    mean = ControlKnots(np.einsum("n,nkm->km", weights, stack),
                        dist.mean.interpolation, dist.mean.horizon_seconds)
    return SamplingDistribution(mean, dist.variances, dist.initial_variance)


def variance_reset(dist: SamplingDistribution, progress_history,
                   window: int, sigma0_sq: float) -> SamplingDistribution:
    """Restore exploration when goal distance has stalled.

    If the history covers at least `window` replans and the distance has
    not improved by more than 1% over that window, every variance entry is
    reset to sigma0_sq; otherwise the distribution is returned unchanged.
    """
    if window < 1:
        raise InvalidInputError("window must be >= 1")
    if not sigma0_sq > 0.0:
        raise InvalidInputError("sigma0_sq must be > 0")
    history = [float(v) for v in progress_history]
    if len(history) < window:
        return dist
    then, now = history[-window], history[-1]
    if then - now > 0.01 * abs(then):
        return dist
    variances = np.full(dist.mean.knots.shape, float(sigma0_sq))
    return SamplingDistribution(dist.mean, variances, dist.initial_variance)


# ---------------------------------------------------------------------------
# closed-loop episode
# ---------------------------------------------------------------------------

def initial_distribution(config: SpcConfig, task, x0: State
                         ) -> SamplingDistribution:
    """Fresh sampling distribution for an episode starting at x0.

    For pushing tasks the controls are target positions, so the mean holds
    the robot's current position at every knot; for the point-mass task the
    controls are velocities and the mean is zero.
    """
    shape = (config.n_knots, 2)
    if task.task_kind == "point_mass":
        mean_arr = np.zeros(shape)
    else:
        mean_arr = np.tile(x0.robot_pos, (config.n_knots, 1))
    mean = ControlKnots(mean_arr, config.interpolation,
                        config.horizon_seconds)
    sigma_sq = float(config.sigma0) ** 2
    return SamplingDistribution(mean, np.full(shape, sigma_sq), sigma_sq)


def spc_plan_episode(task, config: SpcConfig, algorithm: str,
                     x0: State) -> EpisodeTrace:
    """Run one closed-loop episode with CEM or MPPI replanning.

    Each replanning cycle samples candidate knot plans, scores them with
    batched rollouts, updates the sampling distribution, executes
    `replan_interval` steps of the updated mean plan, then shifts the mean
    forward by the elapsed time.  The trace records, per replan, the state,
    the previous replanning state, the updated mean knots, and the best
    sampled cost.
    """
    if algorithm not in ALGORITHMS:
        raise InvalidConfigError(
            f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    horizon = config.horizon_seconds
    n_steps = _n_steps(horizon, task.dt, config.n_knots)
    if config.replan_interval * task.dt >= horizon:
        raise InvalidConfigError(
            "replan_interval covers the whole horizon; shorten it")
    rng = np.random.default_rng(config.seed)
    plan_basis = _basis_matrix(config.interpolation, config.n_knots, n_steps)
    exec_times = np.arange(config.replan_interval) * task.dt / horizon
    exec_basis = _basis_at(config.interpolation, config.n_knots, exec_times)

    state = x0
    history_state = x0
    states = [x0]
    records: list[ReplanRecord] = []
    executed: list[np.ndarray] = []
    progress = [tasks.goal_distance(task, state)]
    success_step = x0.step_index if tasks.is_success(task, x0) else None
    dist = initial_distribution(config, task, x0)

    while success_step is None and state.step_index < task.max_steps:
        if records and algorithm == "cem":
            dist = variance_reset(dist, progress, config.reset_window,
                                  dist.initial_variance)
        candidates = sample_candidates(dist, config.n_rollouts,
                                       config.annealing_alpha, rng)
        stack = np.stack([c.knots for c in candidates])
        controls = np.einsum("hk,nkm->nhm", plan_basis, stack)
        prev_goal_dist = progress[-1]
        costs, _ = tasks.rollout_costs(task, state, controls, prev_goal_dist)
        if algorithm == "cem":
            dist = cem_update(dist, candidates, costs, config.n_elite)
            if config.annealing_alpha > 0.0:
                # The elite draws carry the annealing inflation; divide it
                # back out so the stored base variance stays stationary
                # instead of compounding by a_k every replan.
                scales = annealing_scales(config.annealing_alpha,
                                          config.n_knots)
                dist = replace(dist,
                               variances=dist.variances / scales[:, None])
            floor = config.variance_floor_fraction * dist.initial_variance
            if floor > 0.0:
                # Keep a minimum of exploration so the distribution cannot
                # freeze solid between stagnation resets.
                dist = replace(dist,
                               variances=np.maximum(dist.variances, floor))
        else:
            dist = mppi_update(dist, candidates, costs,
                               config.mppi_temperature)
        finite = costs[np.isfinite(costs)]
        best_cost = float(finite.min()) if finite.size else float("nan")
        records.append(ReplanRecord(state=state, history=history_state,
                                    knots=np.array(dist.mean.knots),
                                    best_cost=best_cost))

        n_exec = min(config.replan_interval,
                     task.max_steps - state.step_index)
        plan_controls = exec_basis[:n_exec] @ dist.mean.knots
        _, sim_states = tasks.rollout_costs(task, state, plan_controls[None],
                                            prev_goal_dist)
        base_step = state.step_index
        for h in range(n_exec):
            executed.append(plan_controls[h])
            state = State.from_array(sim_states[0, h + 1],
                                     step_index=base_step + h + 1)
            states.append(state)
            if tasks.is_success(task, state):
                success_step = state.step_index
                break
        history_state = records[-1].state
        progress.append(tasks.goal_distance(task, state))
        if success_step is None and state.step_index < task.max_steps:
            dist = replace(dist, mean=shift(dist.mean, n_exec * task.dt))

    controls_arr = (np.stack(executed) if executed
                    else np.zeros((0, 2), dtype=np.float64))
    return EpisodeTrace(records=records, states=states,
                        executed_controls=controls_arr,
                        success=success_step is not None,
                        success_step=success_step)
