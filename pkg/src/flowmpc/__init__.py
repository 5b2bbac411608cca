"""Sampling-based MPC for planar pushing, with flow-matching proposal models."""

from flowmpc.spc import (
    ControlKnots,
    EpisodeTrace,
    InvalidConfigError,
    ReplanRecord,
    SamplingDistribution,
    SpcConfig,
    cem_update,
    get_action,
    interpolate,
    mppi_update,
    sample_candidates,
    shift,
    spc_plan_episode,
    variance_reset,
)
from flowmpc.tasks import (
    InvalidInputError,
    RolloutResult,
    State,
    TaskConfig,
    coverage,
    goal_distance,
    is_success,
    make_task,
    rollout_cost,
    rollout_costs,
    stage_cost,
    step,
    wrap_angle,
)

__version__ = "0.1.0"
