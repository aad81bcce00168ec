"""Sampling-based trajectory optimization (iCEM lineage) in an MPC loop.

Per environment step the optimizer runs a few CEM rounds: draw candidate
action sequences as mean + stddev * colored noise, clip to [-1,1], score
them through a dynamics model, keep the K cheapest as elites and refit
the sampling distribution with momentum.  Elites survive into the next
CEM round (keep_elites) and, shifted by one timestep, into the next MPC
step (shift_elites); the current mean is always offered as a candidate
when use_mean_actions is set.

Costs are negated rewards aggregated over the horizon either as the sum
over all steps or as the single best step excluding the first one
("best" mode rewards plans that reach a good configuration anywhere late
in the horizon, which suits plateaued objectives).

Determinism: all noise is drawn from substreams named by
(seed, "plan", mpc_step, cem_round) before any evaluation fan-out, so
results are bitwise identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Protocol

import numpy as np

from regplay import gridworld
from regplay.gridworld import Configuration, GridAction
from regplay.models import BatchRollout
from regplay.rng import substream

STDDEV_FLOOR = 1e-3


class CostMode(Enum):
    SUM = "sum"
    BEST = "best"


@dataclass(frozen=True)
class PlannerConfig:
    samples: int = 64
    horizon: int = 30
    elites: int = 10
    cem_iterations: int = 3
    noise_beta: float = 3.5
    sigma_init: float = 0.8
    momentum: float = 0.1  # weight kept on the old statistic when refitting
    elite_fraction: float = 0.3  # fraction of elites shifted to the next MPC step
    use_mean_actions: bool = True
    shift_elites: bool = True
    keep_elites: bool = True
    cost_mode: CostMode = CostMode.BEST
    action_dim: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.elites < 1 or self.elites > self.samples:
            raise ValueError("elites must be in 1..samples")
        if self.horizon < 1 or self.cem_iterations < 1:
            raise ValueError("horizon and cem_iterations must be >= 1")
        if self.noise_beta < 0:
            raise ValueError("noise_beta must be non-negative")
        if not (0 < self.sigma_init):
            raise ValueError("sigma_init must be positive")
        if not (0 <= self.momentum <= 1):
            raise ValueError("momentum must be in [0,1]")
        if not (0 < self.elite_fraction <= 1):
            raise ValueError("elite_fraction must be in (0,1]")


class DynamicsModel(Protocol):
    def rollout_batch(self, state: Configuration, plans: np.ndarray) -> BatchRollout: ...


class Objective(Protocol):
    """Scores imagined trajectories and (optionally) real transitions."""

    def batch_rewards(self, rollout: BatchRollout) -> np.ndarray: ...

    def transition_components(
        self, state: Configuration, action_raw: np.ndarray, next_state: Configuration
    ) -> dict[str, float]: ...


def sample_colored_noise(
    beta: float, horizon: int, dim: int, count: int, rng: np.random.Generator
) -> np.ndarray:
    """(count, horizon, dim) noise with power spectrum ~ f^-beta per sequence.

    Frequency-domain synthesis: shape the spectrum of white noise by
    f^(-beta/2) (DC removed), invert, then standardize every sequence to
    sample mean 0 and variance 1.  beta=0 keeps the white noise as is.
    A horizon of 1 has no spectrum to shape and returns standard normals.
    """
    if beta < 0:
        raise ValueError("noise exponent must be non-negative")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    white = rng.standard_normal((count, dim, horizon))
    if horizon == 1:
        return white.transpose(0, 2, 1)
    if beta == 0:
        shaped = white
    else:
        spec = np.fft.rfft(white, axis=-1)
        freqs = np.fft.rfftfreq(horizon)
        scale = np.zeros_like(freqs)
        scale[1:] = freqs[1:] ** (-beta / 2.0)
        shaped = np.fft.irfft(spec * scale, n=horizon, axis=-1)
    shaped = shaped - shaped.mean(axis=-1, keepdims=True)
    std = shaped.std(axis=-1, keepdims=True)
    shaped = shaped / np.where(std < 1e-12, 1.0, std)
    return shaped.transpose(0, 2, 1)


_CHUNK = 32  # fixed chunk size keeps results independent of the worker count


def _chunked_rollout(
    model: DynamicsModel, state: Configuration, plans: np.ndarray, workers: int
) -> BatchRollout:
    """Fan candidate evaluation out over worker threads; order preserved.

    Chunk boundaries never depend on `workers`: each chunk sees identical
    inputs either way, so outputs are bitwise equal for any pool size.
    """
    count = plans.shape[0]
    if count <= _CHUNK:
        return model.rollout_batch(state, plans)
    bounds = list(range(0, count, _CHUNK)) + [count]
    chunks = [plans[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    if workers <= 1:
        parts = [model.rollout_batch(state, chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda chunk: model.rollout_batch(state, chunk), chunks))
    member = None
    if parts[0].member_positions is not None:
        member = np.concatenate([p.member_positions for p in parts], axis=1)
    return BatchRollout(
        positions=np.concatenate([p.positions for p in parts], axis=0),
        member_positions=member,
        colors=parts[0].colors,
        frozen=parts[0].frozen,
    )


def costs_from_rewards(rewards: np.ndarray, mode: CostMode) -> np.ndarray:
    """Per-plan cost from per-step rewards (P, H); cost = -reward."""
    costs = -np.asarray(rewards, dtype=np.float64)
    if mode is CostMode.SUM:
        return costs.sum(axis=1)
    if costs.shape[1] == 1:  # degenerate horizon: only the first step exists
        return costs[:, 0]
    return costs[:, 1:].min(axis=1)


def evaluate_plans(
    model: DynamicsModel,
    state: Configuration,
    plans: np.ndarray,
    objective: Objective,
    mode: CostMode,
    workers: int = 1,
) -> np.ndarray:
    rollout = _chunked_rollout(model, state, np.asarray(plans, dtype=np.float64), workers)
    rewards = objective.batch_rewards(rollout)
    if rewards.shape != plans.shape[:2]:
        raise ValueError(f"objective returned {rewards.shape}, expected {plans.shape[:2]}")
    return costs_from_rewards(rewards, mode)


@dataclass
class CarriedState:
    """Planner state threaded between MPC steps."""

    mpc_step: int = 0
    mean: np.ndarray | None = None
    elites: np.ndarray | None = None  # already shifted, ready to inject


@dataclass
class PlanResult:
    action: np.ndarray
    plan: np.ndarray
    carried: CarriedState
    diagnostics: list[dict]


def icem_plan(
    model: DynamicsModel,
    state: Configuration,
    config: PlannerConfig,
    objective: Objective,
    carried: CarriedState | None = None,
    workers: int = 1,
) -> PlanResult:
    """One full CEM optimization; returns the first action of the best plan."""
    horizon, dim = config.horizon, config.action_dim
    carried = carried or CarriedState()
    mean = np.zeros((horizon, dim)) if carried.mean is None else carried.mean.copy()
    std = np.full((horizon, dim), config.sigma_init)
    kept: np.ndarray | None = None
    best_plan: np.ndarray | None = None
    diagnostics: list[dict] = []

    for it in range(config.cem_iterations):
        rng = substream(config.seed, "plan", carried.mpc_step, it)
        noise = sample_colored_noise(config.noise_beta, horizon, dim, config.samples, rng)
        cands = [np.clip(mean + std * noise, -1.0, 1.0)]
        if it == 0 and config.shift_elites and carried.elites is not None:
            cands.append(carried.elites)
        if it > 0 and config.keep_elites and kept is not None:
            cands.append(kept)
        if config.use_mean_actions:
            cands.append(np.clip(mean, -1.0, 1.0)[None])
        pool = np.concatenate(cands, axis=0)
        costs = evaluate_plans(model, state, pool, objective, config.cost_mode, workers)
        order = np.argsort(costs, kind="stable")  # ties go to the lower index
        elite_idx = order[: config.elites]
        elites = pool[elite_idx]
        kept = elites
        best_plan = pool[order[0]]
        diagnostics.append(
            {
                "mpc_step": carried.mpc_step,
                "cem_iter": it,
                "best_cost": float(costs[order[0]]),
                "mean_cost": float(costs.mean()),
                "stddev_norm": float(np.linalg.norm(std)),
            }
        )
        mean = config.momentum * mean + (1.0 - config.momentum) * elites.mean(axis=0)
        std = config.momentum * std + (1.0 - config.momentum) * elites.std(axis=0)
        std = np.maximum(std, STDDEV_FLOOR)

    # Shift statistics one step forward for the next MPC round.
    carry_rng = substream(config.seed, "carry", carried.mpc_step)
    next_mean = np.vstack([mean[1:], mean[-1:]])
    shifted_elites = None
    if config.shift_elites:
        n_carry = max(1, math.ceil(config.elite_fraction * config.elites))
        tail = carry_rng.normal(mean[-1], std[-1], size=(n_carry, dim))
        shifted_elites = np.concatenate(
            [kept[:n_carry, 1:, :], np.clip(tail, -1.0, 1.0)[:, None, :]], axis=1
        )
    new_carried = CarriedState(
        mpc_step=carried.mpc_step + 1, mean=next_mean, elites=shifted_elites
    )
    return PlanResult(
        action=best_plan[0].copy(), plan=best_plan, carried=new_carried, diagnostics=diagnostics
    )


@dataclass
class RolloutRecord:
    """Per-step log of one MPC episode against the real environment."""

    initial_state: Configuration
    final_state: Configuration
    steps: list[dict]
    diagnostics: list[dict]


def mpc_rollout(
    model: DynamicsModel,
    initial_state: Configuration,
    config: PlannerConfig,
    objective: Objective,
    episode_length: int,
    workers: int = 1,
) -> RolloutRecord:
    """Alternate planning and stepping the real gridworld for a full episode."""
    if episode_length < 1:
        raise ValueError("episode_length must be >= 1")
    state = initial_state
    carried: CarriedState | None = None
    steps: list[dict] = []
    diagnostics: list[dict] = []
    for t in range(episode_length):
        result = icem_plan(model, state, config, objective, carried, workers)
        carried = result.carried
        diagnostics.extend(result.diagnostics)
        action = result.action
        next_state = gridworld.step(state, GridAction((float(action[0]), float(action[1]))))
        components = objective.transition_components(state, action, next_state)
        record = {
            "step": t,
            "action": [float(action[0]), float(action[1])],
            "move": [int(v) for v in gridworld.threshold_actions(action)],
            "best_cost": result.diagnostics[-1]["best_cost"],
            "state": gridworld.to_json_dict(next_state),
        }
        record.update(components)
        steps.append(record)
        state = next_state
    return RolloutRecord(
        initial_state=initial_state, final_state=state, steps=steps, diagnostics=diagnostics
    )
