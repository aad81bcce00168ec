"""Free-play orchestration and the experiment drivers built on it.

The free-play loop alternates two phases: collect rollouts in the real
gridworld by planning against the learned ensemble with an intrinsic
reward (regularity of the imagined configuration, optionally plus a
disagreement bonus), then train the ensemble on everything gathered so
far.  The first iteration plans with the randomly initialized ensemble.

The same rollout plumbing also drives the two ground-truth experiments:
pattern emergence (a single long episode optimizing regularity with the
exact model) and pattern re-creation (frozen template entities that the
movable ones should extend).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from regplay import gridworld, models
from regplay import planner as planner_mod
from regplay.gridworld import Configuration, GridConfig
from regplay.models import EnsembleConfig, EnsembleModel, GroundTruthModel, ReplayBuffer
from regplay.planner import PlannerConfig, RolloutRecord
from regplay.regularity import (
    EntityView,
    MapVariant,
    Symbol,
    SymbolMapSpec,
    batch_regularity,
    build_multiset_relational,
)
from regplay.rng import child_seed, substream


class IntrinsicMode(Enum):
    REGULARITY_ONLY = "regularity_only"
    DISAGREEMENT_ONLY = "disagreement_only"
    COMBINED = "combined"


def _default_map_spec() -> SymbolMapSpec:
    return SymbolMapSpec(variant=MapVariant.ABS_RELATIVE_POSITION)


@dataclass(frozen=True)
class IntrinsicSpec:
    """What the planner optimizes while exploring."""

    mode: IntrinsicMode = IntrinsicMode.COMBINED
    map_spec: SymbolMapSpec = field(default_factory=_default_map_spec)
    disagreement_weight: float = 0.1

    def __post_init__(self) -> None:
        if self.disagreement_weight < 0:
            raise ValueError("disagreement weight must be non-negative")
        if (self.mode is IntrinsicMode.REGULARITY_ONLY) != (self.disagreement_weight == 0):
            raise ValueError("regularity-only runs and a zero disagreement weight imply each other")

    @property
    def uses_regularity(self) -> bool:
        return self.mode is not IntrinsicMode.DISAGREEMENT_ONLY

    @property
    def uses_disagreement(self) -> bool:
        return self.mode is not IntrinsicMode.REGULARITY_ONLY


def regularity_only(map_spec: SymbolMapSpec | None = None) -> IntrinsicSpec:
    return IntrinsicSpec(
        mode=IntrinsicMode.REGULARITY_ONLY,
        map_spec=map_spec or _default_map_spec(),
        disagreement_weight=0.0,
    )


def intrinsic_reward(member_predictions: np.ndarray, spec: IntrinsicSpec) -> float:
    """Intrinsic value of M predicted configurations, (M, N, 2) in cell units.

    Regularity is evaluated once, on the ensemble-mean configuration; the
    disagreement bonus is the covariance trace across members.
    """
    preds = np.asarray(member_predictions, dtype=np.float64)
    if preds.ndim != 3:
        raise ValueError("member predictions must be (members, entities, 2)")
    if spec.uses_disagreement and preds.shape[0] < 2:
        raise ValueError("disagreement needs at least 2 ensemble members")
    total = 0.0
    if spec.uses_regularity:
        total += float(batch_regularity(preds.mean(axis=0)[None], spec.map_spec)[0])
    if spec.uses_disagreement:
        total += spec.disagreement_weight * models.disagreement(preds.reshape(preds.shape[0], -1))
    return total


class IntrinsicObjective:
    """Planner objective scoring imagined rollouts with the intrinsic reward."""

    def __init__(
        self,
        spec: IntrinsicSpec,
        ensemble: EnsembleModel | None = None,
        colors: np.ndarray | None = None,
    ):
        if spec.map_spec.include_color and colors is None:
            raise ValueError("color-extended map needs the entity color bits")
        self.spec = spec
        self.ensemble = ensemble
        self.colors = colors

    def batch_rewards(self, rollout: models.BatchRollout) -> np.ndarray:
        p, h, n, _ = rollout.positions.shape
        rewards = np.zeros((p, h))
        if self.spec.uses_regularity:
            flat = rollout.positions.reshape(p * h, n, 2)
            rewards += batch_regularity(flat, self.spec.map_spec, self.colors).reshape(p, h)
        if self.spec.uses_disagreement:
            if rollout.member_positions is None:
                raise ValueError("disagreement bonus needs an ensemble rollout")
            rewards += self.spec.disagreement_weight * models.disagreement_batch(
                rollout.member_positions
            )
        return rewards

    def transition_components(
        self, state: Configuration, action_raw: np.ndarray, next_state: Configuration
    ) -> dict[str, float]:
        reg = float(
            batch_regularity(
                gridworld.positions_array(next_state)[None], self.spec.map_spec, self.colors
            )[0]
        )
        components = {"regularity": reg}
        if self.ensemble is not None:
            inp, _ = models.transition_pair(state, np.asarray(action_raw), next_state)
            preds = self.ensemble.predict_next(inp)[:, 0, :]  # (M, 2N) normalized
            ext = models.grid_extent(state.config)
            cells = preds.reshape(preds.shape[0], -1, 2) * ext
            components["disagreement"] = models.disagreement(
                cells.reshape(cells.shape[0], -1)
            )
        return components


@dataclass(frozen=True)
class FreePlayConfig:
    grid: GridConfig
    planner: PlannerConfig
    ensemble: EnsembleConfig
    intrinsic: IntrinsicSpec = field(default_factory=IntrinsicSpec)
    iterations: int = 30
    rollouts_per_iter: int = 10
    episode_length: int = 50
    checkpoint_every: int = 10
    plan_with_ground_truth: bool = False

    def __post_init__(self) -> None:
        for name in ("iterations", "rollouts_per_iter", "episode_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if self.plan_with_ground_truth and self.intrinsic.uses_disagreement:
            raise ValueError("ground-truth planning has no ensemble to disagree")


@dataclass
class IterationMetrics:
    iteration: int
    best_regularity: float
    mean_regularity: float
    mean_disagreement: float  # nan when the objective carries no disagreement
    moved_step_fraction: float
    adjacent_step_fraction: float
    member_losses: list[float]
    buffer_size: int

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "best_regularity": self.best_regularity,
            "mean_regularity": self.mean_regularity,
            "mean_disagreement": self.mean_disagreement,
            "moved_step_fraction": self.moved_step_fraction,
            "adjacent_step_fraction": self.adjacent_step_fraction,
            "member_losses": self.member_losses,
            "buffer_size": self.buffer_size,
        }


def _record_states(record: RolloutRecord, grid: GridConfig) -> list[Configuration]:
    states = [record.initial_state]
    for step in record.steps:
        states.append(gridworld.from_json_dict(grid, step["state"]))
    return states


def _has_adjacent_pair(positions: np.ndarray) -> bool:
    n = len(positions)
    if n < 2:
        return False
    diff = positions[:, None, :] - positions[None, :, :]
    cheb = np.abs(diff).max(axis=-1)
    return bool(np.any(cheb[np.triu_indices(n, 1)] <= 1))


def metrics_from_records(
    records: list[RolloutRecord], grid: GridConfig, map_spec: SymbolMapSpec
) -> dict:
    """Records-derived slice of the iteration metrics; pure and replayable."""
    regs: list[float] = []
    moved = 0
    adjacent = 0
    steps = 0
    disagreements: list[float] = []
    colors = None
    for record in records:
        states = _record_states(record, grid)
        if grid.num_colors and colors is None:
            colors = gridworld.color_bit_array(states[0])
        stacked = np.stack([gridworld.positions_array(s) for s in states])
        regs.extend(batch_regularity(stacked, map_spec, colors).tolist())
        for prev, cur in zip(states[:-1], states[1:]):
            steps += 1
            if prev.positions != cur.positions:
                moved += 1
            if _has_adjacent_pair(gridworld.positions_array(cur)):
                adjacent += 1
        disagreements.extend(
            s["disagreement"] for s in record.steps if "disagreement" in s
        )
    return {
        "best_regularity": max(regs),
        "mean_regularity": float(np.mean(regs)),
        "mean_disagreement": float(np.mean(disagreements)) if disagreements else math.nan,
        "moved_step_fraction": moved / steps if steps else 0.0,
        "adjacent_step_fraction": adjacent / steps if steps else 0.0,
    }


@dataclass
class FreePlayResult:
    ensemble: EnsembleModel
    buffer: ReplayBuffer
    metrics: list[IterationMetrics]
    records: list[list[RolloutRecord]]
    checkpoints: list[Path]


def _rollout_transitions(
    record: RolloutRecord, grid: GridConfig
) -> tuple[np.ndarray, np.ndarray]:
    inputs, targets = [], []
    prev = record.initial_state
    for step in record.steps:
        nxt = gridworld.from_json_dict(grid, step["state"])
        inp, tgt = models.transition_pair(prev, np.asarray(step["action"]), nxt)
        inputs.append(inp)
        targets.append(tgt)
        prev = nxt
    return np.stack(inputs), np.stack(targets)


def run_free_play(
    config: FreePlayConfig,
    seed: int,
    workers: int = 1,
    checkpoint_dir: Path | str | None = None,
) -> FreePlayResult:
    grid = config.grid
    ensemble = EnsembleModel(grid, config.ensemble)
    planning_model = GroundTruthModel(grid) if config.plan_with_ground_truth else ensemble
    buffer = ReplayBuffer(ensemble.input_dim, ensemble.output_dim)
    colors = None
    if grid.num_colors:
        colors = gridworld.color_bit_array(gridworld.reset(grid, substream(seed, "palette")))
    objective = IntrinsicObjective(
        config.intrinsic,
        ensemble=None if config.plan_with_ground_truth else ensemble,
        colors=colors,
    )
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    metrics: list[IterationMetrics] = []
    all_records: list[list[RolloutRecord]] = []
    checkpoints: list[Path] = []

    def _checkpoint(tag: str) -> None:
        if checkpoint_dir is None:
            return
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        path = checkpoint_dir / f"ensemble_{tag}.bin"
        ensemble.save(path)
        checkpoints.append(path)

    for it in range(config.iterations):
        try:
            iteration_records = []
            for r in range(config.rollouts_per_iter):
                state0 = gridworld.reset(grid, substream(seed, "reset", it, r))
                pcfg = replace(config.planner, seed=child_seed(seed, "plan", it, r))
                record = planner_mod.mpc_rollout(
                    planning_model, state0, pcfg, objective, config.episode_length, workers
                )
                iteration_records.append(record)
                buffer.extend(*_rollout_transitions(record, grid))
            losses = []
            for _ in range(config.ensemble.epochs):
                losses = ensemble.train_epoch(buffer)
            derived = metrics_from_records(iteration_records, grid, config.intrinsic.map_spec)
            metrics.append(
                IterationMetrics(
                    iteration=it,
                    member_losses=losses,
                    buffer_size=len(buffer),
                    **derived,
                )
            )
            all_records.append(iteration_records)
            if config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
                _checkpoint(f"{it + 1:04d}")
        except Exception:
            # abort, but leave a usable trail: whatever trained last is saved
            _checkpoint("abort")
            raise
    if config.checkpoint_every and not (config.iterations % config.checkpoint_every == 0):
        _checkpoint("final")
    return FreePlayResult(ensemble, buffer, metrics, all_records, checkpoints)


# --- ground-truth pattern emergence ----------------------------------------


@dataclass
class PatternResult:
    record: RolloutRecord
    regularity: list[float]  # initial state first, then one entry per step

    @property
    def initial_regularity(self) -> float:
        return self.regularity[0]

    @property
    def final_regularity(self) -> float:
        return self.regularity[-1]

    @property
    def best_regularity(self) -> float:
        return max(self.regularity)


def run_pattern(
    grid: GridConfig,
    planner_config: PlannerConfig,
    map_spec: SymbolMapSpec,
    episode_length: int,
    seed: int,
    workers: int = 1,
) -> PatternResult:
    """One long episode of exact-model planning for regularity alone."""
    state0 = gridworld.reset(grid, substream(seed, "reset"))
    colors = gridworld.color_bit_array(state0)
    objective = IntrinsicObjective(
        regularity_only(map_spec), colors=colors if map_spec.include_color else None
    )
    pcfg = replace(planner_config, seed=child_seed(seed, "plan"))
    record = planner_mod.mpc_rollout(
        GroundTruthModel(grid), state0, pcfg, objective, episode_length, workers
    )
    states = _record_states(record, grid)
    stacked = np.stack([gridworld.positions_array(s) for s in states])
    regs = batch_regularity(
        stacked, map_spec, colors if map_spec.include_color else None
    ).tolist()
    return PatternResult(record=record, regularity=regs)


def random_action_finals(
    grid: GridConfig,
    state0: Configuration,
    map_spec: SymbolMapSpec,
    episode_length: int,
    count: int,
    seed: int,
) -> np.ndarray:
    """Final regularity of `count` uniform-random-action episodes from state0."""
    rng = substream(seed, "baseline")
    raw = rng.uniform(-1.0, 1.0, size=(count, episode_length, 2))
    moves = gridworld.threshold_actions(raw)
    trajectories = gridworld.roll_positions(state0, moves)  # (count, H, N, 2)
    finals = trajectories[:, -1, :, :]
    colors = gridworld.color_bit_array(state0) if map_spec.include_color else None
    return batch_regularity(finals, map_spec, colors)


# --- pattern re-creation ----------------------------------------------------


@dataclass(frozen=True)
class RecreationConfig:
    grid: GridConfig
    planner: PlannerConfig
    map_spec: SymbolMapSpec = field(default_factory=_default_map_spec)
    rollouts: int = 15
    episode_length: int = 120
    spawn_gap: int = 2  # minimum Chebyshev distance between spawn and template

    def __post_init__(self) -> None:
        if self.rollouts < 1 or self.episode_length < 1:
            raise ValueError("rollouts and episode_length must be positive")
        if self.spawn_gap < 1:
            raise ValueError("spawn_gap must be >= 1")
        if len(self.map_spec.subspace) != 2:
            raise ValueError("re-creation uses the full coordinate space")


def dominant_symbol(template: list[tuple[int, int]], spec: SymbolMapSpec):
    """Most frequent pairwise relation of the template; ties break lexicographically."""
    views = [EntityView(position=(float(c), float(r))) for c, r in template]
    hist = build_multiset_relational(views, spec)
    best = min(hist.entries.items(), key=lambda kv: (-kv[1], kv[0]))
    return best[0], best[1]


def _spawn_cells(grid: GridConfig, template: list[tuple[int, int]], gap: int) -> list[tuple[int, int]]:
    cells = []
    for col in range(grid.width):
        for row in range(grid.height):
            if all(max(abs(col - tc), abs(row - tr)) >= gap for tc, tr in template):
                cells.append((col, row))
    return cells


def _recreation_state(
    grid: GridConfig,
    template: list[tuple[int, int]],
    spawn: list[tuple[int, int]],
    rng: np.random.Generator,
) -> Configuration:
    n_movable = grid.num_entities - len(template)
    picks = rng.choice(len(spawn), size=n_movable, replace=False)
    positions = tuple(template) + tuple(spawn[i] for i in picks)
    frozen = tuple(i < len(template) for i in range(grid.num_entities))
    return Configuration(
        config=grid,
        positions=positions,
        colors=None,
        frozen=frozen,
        cursor=(len(template), grid.persistency),
        step_count=0,
    )


def _movable_contains(
    state: Configuration, n_template: int, symbol, spec: SymbolMapSpec, needed: int
) -> bool:
    if needed <= 0:
        return True
    movable = state.positions[n_template:]
    if len(movable) < 2:
        return False
    views = [EntityView(position=(float(c), float(r))) for c, r in movable]
    hist = build_multiset_relational(views, spec)
    return hist.entries.get(symbol, 0) >= needed


@dataclass
class RecreationReport:
    template: list[tuple[int, int]]
    symbol: Symbol
    template_multiplicity: int
    required_multiplicity: int
    start_fraction: float
    end_fraction: float
    ever_fraction: float
    rollouts: list[dict]

    def to_dict(self) -> dict:
        return {
            "template": [list(t) for t in self.template],
            "dominant_symbol": {"tag": self.symbol.tag, "values": list(self.symbol.values)},
            "template_multiplicity": self.template_multiplicity,
            "required_multiplicity": self.required_multiplicity,
            "recreated_fraction": self.end_fraction,  # headline: judged on end states
            "start_fraction": self.start_fraction,
            "ever_fraction": self.ever_fraction,
            "rollouts": self.rollouts,
        }


def run_recreation(
    config: RecreationConfig,
    template: list[tuple[int, int]],
    seed: int,
    workers: int = 1,
) -> RecreationReport:
    grid = config.grid
    if len(template) < 2:
        raise ValueError("template too small")
    if len(template) >= grid.num_entities:
        raise ValueError("no movable entities left beside the template")
    if len(set(template)) != len(template):
        raise ValueError("template positions overlap")
    for col, row in template:
        if not (0 <= col < grid.width and 0 <= row < grid.height):
            raise ValueError("template outside the grid")
    spawn = _spawn_cells(grid, template, config.spawn_gap)
    n_movable = grid.num_entities - len(template)
    if len(spawn) < n_movable:
        raise ValueError("template overlaps the movable spawn region")

    symbol, multiplicity = dominant_symbol(template, config.map_spec)
    needed = multiplicity - 1
    model = GroundTruthModel(grid)
    objective = IntrinsicObjective(regularity_only(config.map_spec))

    per_rollout = []
    start_hits = end_hits = ever_hits = 0
    for k in range(config.rollouts):
        state0 = _recreation_state(grid, template, spawn, substream(seed, "spawn", k))
        pcfg = replace(config.planner, seed=child_seed(seed, "plan", k))
        record = planner_mod.mpc_rollout(
            model, state0, pcfg, objective, config.episode_length, workers
        )
        states = _record_states(record, grid)
        hits = [
            _movable_contains(s, len(template), symbol, config.map_spec, needed)
            for s in states
        ]
        start_hits += hits[0]
        end_hits += hits[-1]
        ever_hits += any(hits)
        per_rollout.append(
            {
                "rollout": k,
                "start": bool(hits[0]),
                "end": bool(hits[-1]),
                "ever": bool(any(hits)),
                "final_state": gridworld.to_json_dict(states[-1]),
            }
        )
    n = config.rollouts
    return RecreationReport(
        template=list(template),
        symbol=symbol,
        template_multiplicity=multiplicity,
        required_multiplicity=needed,
        start_fraction=start_hits / n,
        end_fraction=end_hits / n,
        ever_fraction=ever_hits / n,
        rollouts=per_rollout,
    )
