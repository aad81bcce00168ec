"""Discrete 2D grid of individually actuated entities.

One entity at a time is under control: the actuation cursor stays on an
entity for `persistency` consecutive steps, then cycles to the next
non-frozen entity.  Continuous actions in [-1,1]^2 are thresholded at
+-1/3 into cell moves {-1,0,+1}^2; a move into an occupied cell or off
the grid is a no-op.  Frozen entities count for rewards but never move.

The transition function is pure: `step` returns a new Configuration.
Batched helpers (`threshold_actions`, `actuated_sequence`,
`roll_positions`) evaluate many imagined trajectories at once and are
property-tested to agree with iterated `step`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from regplay.regularity import EntityView
from regplay.rng import substream

ACTION_THRESHOLD = 1.0 / 3.0


@dataclass(frozen=True)
class GridConfig:
    width: int
    height: int
    num_entities: int
    persistency: int = 10
    num_colors: int = 0  # 0 = uncolored; otherwise >= 2
    frozen: tuple[int, ...] = ()  # entity indices that never actuate
    allow_diagonal: bool = True  # False restricts moves to the 4-neighborhood
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if self.num_entities < 1:
            raise ValueError("need at least one entity")
        if self.num_entities > self.width * self.height:
            raise ValueError("more entities than grid cells")
        if self.persistency < 1:
            raise ValueError("persistency must be >= 1")
        if self.num_colors == 1 or self.num_colors < 0 or self.num_colors > 32:
            raise ValueError("num_colors must be 0 or in 2..32")
        if any(i < 0 or i >= self.num_entities for i in self.frozen):
            raise ValueError("frozen index out of range")
        if len(set(self.frozen)) >= self.num_entities:
            raise ValueError("at least one entity must be movable")

    @property
    def color_bits(self) -> int:
        return 0 if self.num_colors == 0 else max(1, math.ceil(math.log2(self.num_colors)))


@dataclass(frozen=True)
class Configuration:
    """Immutable environment state; carries its GridConfig for bounds."""

    config: GridConfig
    positions: tuple[tuple[int, int], ...]  # (col, row) per entity
    colors: tuple[int, ...] | None  # color index per entity
    frozen: tuple[bool, ...]
    cursor: tuple[int, int]  # (entity index, steps remaining)
    step_count: int = 0


@dataclass(frozen=True)
class GridAction:
    raw: tuple[float, float]

    def __post_init__(self) -> None:
        if len(self.raw) != 2 or not all(math.isfinite(v) for v in self.raw):
            raise ValueError("action must be two finite reals")


def color_bits_of(index: int, bits: int) -> tuple[int, ...]:
    """Binary encoding of a color index, least significant bit first."""
    return tuple((index >> k) & 1 for k in range(bits))


def _first_movable(frozen: Sequence[bool]) -> int:
    for i, f in enumerate(frozen):
        if not f:
            return i
    raise ValueError("all entities frozen")


def reset(config: GridConfig, rng: np.random.Generator | None = None) -> Configuration:
    """Place entities uniformly at random without collision."""
    if rng is None:
        rng = substream(config.seed, "reset")
    cells = rng.choice(config.width * config.height, size=config.num_entities, replace=False)
    positions = tuple((int(c) % config.width, int(c) // config.width) for c in cells)
    colors = None
    if config.num_colors:
        colors = tuple(i % config.num_colors for i in range(config.num_entities))
    frozen = tuple(i in config.frozen for i in range(config.num_entities))
    return Configuration(
        config=config,
        positions=positions,
        colors=colors,
        frozen=frozen,
        cursor=(_first_movable(frozen), config.persistency),
        step_count=0,
    )


def threshold_component(v: float) -> int:
    if v > ACTION_THRESHOLD:
        return 1
    if v < -ACTION_THRESHOLD:
        return -1
    return 0


def threshold_actions(raw: np.ndarray) -> np.ndarray:
    """Vectorized +-1/3 thresholding onto {-1,0,+1}; preserves shape."""
    raw = np.asarray(raw, dtype=np.float64)
    return (raw > ACTION_THRESHOLD).astype(np.int64) - (raw < -ACTION_THRESHOLD).astype(np.int64)


def _advance_cursor(state: Configuration) -> tuple[int, int]:
    idx, remaining = state.cursor
    remaining -= 1
    if remaining > 0:
        return (idx, remaining)
    n = len(state.positions)
    j = idx
    for _ in range(n):
        j = (j + 1) % n
        if not state.frozen[j]:
            return (j, state.config.persistency)
    raise ValueError("all entities frozen")


def step(state: Configuration, action: GridAction | Sequence[float]) -> Configuration:
    """Apply one thresholded move of the actuated entity; pure."""
    raw = action.raw if isinstance(action, GridAction) else tuple(action)
    d = (threshold_component(float(raw[0])), threshold_component(float(raw[1])))
    cfg = state.config
    if not cfg.allow_diagonal and d[0] != 0 and d[1] != 0:
        d = (0, 0)
    idx = state.cursor[0]
    positions = state.positions
    if d != (0, 0) and not state.frozen[idx]:
        tgt = (positions[idx][0] + d[0], positions[idx][1] + d[1])
        inside = 0 <= tgt[0] < cfg.width and 0 <= tgt[1] < cfg.height
        if inside and tgt not in positions:
            positions = positions[:idx] + (tgt,) + positions[idx + 1 :]
    return replace(
        state,
        positions=positions,
        cursor=_advance_cursor(state),
        step_count=state.step_count + 1,
    )


def entity_views(state: Configuration) -> list[EntityView]:
    bits = state.config.color_bits
    views = []
    for i, (c, r) in enumerate(state.positions):
        code = color_bits_of(state.colors[i], bits) if state.colors is not None else None
        views.append(EntityView(position=(float(c), float(r)), color_code=code, frozen=state.frozen[i]))
    return views


def positions_array(state: Configuration) -> np.ndarray:
    return np.asarray(state.positions, dtype=np.float64)


def color_bit_array(state: Configuration) -> np.ndarray | None:
    if state.colors is None:
        return None
    bits = state.config.color_bits
    return np.asarray([color_bits_of(ci, bits) for ci in state.colors], dtype=np.int64)


# ---------------------------------------------------------------------------
# Batched imagined rollouts (exactly mirrors `step`, minus bookkeeping).


def actuated_sequence(state: Configuration, horizon: int) -> np.ndarray:
    """Entity index actuated at each of the next `horizon` steps.

    The cursor advances on every step regardless of the action, so the
    sequence is known ahead of time.
    """
    out = np.empty(horizon, dtype=np.int64)
    cur = state
    for h in range(horizon):
        out[h] = cur.cursor[0]
        cur = replace(cur, cursor=_advance_cursor(cur), step_count=cur.step_count + 1)
    return out


def roll_positions(state: Configuration, moves: np.ndarray) -> np.ndarray:
    """Roll a batch of thresholded move sequences from one start state.

    moves: (P, H, 2) integer deltas in {-1,0,+1}.  Returns (P, H, N, 2)
    integer positions after each step.
    """
    cfg = state.config
    moves = np.asarray(moves, dtype=np.int64)
    if moves.ndim != 3 or moves.shape[2] != 2:
        raise ValueError("moves must be (P, H, 2)")
    nplans, horizon, _ = moves.shape
    n = len(state.positions)
    actuated = actuated_sequence(state, horizon)
    pos = np.broadcast_to(np.asarray(state.positions, dtype=np.int64), (nplans, n, 2)).copy()
    out = np.empty((nplans, horizon, n, 2), dtype=np.int64)
    for h in range(horizon):
        k = int(actuated[h])
        d = moves[:, h, :]
        if not cfg.allow_diagonal:
            diag = (d[:, 0] != 0) & (d[:, 1] != 0)
            d = np.where(diag[:, None], 0, d)
        moving = (d[:, 0] != 0) | (d[:, 1] != 0)
        tgt = pos[:, k, :] + d
        inside = (
            (tgt[:, 0] >= 0) & (tgt[:, 0] < cfg.width) & (tgt[:, 1] >= 0) & (tgt[:, 1] < cfg.height)
        )
        occupied = np.any(np.all(pos == tgt[:, None, :], axis=2), axis=1)
        ok = moving & inside & ~occupied
        pos[ok, k, :] = tgt[ok]
        out[:, h] = pos
    return out


# ---------------------------------------------------------------------------
# Rendering and serialization.


def render_ascii(state: Configuration) -> str:
    """One char per cell: '.' empty, 'o' entity, 'a'..'z' colors, '#' frozen."""
    cfg = state.config
    grid = [["." for _ in range(cfg.width)] for _ in range(cfg.height)]
    for i, (c, r) in enumerate(state.positions):
        if state.frozen[i]:
            ch = "#"
        elif state.colors is not None:
            ch = chr(ord("a") + state.colors[i] % 26)
        else:
            ch = "o"
        grid[r][c] = ch
    return "\n".join("".join(row) for row in grid) + "\n"


_PALETTE = [
    (230, 70, 70),
    (70, 160, 230),
    (90, 200, 90),
    (235, 200, 70),
    (180, 90, 220),
    (80, 210, 200),
    (235, 140, 60),
    (160, 160, 160),
]


def render_ppm(state: Configuration, cell_px: int = 8) -> bytes:
    """Binary P6 image, one `cell_px` square block per grid cell."""
    cfg = state.config
    img = np.zeros((cfg.height * cell_px, cfg.width * cell_px, 3), dtype=np.uint8)
    img[:, :, :] = 16
    for i, (c, r) in enumerate(state.positions):
        if state.frozen[i]:
            color = (128, 128, 128)
        elif state.colors is not None:
            color = _PALETTE[state.colors[i] % len(_PALETTE)]
        else:
            color = (240, 240, 240)
        img[r * cell_px : (r + 1) * cell_px, c * cell_px : (c + 1) * cell_px] = color
    header = f"P6\n{cfg.width * cell_px} {cfg.height * cell_px}\n255\n".encode("ascii")
    return header + img.tobytes()


def to_json_dict(state: Configuration) -> dict:
    return {
        "positions": [list(p) for p in state.positions],
        "colors": list(state.colors) if state.colors is not None else None,
        "frozen": list(state.frozen),
        "cursor": list(state.cursor),
        "step": state.step_count,
    }


def from_json_dict(config: GridConfig, data: dict) -> Configuration:
    colors = data.get("colors")
    return Configuration(
        config=config,
        positions=tuple((int(c), int(r)) for c, r in data["positions"]),
        colors=tuple(int(c) for c in colors) if colors is not None else None,
        frozen=tuple(bool(f) for f in data["frozen"]),
        cursor=(int(data["cursor"][0]), int(data["cursor"][1])),
        step_count=int(data["step"]),
    )
