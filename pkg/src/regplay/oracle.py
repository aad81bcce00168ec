"""Exhaustive search for the best possible regularity on small grids.

Enumerates every placement of N indistinguishable entities on distinct
cells and evaluates the reward for each, so planner results can be
compared against the true global optimum.  The instance size is capped
hard; anything larger is refused with the placement count it would have
had to visit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from regplay.regularity import SymbolMapSpec, batch_regularity

MAX_ENTITIES = 4
MAX_SIDE = 6
_CHUNK = 4096
_TIE_TOL = 1e-12


class OracleBudgetError(Exception):
    """Raised for instances beyond the exhaustive-search budget."""

    def __init__(self, refused_count: int):
        self.refused_count = refused_count
        super().__init__(f"oracle instance too large: {refused_count} placements refused")


@dataclass(frozen=True)
class OracleResult:
    optimum: float
    argmax: tuple[tuple[tuple[int, int], ...], ...]  # every optimal placement
    total_configurations: int

    def to_dict(self) -> dict:
        return {
            "optimum": self.optimum,
            "argmax": [[list(p) for p in cfg] for cfg in self.argmax],
            "total_configurations": self.total_configurations,
        }


def enumerate_optimum(
    width: int, height: int, n_entities: int, spec: SymbolMapSpec
) -> OracleResult:
    if width < 1 or height < 1:
        raise ValueError("grid sides must be positive")
    if n_entities < 2:
        raise ValueError("need at least 2 entities for a relational optimum")
    if spec.include_color:
        raise ValueError("the oracle enumerates positions only; drop the color extension")
    total = math.comb(width * height, n_entities)
    if n_entities > MAX_ENTITIES or width > MAX_SIDE or height > MAX_SIDE:
        raise OracleBudgetError(total)

    cells = np.array(
        [(col, row) for row in range(height) for col in range(width)], dtype=np.float64
    )
    combos = itertools.combinations(range(len(cells)), n_entities)
    best = -math.inf
    champions: list[tuple[tuple[int, int], ...]] = []
    while True:
        chunk = list(itertools.islice(combos, _CHUNK))
        if not chunk:
            break
        idx = np.array(chunk, dtype=np.int64)
        rewards = batch_regularity(cells[idx], spec)
        chunk_best = float(rewards.max())
        if chunk_best > best + _TIE_TOL:
            best = chunk_best
            champions = []
        keep = np.flatnonzero(rewards >= best - _TIE_TOL)
        for i in keep:
            placement = tuple(
                (int(cells[j][0]), int(cells[j][1])) for j in idx[i]
            )
            champions.append(placement)
    # a later, strictly better chunk may have left stale near-ties behind
    champions = [
        c
        for c in champions
        if float(
            batch_regularity(np.asarray(c, dtype=np.float64)[None], spec)[0]
        )
        >= best - _TIE_TOL
    ]
    return OracleResult(
        optimum=best, argmax=tuple(champions), total_configurations=total
    )
