"""Exhaustive optimum search checked against the loop-based reference."""

import itertools
import math

import numpy as np
import pytest

import bruteforce
from regplay.oracle import MAX_ENTITIES, MAX_SIDE, OracleBudgetError, enumerate_optimum
from regplay.regularity import MapVariant, SymbolMapSpec

OPTIMUM_4X4_3 = -0.636514168294813


def reference_search(width, height, n, variant, bin_size=1.0):
    """Same enumeration order as the oracle, reward from bruteforce.py."""
    cells = [(col, row) for row in range(height) for col in range(width)]
    spec = bruteforce.make_spec(variant, bin_size=bin_size)
    best = -math.inf
    argmax = []
    for combo in itertools.combinations(cells, n):
        r = bruteforce.reward([(float(c), float(r_)) for c, r_ in combo], spec)
        if r > best + 1e-12:
            best, argmax = r, [combo]
        elif r >= best - 1e-12:
            argmax.append(combo)
    return best, argmax


@pytest.mark.parametrize(
    "variant,member",
    [
        (MapVariant.ABS_RELATIVE_POSITION, "abs_relative_position"),
        (MapVariant.RELATIVE_POSITION, "relative_position"),
        (MapVariant.EUCLIDEAN_DISTANCE, "euclidean_distance"),
    ],
)
def test_oracle_agrees_with_loop_reference(variant, member):
    got = enumerate_optimum(3, 4, 3, SymbolMapSpec(variant=variant))
    best, argmax = reference_search(3, 4, 3, member)
    assert got.optimum == pytest.approx(best, abs=1e-12)
    assert set(got.argmax) == set(argmax)
    assert got.total_configurations == math.comb(12, 3)


def test_oracle_respects_bin_size():
    spec = SymbolMapSpec(variant=MapVariant.EUCLIDEAN_DISTANCE, bin_size=2.0)
    got = enumerate_optimum(4, 4, 3, spec)
    best, _ = reference_search(4, 4, 3, "euclidean_distance", bin_size=2.0)
    assert got.optimum == pytest.approx(best, abs=1e-12)
    # coarse bins merge distances 1..3: three entities can share one symbol
    assert got.optimum == 0.0


def test_pinned_optimum_three_entities_unordered_offsets():
    spec = SymbolMapSpec(variant=MapVariant.ABS_RELATIVE_POSITION)
    got = enumerate_optimum(4, 4, 3, spec)
    # the outer pair of any 3-entity line doubles the inner offset, so a
    # single repeated symbol is impossible; 2-of-3 agreement is the ceiling
    assert got.optimum == pytest.approx(OPTIMUM_4X4_3, abs=1e-12)
    assert got.optimum == pytest.approx(-(math.log(3) - (2 / 3) * math.log(2)), abs=1e-12)


def test_pinned_optimum_pairs():
    dist = enumerate_optimum(3, 3, 2, SymbolMapSpec(variant=MapVariant.EUCLIDEAN_DISTANCE))
    assert dist.optimum == 0.0  # one pair, one symbol
    relpos = enumerate_optimum(3, 3, 2, SymbolMapSpec(variant=MapVariant.RELATIVE_POSITION))
    assert relpos.optimum == pytest.approx(-math.log(2), abs=1e-12)  # (d) and (-d)
    assert relpos.total_configurations == math.comb(9, 2)


def test_every_champion_scores_the_optimum():
    spec = SymbolMapSpec(variant=MapVariant.ABS_RELATIVE_POSITION)
    got = enumerate_optimum(4, 4, 4, spec)
    from regplay.regularity import batch_regularity

    stacked = np.array(got.argmax, dtype=np.float64)
    rewards = batch_regularity(stacked, spec)
    assert np.all(rewards >= got.optimum - 1e-12)
    assert len(set(got.argmax)) == len(got.argmax)


def test_budget_refusal_reports_placement_count():
    spec = SymbolMapSpec(variant=MapVariant.ABS_RELATIVE_POSITION)
    with pytest.raises(OracleBudgetError) as err:
        enumerate_optimum(MAX_SIDE + 1, MAX_SIDE, 3, spec)
    assert err.value.refused_count == math.comb(7 * 6, 3)
    with pytest.raises(OracleBudgetError) as err:
        enumerate_optimum(MAX_SIDE, MAX_SIDE, MAX_ENTITIES + 1, spec)
    assert err.value.refused_count == math.comb(36, 5)


def test_oracle_rejects_bad_instances():
    spec = SymbolMapSpec(variant=MapVariant.ABS_RELATIVE_POSITION)
    with pytest.raises(ValueError):
        enumerate_optimum(0, 4, 3, spec)
    with pytest.raises(ValueError):
        enumerate_optimum(4, 4, 1, spec)
    colored = SymbolMapSpec(variant=MapVariant.ABS_RELATIVE_POSITION, include_color=True)
    with pytest.raises(ValueError):
        enumerate_optimum(4, 4, 3, colored)


def test_result_serializes_and_repeats():
    spec = SymbolMapSpec(variant=MapVariant.ABS_RELATIVE_POSITION)
    a = enumerate_optimum(4, 4, 3, spec)
    b = enumerate_optimum(4, 4, 3, spec)
    assert a == b
    d = a.to_dict()
    assert d["optimum"] == a.optimum
    assert d["total_configurations"] == math.comb(16, 3)
    assert d["argmax"][0] == [list(p) for p in a.argmax[0]]
