import math

import pytest
from hypothesis import assume, given, settings, strategies as st

from flexgrid.errors import InfeasibleError
from flexgrid.grid_model import (
    GridKind,
    GridSpec,
    anchored_spec,
    build_ladder,
    first_spacing_violation,
    initial_allocation,
    validate_spacing,
)

ED, ER, FLEX = GridKind.EQUAL_DISTANCE, GridKind.EQUAL_RATIO, GridKind.FLEXIBLE


def ed_example():
    return build_ladder(GridSpec(ED, 130.0, 70.0, 3, 3, 100.0))


class TestExamples:
    def test_equal_ratio_lines(self):
        lad = build_ladder(GridSpec(ER, 121.0, 100.0 / 1.21, 2, 2, 100.0))
        assert lad.lines[3] == pytest.approx(110.0, rel=1e-12)
        assert lad.lines[4] == 121.0
        assert lad.ratio == pytest.approx(1.1, rel=1e-12)

    def test_equal_distance_lines(self):
        lad = ed_example()
        assert lad.spacing == pytest.approx(10.0, rel=1e-12)
        assert lad.lines == pytest.approx((70, 80, 90, 100, 110, 120, 130), rel=1e-12)
        assert lad.anchor_index == 3 and lad.anchor == 100.0

    def test_flexible_lines(self):
        lad = build_ladder(GridSpec(FLEX, 121.0, 100.0 / 1.21, 2, 2, 100.0))
        assert lad.lines == pytest.approx((100 / 1.21, 100 / 1.1, 100.0, 111.0, 121.0), rel=1e-12)
        assert lad.upper_ratio == pytest.approx(10 / 11, rel=1e-12)
        assert lad.lower_ratio == pytest.approx(1.1, rel=1e-12)

    def test_flexible_geometric_fallback(self):
        lad = build_ladder(GridSpec(FLEX, 121.0, 100.0 / 1.21, 2, 2, 100.0, upper_mode="geometric"))
        assert lad.lines[3:] == pytest.approx((110.0, 121.0), rel=1e-12)

    def test_allocation_zero_fee(self):
        alloc = initial_allocation(ed_example(), 10000.0)
        assert alloc.unit_volume == pytest.approx(10000 / 540, rel=1e-12)
        assert alloc.initial_spot_value == pytest.approx(5555.5556, abs=1e-4)
        assert alloc.initial_cash == pytest.approx(4444.4444, abs=1e-4)
        assert alloc.initial_spot_value + alloc.initial_cash == pytest.approx(10000.0, rel=1e-15)

    def test_allocation_with_fee(self):
        alloc = initial_allocation(ed_example(), 10000.0, 0.01)
        assert alloc.unit_volume == pytest.approx(10000 / (540 * 1.01), rel=1e-12)
        assert alloc.unit_volume == pytest.approx(18.3352, abs=1e-4)

    def test_reserve_matches_arithmetic_series(self):
        lad = ed_example()
        alloc = initial_allocation(lad, 10000.0)
        arithmetic = ((100 - 10) + 70) / 2 * 3
        assert alloc.initial_cash == pytest.approx(alloc.unit_volume * arithmetic, rel=1e-12)

    def test_spacing_examples(self):
        assert first_spacing_violation([100.0, 110.0], 0.05) is None
        assert first_spacing_violation([100.0, 101.0], 0.05) == 0
        ok, pair = validate_spacing(ed_example(), 0.0)
        assert ok and pair is None
        ok, pair = validate_spacing(build_ladder(GridSpec(ED, 101.0, 99.0, 1, 1, 100.0)), 0.05)
        assert not ok and pair == (99.0, 100.0)


class TestErrors:
    def test_degenerate_bounds(self):
        with pytest.raises(InfeasibleError):
            GridSpec(FLEX, 100.0, 90.0, 2, 2, 100.0)
        with pytest.raises(InfeasibleError):
            GridSpec(FLEX, 110.0, 100.0, 2, 2, 100.0)

    def test_zero_counts(self):
        with pytest.raises(InfeasibleError):
            GridSpec(FLEX, 110.0, 90.0, 0, 2, 100.0)

    def test_anchor_off_line(self):
        with pytest.raises(InfeasibleError):
            build_ladder(GridSpec(ED, 130.0, 70.0, 2, 4, 100.0))
        with pytest.raises(InfeasibleError):
            build_ladder(GridSpec(ER, 130.0, 70.0, 2, 2, 100.0))

    def test_capital_and_fee_checked(self):
        with pytest.raises(ValueError):
            initial_allocation(ed_example(), 0.0)
        with pytest.raises(ValueError):
            initial_allocation(ed_example(), 100.0, 1.0)

    def test_spec_round_trip(self):
        spec = GridSpec(FLEX, 121.0, 80.0, 3, 4, 100.0)
        assert GridSpec.from_dict(spec.to_dict()) == spec


anchors = st.floats(0.5, 5000.0)
upper_mults = st.floats(1.01, 2.0)
lower_mults = st.floats(0.3, 0.99)
counts = st.integers(1, 60)


def random_spec(kind, anchor, um, lm, nu, nl):
    if kind is FLEX:
        return GridSpec(FLEX, anchor * um, anchor * lm, nu, nl, anchor)
    try:
        return anchored_spec(kind, anchor, anchor * um, anchor * lm, max(nu + nl, 2))
    except InfeasibleError:
        # an equal-distance ladder this coarse would cross zero
        assume(False)


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b))


@settings(max_examples=200)
@given(st.sampled_from(list(GridKind)), anchors, upper_mults, lower_mults, counts, counts)
def test_ladder_invariants(kind, anchor, um, lm, nu, nl):
    spec = random_spec(kind, anchor, um, lm, nu, nl)
    lad = build_ladder(spec)
    lines = lad.lines
    assert len(lines) == spec.n + 1
    assert all(b > a for a, b in zip(lines, lines[1:]))
    assert rel(lines[0], spec.lower) < 1e-9 and rel(lines[-1], spec.upper) < 1e-9
    assert lines[lad.anchor_index] == spec.anchor
    gaps = [b - a for a, b in zip(lines, lines[1:])]
    if kind is ED:
        assert max(rel(g, lad.spacing) for g in gaps) < 1e-9
    elif kind is ER:
        assert max(rel(b / a, lad.ratio) for a, b in zip(lines, lines[1:])) < 1e-9
    else:
        k = lad.anchor_index
        assert 0 < lad.upper_ratio < 1 < lad.lower_ratio
        low = lines[: k + 1]
        assert max(rel(b / a, lad.lower_ratio) for a, b in zip(low, low[1:])) < 1e-9
        up = gaps[k:]
        assert rel(math.fsum(up), spec.upper - spec.anchor) < 1e-9
        if len(up) > 1:
            assert all(b < a for a, b in zip(up, up[1:]))
            assert max(rel(b / a, lad.upper_ratio) for a, b in zip(up, up[1:])) < 1e-7
        below = gaps[:k]
        assert all(b > a for a, b in zip(below, below[1:]))


@settings(max_examples=200)
@given(st.sampled_from(list(GridKind)), anchors, upper_mults, lower_mults, counts, counts, st.floats(0.0, 0.05))
def test_allocation_invariants(kind, anchor, um, lm, nu, nl, fee):
    lad = build_ladder(random_spec(kind, anchor, um, lm, nu, nl))
    alloc = initial_allocation(lad, 10000.0, fee)
    assert rel(alloc.initial_spot_value + alloc.initial_cash + alloc.initial_fee, 10000.0) < 1e-12
    # the reserve covers one fill at each lower line, fees included
    cash = alloc.initial_cash
    for line in lad.lower_buy_lines:
        cash -= alloc.unit_volume * line * (1 + fee)
    assert cash >= -1e-9 * 10000.0
    if fee == 0:
        assert rel(alloc.initial_cash, alloc.unit_volume * math.fsum(lad.lower_buy_lines)) < 1e-9


@given(st.lists(st.floats(1.0, 1e4), min_size=2, max_size=30, unique=True), st.floats(0.0, 0.2))
def test_spacing_check_matches_definition(values, fee):
    lines = sorted(values)
    assume(all(b > a for a, b in zip(lines, lines[1:])))
    expected = next((i for i in range(len(lines) - 1) if not lines[i + 1] - lines[i] > fee * lines[i + 1]), None)
    assert first_spacing_violation(lines, fee) == expected
    assert first_spacing_violation(lines, 0.0) is None


@settings(max_examples=100)
@given(st.sampled_from([ED, ER]), anchors, upper_mults, lower_mults, st.integers(2, 100))
def test_anchored_spec_lands_on_line(kind, anchor, um, lm, n):
    # ladder construction re-checks that the anchor sits on a line
    spec = random_spec(kind, anchor, um, lm, n - 1, 1)
    assert spec.n == n and spec.upper == anchor * um
    assert spec.lower < anchor
    build_ladder(spec)
