import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpfilter.history import (
    FiniteSpace,
    History,
    IntervalSpace,
    JumpRecord,
    TrajectoryE,
    absolute_metric,
    current_value,
    distance,
    from_trajectory,
    join,
    join_trajectory,
    jump_count_before,
    random_history,
    to_trajectory,
    total_jumps,
)

LABELS = ("a", "b", "c")


@st.composite
def histories(draw, labels=LABELS, max_jumps=6):
    initial = draw(st.sampled_from(labels))
    gaps = draw(st.lists(st.floats(1e-3, 2.0), max_size=max_jumps))
    t, current, jumps = 0.0, initial, []
    for g in gaps:
        t += g
        current = draw(st.sampled_from([v for v in labels if v != current]))
        jumps.append((t, current))
    return History(initial, jumps)


class TestHistoryType:
    def test_rejects_nonpositive_time(self):
        with pytest.raises(ValueError):
            History("a", [(0.0, "b")])

    def test_rejects_unordered_times(self):
        with pytest.raises(ValueError):
            History("a", [(2.0, "b"), (1.0, "c")])

    def test_rejects_jump_to_same_value(self):
        with pytest.raises(ValueError):
            History("a", [(1.0, "a")])

    def test_records_are_named(self):
        h = History("a", [(1.0, "b")])
        assert h.jumps[0] == JumpRecord(1.0, "b")
        assert h.times == (1.0,) and h.values == ("a", "b")

    def test_hashable_and_equal_by_value(self):
        assert History("a", [(1.0, "b")]) == History("a", ((1.0, "b"),))
        assert len({History("a"), History("a")}) == 1

    def test_dict_round_trip(self):
        h = History("a", [(1.0, "b"), (2.5, "c")])
        assert History.from_dict(h.to_dict()) == h


class TestTrajectory:
    def test_constant_path(self):
        x = to_trajectory(History("a"))
        assert all(x(t) == "a" for t in (0.0, 1.0, 1e6))

    def test_one_jump_path(self):
        x = to_trajectory(History("a", [(1.0, "b")]))
        assert x(0.0) == "a" and x(0.999) == "a"
        assert x(1.0) == "b" and x(50.0) == "b"

    def test_from_constant(self):
        assert from_trajectory(TrajectoryE("a")) == History("a")

    def test_from_one_switch(self):
        assert from_trajectory(TrajectoryE("a", [(2.0, "c")])) == History("a", [(2.0, "c")])

    def test_redundant_breakpoints_dropped(self):
        x = TrajectoryE("a", [(1.0, "a"), (2.0, "b"), (3.0, "b")])
        assert from_trajectory(x) == History("a", [(2.0, "b")])

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            TrajectoryE("a")(-1.0)

    @settings(max_examples=200, deadline=None)
    @given(histories())
    def test_round_trip(self, h):
        assert from_trajectory(to_trajectory(h)) == h

    @settings(max_examples=100, deadline=None)
    @given(histories())
    def test_round_trip_pointwise(self, h):
        x = to_trajectory(h)
        grid = np.linspace(0.0, 15.0, 301)
        assert to_trajectory(from_trajectory(x)).sample(grid) == x.sample(grid)


class TestCounting:
    def test_between_jumps(self):
        assert jump_count_before(History("a", [(1.0, "b"), (3.0, "c")]), 2.0) == 1

    def test_strict_at_jump(self):
        assert jump_count_before(History("a", [(1.0, "b")]), 1.0) == 0

    def test_no_jumps(self):
        assert all(jump_count_before(History("a"), t) == 0 for t in (1e-9, 1.0, 1e9))

    def test_rejects_zero_time(self):
        with pytest.raises(ValueError):
            jump_count_before(History("a"), 0.0)

    @settings(max_examples=100, deadline=None)
    @given(histories())
    def test_strict_convention_and_monotone(self, h):
        for n, t in enumerate(h.times, start=1):
            assert jump_count_before(h, t) == n - 1
            assert jump_count_before(h, np.nextafter(t, np.inf)) == n
        grid = np.linspace(1e-6, 15.0, 200)
        counts = [jump_count_before(h, t) for t in grid]
        assert counts == sorted(counts)

    def test_total(self):
        assert total_jumps(History("a")) == 0
        assert total_jumps(History("a", [(1.0, "b"), (3.0, "c")])) == 2

    def test_current_value(self):
        assert current_value(History("a")) == "a"
        assert current_value(History("a", [(1.0, "b")])) == "b"

    @settings(max_examples=100, deadline=None)
    @given(histories())
    def test_current_value_matches_path(self, h):
        assert current_value(h) == to_trajectory(h)(h.last_time + 0.5)


class TestJoin:
    def test_append(self):
        assert join(History("a"), 2.0, "c") == History("a", [(2.0, "c")])

    def test_rejects_earlier_time(self):
        with pytest.raises(ValueError):
            join(History("a", [(1.0, "b")]), 0.5, "c")

    def test_rejects_equal_time(self):
        with pytest.raises(ValueError):
            join(History("a", [(1.0, "b")]), 1.0, "c")

    @settings(max_examples=100, deadline=None)
    @given(histories(), st.floats(1e-3, 3.0), st.sampled_from(LABELS))
    def test_identities(self, h, gap, e):
        if e == current_value(h):
            return
        t = h.last_time + gap
        g = join(h, t, e)
        assert total_jumps(g) == total_jumps(h) + 1
        assert current_value(g) == e
        x, y = to_trajectory(h), to_trajectory(g)
        grid = np.linspace(0.0, t + 2.0, 200)
        assert [y(s) for s in grid if s < t] == [x(s) for s in grid if s < t]
        assert all(y(s) == e for s in grid if s >= t)
        # the commuting square between history joins and path joins
        assert to_trajectory(g) == join_trajectory(to_trajectory(h), t, e)

    def test_trajectory_join_mirrors(self):
        assert join_trajectory(TrajectoryE("a"), 2.0, "c") == to_trajectory(History("a", [(2.0, "c")]))
        with pytest.raises(ValueError):
            join_trajectory(TrajectoryE("a", [(1.0, "b")]), 0.5, "c")
        x = join_trajectory(TrajectoryE("a", [(1.0, "b")]), 2.0, "c")
        assert x(1.5) == "b" and x(2.0) == "c"


class TestDistance:
    def test_self(self):
        h = History("a", [(1.0, "b")])
        assert distance(h, h) == 0.0

    def test_different_counts(self):
        assert distance(History("a"), History("a", [(1.0, "b")])) == 1.0

    def test_shifted_time(self):
        assert distance(History("a", [(1.0, "b")]), History("a", [(2.0, "b")])) == pytest.approx(0.0625, abs=1e-15)

    def test_interval_metric(self):
        space = IntervalSpace(0.0, 1.0)
        d = distance(History(0.2), History(0.5), space.metric)
        assert d == pytest.approx(0.25 * 0.3 / 1.3)
        assert absolute_metric(0.2, 0.5) == pytest.approx(0.3)

    def test_metric_axioms_on_random_triples(self):
        rng = np.random.default_rng(0)
        hs = [random_history(rng, LABELS, max_jumps=2, horizon=2.0) for _ in range(60)]
        for h, g in itertools.combinations(hs[:30], 2):
            d = distance(h, g)
            assert 0.0 <= d <= 1.0
            assert d == distance(g, h)
            assert (d == 0.0) == (h == g)
        for h, g, k in itertools.combinations(hs[:25], 3):
            assert distance(h, k) <= distance(h, g) + distance(g, k) + 1e-12


class TestSpaces:
    def test_finite_space(self):
        s = FiniteSpace(("a", "b"))
        assert s.is_finite and "a" in s and "z" not in s
        assert s.index("b") == 1
        assert s.metric("a", "a") == 0.0 and s.metric("a", "b") == 1.0

    def test_finite_space_rejects_duplicates(self):
        with pytest.raises(ValueError):
            FiniteSpace(("a", "a"))
