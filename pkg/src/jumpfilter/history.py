"""Signal histories and piecewise-constant trajectories.

A :class:`History` stores the initial value of a pure-jump signal and the
finite, strictly ordered list of its jumps ``(t_1, e_1), (t_2, e_2), ...``.
The implicit tail of never-happening jumps is not stored. A
:class:`TrajectoryE` is the same data read as a right-continuous
piecewise-constant path; :func:`to_trajectory` and :func:`from_trajectory`
convert between the two.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Any, Callable, Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "JumpRecord",
    "History",
    "TrajectoryE",
    "FiniteSpace",
    "IntervalSpace",
    "RealLine",
    "discrete_metric",
    "absolute_metric",
    "to_trajectory",
    "from_trajectory",
    "jump_count_before",
    "total_jumps",
    "current_value",
    "join",
    "join_trajectory",
    "distance",
    "random_history",
]


class JumpRecord(NamedTuple):
    time: float
    value: Any


def _check_jumps(initial, jumps, *, allow_repeats):
    prev_t = 0.0
    prev_v = initial
    for t, v in jumps:
        if not t > prev_t:
            raise ValueError(
                f"jump times must be strictly increasing and positive, got {t!r} after {prev_t!r}"
            )
        if math.isinf(t) or math.isnan(t):
            raise ValueError(f"jump time must be finite, got {t!r}")
        if not allow_repeats and v == prev_v:
            raise ValueError(f"jump at t={t!r} does not change the value {v!r}")
        prev_t, prev_v = t, v


@dataclass(frozen=True)
class History:
    """Initial value plus the ordered list of jumps of a signal path."""

    initial: Any
    jumps: tuple = ()

    def __post_init__(self):
        jumps = tuple(JumpRecord(float(t), v) for t, v in self.jumps)
        _check_jumps(self.initial, jumps, allow_repeats=False)
        object.__setattr__(self, "jumps", jumps)

    @property
    def times(self) -> tuple:
        return tuple(j.time for j in self.jumps)

    @property
    def values(self) -> tuple:
        return (self.initial,) + tuple(j.value for j in self.jumps)

    @property
    def last_time(self) -> float:
        return self.jumps[-1].time if self.jumps else 0.0

    def __len__(self):
        return len(self.jumps)

    def to_dict(self) -> dict:
        return {"initial": _plain(self.initial), "jumps": [[j.time, _plain(j.value)] for j in self.jumps]}

    @classmethod
    def from_dict(cls, d: dict) -> "History":
        return cls(d["initial"], tuple((t, v) for t, v in d.get("jumps", ())))


@dataclass(frozen=True)
class TrajectoryE:
    """Right-continuous piecewise-constant path ``x(t)`` on ``[0, inf)``.

    Breakpoints need not change the value; :func:`from_trajectory` drops the
    ones that do not.
    """

    initial: Any
    breakpoints: tuple = ()

    def __post_init__(self):
        bps = tuple(JumpRecord(float(t), v) for t, v in self.breakpoints)
        _check_jumps(self.initial, bps, allow_repeats=True)
        object.__setattr__(self, "breakpoints", bps)

    def __call__(self, t: float):
        if t < 0:
            raise ValueError("trajectories are defined on [0, inf)")
        times = [b.time for b in self.breakpoints]
        k = bisect.bisect_right(times, t)
        return self.initial if k == 0 else self.breakpoints[k - 1].value

    def sample(self, grid: Iterable[float]) -> list:
        return [self(t) for t in grid]


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


# -- label spaces ------------------------------------------------------------


def discrete_metric(a, b) -> float:
    return 0.0 if a == b else 1.0


def absolute_metric(a, b) -> float:
    return abs(float(a) - float(b))


@dataclass(frozen=True)
class FiniteSpace:
    """Finite label set with the discrete metric."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(_plain(v) for v in self.labels)
        if len(labels) == 0:
            raise ValueError("a finite space needs at least one label")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in {labels!r}")
        object.__setattr__(self, "labels", labels)

    is_finite = True

    def metric(self, a, b) -> float:
        return discrete_metric(a, b)

    def index(self, label) -> int:
        return self.labels.index(label)

    def __contains__(self, label) -> bool:
        return label in self.labels

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class IntervalSpace:
    """Bounded interval ``[low, high]`` of the real line, absolute-value metric."""

    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("interval needs low < high")

    is_finite = False

    def metric(self, a, b) -> float:
        return absolute_metric(a, b)

    def __contains__(self, x) -> bool:
        return self.low <= float(x) <= self.high


@dataclass(frozen=True)
class RealLine:
    """The real line as a mark space (sizes of observation jumps)."""

    is_finite = False

    def metric(self, a, b) -> float:
        return absolute_metric(a, b)

    def __contains__(self, x) -> bool:
        return math.isfinite(float(x))


# -- the maps between H and piecewise-constant paths --------------------------


def to_trajectory(h: History) -> TrajectoryE:
    return TrajectoryE(h.initial, h.jumps)


def from_trajectory(x: TrajectoryE) -> History:
    jumps = []
    current = x.initial
    for t, v in x.breakpoints:
        if v != current:
            jumps.append((t, v))
            current = v
    return History(x.initial, tuple(jumps))


def jump_count_before(h: History, t: float) -> int:
    """Number of jumps strictly before ``t``."""
    if not t > 0:
        raise ValueError("t must be positive")
    return bisect.bisect_left(h.times, t)


def total_jumps(h: History) -> int:
    return len(h.jumps)


def current_value(h: History):
    return h.jumps[-1].value if h.jumps else h.initial


def join(h: History, t: float, e) -> History:
    """Append a jump to ``e`` at time ``t``; ``t`` must follow the last jump."""
    if not t > h.last_time:
        raise ValueError(f"cannot join at t={t!r}: last jump of the history is at {h.last_time!r}")
    return History(h.initial, h.jumps + (JumpRecord(float(t), e),))


def join_trajectory(x: TrajectoryE, t: float, e) -> TrajectoryE:
    """Keep ``x`` on ``[0, t)`` and hold ``e`` from ``t`` on."""
    last = x.breakpoints[-1].time if x.breakpoints else 0.0
    if not t > last:
        raise ValueError(f"cannot join at t={t!r}: last breakpoint is at {last!r}")
    return TrajectoryE(x.initial, x.breakpoints + (JumpRecord(float(t), e),))


def _rho(x: float) -> float:
    return x / (1.0 + x)


def distance(h: History, g: History, metric: Callable[[Any, Any], float] = discrete_metric) -> float:
    """Metric on histories; 1 whenever the jump counts differ."""
    if total_jumps(h) != total_jumps(g):
        return 1.0
    total = _rho(metric(h.initial, g.initial)) / 4.0
    for n, (a, b) in enumerate(zip(h.jumps, g.jumps), start=1):
        total += (_rho(abs(a.time - b.time)) + _rho(metric(a.value, b.value))) / 2.0 ** (n + 2)
    return total


def random_history(
    rng: np.random.Generator,
    labels: Sequence,
    *,
    max_jumps: int = 6,
    horizon: float = 5.0,
) -> History:
    """Draw a valid history with labels from ``labels`` (test and probe helper)."""
    if len(labels) < 2:
        return History(labels[0])
    n = int(rng.integers(0, max_jumps + 1))
    times = np.sort(rng.uniform(0.0, horizon, size=n))
    times = np.unique(times[times > 0])
    current = labels[int(rng.integers(len(labels)))]
    initial = current
    jumps = []
    for t in times:
        choices = [v for v in labels if v != current]
        current = choices[int(rng.integers(len(choices)))]
        jumps.append((float(t), current))
    return History(initial, tuple(jumps))
