"""Simulation of the signal/observation pair on a uniform grid.

The observation is advanced by Euler-Maruyama between events. Inaccessible
jumps come from thinning a pre-drawn Poisson proposal stream; predictable
jumps come from the clocks. Rates, kernels, drift and volatility are frozen
at a *reference point*: the latest grid node, signal jump, observed jump or
clock firing. Unobserved observation-mark events and rejected proposals do
not move the reference. :meth:`SystemPath.segments` replays the reference
points so that compensators can be integrated on exactly the same partition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .history import History, current_value, join
from .model import ModelSpec, PredictableClock

__all__ = [
    "SimulationError",
    "EventRecord",
    "ObservedEvent",
    "SystemPath",
    "ObservationRecord",
    "make_grid",
    "simulate",
    "next_inaccessible_time",
    "detect_clock_event",
    "first_crossing",
    "observe",
    "spawn_seeds",
    "STREAMS",
]

STREAMS = ("m_inaccessible", "m_predictable", "n_inaccessible", "n_predictable")
DEFAULT_MAX_CLOCK_EVENTS = 100_000


class SimulationError(RuntimeError):
    """Simulation could not proceed (majorant violated, clock cap, bad user function)."""


class EventRecord(NamedTuple):
    time: float
    stream: str
    mark: object
    obs_jump: float
    y_minus: float


class ObservedEvent(NamedTuple):
    """An event visible in the observation filtration.

    ``kind`` is ``"jump"`` for an inaccessible jump of Y, ``"clock_m"`` or
    ``"clock_n"`` for a firing of the signal or observation clock. ``size``
    is the observed jump of Y (possibly 0 at clock times).
    """

    time: float
    kind: str
    y_minus: float
    size: float


def make_grid(horizon: float, dt: float) -> np.ndarray:
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ValueError(f"horizon must be positive and finite, got {horizon!r}")
    if not (dt > 0 and dt <= horizon):
        raise ValueError(f"dt must satisfy 0 < dt <= horizon, got {dt!r}")
    n = max(1, int(round(horizon / dt)))
    return np.linspace(0.0, horizon, n + 1)


def cell_of(grid: np.ndarray, t: float) -> int:
    """Index k with grid[k] < t <= grid[k+1]."""
    return int(np.searchsorted(grid, t, side="left")) - 1


@dataclass(frozen=True)
class ObservationRecord:
    """What the filter may read: observation samples, observed jumps and clock firings."""

    grid: np.ndarray
    y_samples: np.ndarray
    events: tuple = ()

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def segments(self):
        """Yield ``(cell, t0, t1, y0, y1_minus, event)`` in time order.

        Each tuple is a stretch of continuous observation ending either at an
        event (``event`` set, ``y1_minus`` its left limit) or at a grid node
        (``event`` None). Zero-length stretches are skipped.
        """
        grid, ys = self.grid, self.y_samples
        by_cell: dict = {}
        for ev in self.events:
            by_cell.setdefault(cell_of(grid, ev.time), []).append(ev)
        for k in range(len(grid) - 1):
            s, y = float(grid[k]), float(ys[k])
            for ev in by_cell.get(k, ()):
                yield k, s, ev.time, y, ev.y_minus, ev
                s, y = ev.time, ev.y_minus + ev.size
            t1 = float(grid[k + 1])
            if t1 > s:
                yield k, s, t1, y, float(ys[k + 1]), None

    def coarsen(self, factor: int) -> "ObservationRecord":
        n = len(self.grid) - 1
        if factor < 1 or n % factor:
            raise ValueError(f"cannot coarsen {n} cells by {factor}")
        return ObservationRecord(self.grid[::factor].copy(), self.y_samples[::factor].copy(), self.events)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "y_samples": self.y_samples.tolist(),
            "events": [ev._asdict() for ev in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationRecord":
        events = tuple(
            ObservedEvent(float(e["time"]), str(e["kind"]), float(e["y_minus"]), float(e["size"]))
            for e in d.get("events", ())
        )
        return cls(np.asarray(d["grid"], dtype=float), np.asarray(d["y_samples"], dtype=float), events)


@dataclass(frozen=True)
class SystemPath:
    """One simulated realization, latent signal included."""

    grid: np.ndarray
    latent_history: History
    y_samples: np.ndarray
    w_increments: np.ndarray
    events: tuple
    seed: object
    clock_events: int = 0

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def history_at(self, t: float, *, left: bool = True) -> History:
        """Signal history up to ``t`` (jumps strictly before ``t`` if ``left``)."""
        h = self.latent_history
        keep = tuple(j for j in h.jumps if (j.time < t if left else j.time <= t))
        return History(h.initial, keep)

    def segments(self):
        """Yield the reference partition ``(s0, s1, h, y_ref)``.

        ``h`` and ``y_ref`` are the signal history and observation value in
        force on ``(s0, s1]``; boundaries are grid nodes, signal jumps,
        observed jumps and clock firings.
        """
        grid, ys = self.grid, self.y_samples
        by_cell: dict = {}
        for ev in self.events:
            if ev.stream == "n_inaccessible" and ev.obs_jump == 0.0:
                continue
            by_cell.setdefault(cell_of(grid, ev.time), []).append(ev)
        init = self.latent_history.initial
        jumps = self.latent_history.jumps
        h = History(init)
        n_done = 0
        for k in range(len(grid) - 1):
            s, y = float(grid[k]), float(ys[k])
            for ev in by_cell.get(k, ()):
                if ev.time > s:
                    yield s, ev.time, h, y
                if ev.stream.startswith("m_"):
                    n_done += 1
                    h = History(init, jumps[:n_done])
                s, y = ev.time, ev.y_minus + ev.obs_jump
            t1 = float(grid[k + 1])
            if t1 > s:
                yield s, t1, h, y

    def to_dict(self) -> dict:
        def plain(v):
            return v.item() if isinstance(v, np.generic) else v

        return {
            "seed": self.seed,
            "grid": self.grid.tolist(),
            "latent_history": self.latent_history.to_dict(),
            "y_samples": self.y_samples.tolist(),
            "w_increments": self.w_increments.tolist(),
            "clock_events": self.clock_events,
            "events": [
                {"time": e.time, "stream": e.stream, "mark": plain(e.mark), "obs_jump": e.obs_jump, "y_minus": e.y_minus}
                for e in self.events
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemPath":
        events = tuple(
            EventRecord(float(e["time"]), e["stream"], e["mark"], float(e["obs_jump"]), float(e["y_minus"]))
            for e in d["events"]
        )
        return cls(
            grid=np.asarray(d["grid"], dtype=float),
            latent_history=History.from_dict(d["latent_history"]),
            y_samples=np.asarray(d["y_samples"], dtype=float),
            w_increments=np.asarray(d["w_increments"], dtype=float),
            events=events,
            seed=d.get("seed"),
            clock_events=int(d.get("clock_events", 0)),
        )


# -- building blocks ----------------------------------------------------------------


def next_inaccessible_time(
    rate: Callable[[float], float],
    bound: float,
    t_from: float,
    rng: np.random.Generator,
    *,
    horizon: float = math.inf,
    max_rejections: int = 1_000_000,
) -> float:
    """First accepted point after ``t_from`` of a thinned Poisson(``bound``) stream.

    Returns ``inf`` when ``bound`` is 0, when the point would fall beyond
    ``horizon``, or after ``max_rejections`` consecutive rejections.
    """
    if bound <= 0:
        return math.inf
    t = t_from
    for _ in range(max_rejections):
        t += rng.exponential(1.0 / bound)
        if t > horizon:
            return math.inf
        r = rate(t)
        if r > bound * (1 + 1e-12) or r < 0:
            raise SimulationError(f"majorant violated: rate {r!r} vs bound {bound!r} at t={t!r}")
        if rng.random() * bound < r:
            return t
    return math.inf


def first_crossing(level: float, direction: str, ys: np.ndarray, start: int = 0) -> int:
    """Index i of the first segment ``(ys[i], ys[i+1])`` with i >= start crossing ``level``.

    Crossings are strict on the left: up means ``ys[i] < level <= ys[i+1]``.
    Returns -1 when there is none.
    """
    a, b = ys[start:-1], ys[start + 1 :]
    if direction == "up":
        hit = (a < level) & (b >= level)
    elif direction == "down":
        hit = (a > level) & (b <= level)
    else:
        hit = ((a < level) & (b >= level)) | ((a > level) & (b <= level))
    if a.size == 0 or not hit.any():
        return -1
    return start + int(np.argmax(hit))


def detect_clock_event(clock: PredictableClock, y_left: float, y_right: float, cell: tuple):
    """Whether ``clock`` fires in the cell ``(t0, t1]``, and when.

    Deterministic clocks fire at their first listed time in the cell.
    Threshold clocks fire where the linear interpolant between the two
    observation values crosses the level.
    """
    t0, t1 = cell
    if clock.kind == "deterministic":
        for t in clock.times:
            if t0 < t <= t1:
                return True, float(t)
        return False, None
    i = first_crossing(clock.level, clock.direction, np.array([y_left, y_right], dtype=float))
    if i < 0:
        return False, None
    theta = (clock.level - y_left) / (y_right - y_left)
    return True, float(t0 + theta * (t1 - t0))


def spawn_seeds(seed, n: int) -> list:
    """Independent child seeds for batch runs."""
    return np.random.SeedSequence(seed).spawn(n)


# -- the simulator -------------------------------------------------------------------


class _Threshold:
    __slots__ = ("stream", "level", "direction", "rearm", "armed", "fired_at")

    def __init__(self, stream, clock):
        self.stream = stream
        self.level = clock.level
        self.direction = clock.direction
        self.rearm = clock.rearm
        self.armed = True
        self.fired_at = -math.inf


def _proposals(rng, bound, horizon):
    if bound <= 0:
        return np.empty(0), np.empty(0)
    n = rng.poisson(bound * horizon)
    times = np.sort(rng.uniform(0.0, horizon, size=n))
    u = rng.random(n)
    keep = times > 0
    return times[keep], u[keep]


def _sample_initial(spec: ModelSpec, rng):
    law = spec.signal.initial_law
    if not law:
        return spec.signal.initial
    labels = list(law)
    p = np.array([law[k] for k in labels], dtype=float)
    return labels[int(np.searchsorted(np.cumsum(p) / p.sum(), rng.random(), side="right"))]


def simulate(
    spec: ModelSpec,
    horizon: float,
    dt: float = 1e-3,
    seed=None,
    *,
    max_clock_events: int = DEFAULT_MAX_CLOCK_EVENTS,
) -> SystemPath:
    """Simulate one path of the signal/observation pair.

    Parameters
    ----------
    spec : ModelSpec
    horizon, dt : float
        Time horizon and Euler step.
    seed : int, SeedSequence or None
        Reproducibility: the same seed yields a bit-identical path.
    max_clock_events : int
        Cap on the number of clock firings; exceeding it raises
        :class:`SimulationError`.
    """
    grid = make_grid(horizon, dt)
    n = len(grid) - 1
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seed_repr = seed if isinstance(seed, (int, np.integer)) else ss.entropy
    if isinstance(seed_repr, np.integer):
        seed_repr = int(seed_repr)
    r_w, r_m, r_n, r_marks, r_bridge, r_init = [np.random.default_rng(s) for s in ss.spawn(6)]

    step = grid[1] - grid[0]
    dW = r_w.normal(0.0, math.sqrt(step), size=n)
    sig, obs, c = spec.signal, spec.observation, spec.coefficients
    m_times, m_u = _proposals(r_m, sig.rate_bound, horizon)
    n_times, n_u = _proposals(r_n, obs.rate_bound, horizon)
    det_m = sorted(t for t in sig.clock.times if 0 < t <= horizon) if sig.clock and sig.clock.kind == "deterministic" else []
    det_n = sorted(t for t in obs.clock.times if 0 < t <= horizon) if obs.clock and obs.clock.kind == "deterministic" else []
    if set(det_m) & set(det_n):
        raise SimulationError("signal and observation clocks fire at the same time")
    thresholds = []
    if sig.clock is not None and sig.clock.kind == "threshold":
        thresholds.append(_Threshold("m_predictable", sig.clock))
    if obs.clock is not None and obs.clock.kind == "threshold":
        thresholds.append(_Threshold("n_predictable", obs.clock))

    h = History(_sample_initial(spec, r_init))
    y = float(obs.y0)
    ys = np.empty(n + 1)
    ys[0] = y
    events: list = []
    n_clock = 0
    im = inn = idm = idn = 0
    stretch_cells = n if spec.autonomous else 1

    def fail(where, t, exc):
        raise SimulationError(f"{where} failed at t={t!r}: {exc!r}") from exc

    def reference(s, h, y):
        try:
            lam_m = float(sig.rate(s, h, y)) if sig.rate_bound > 0 else 0.0
            lam_n = float(obs.rate(s, h, y)) if obs.rate_bound > 0 else 0.0
            b = float(c.drift(s, h, y))
            v = float(c.vol(s, y))
        except Exception as exc:
            fail("characteristic evaluation", s, exc)
        for lam, bound, label in ((lam_m, sig.rate_bound, "signal"), (lam_n, obs.rate_bound, "observation")):
            if lam < 0 or lam > bound * (1 + 1e-12):
                raise SimulationError(f"majorant violated: {label} rate {lam!r} vs bound {bound!r} at t={s!r}")
        return s, h, y, lam_m, lam_n, b, v

    ref = reference(0.0, h, y)
    s = 0.0
    k = 0
    rem_w = dW[0]

    def _apply_jump(fn, t, hh, y_minus, mark):
        if fn is None:
            return 0.0
        try:
            return float(fn(t, hh, y_minus, mark))
        except Exception as exc:
            fail("jump map", t, exc)

    def _draw(kernel, t, hh, yy):
        try:
            return kernel.sample(t, hh, yy, r_marks)
        except Exception as exc:
            fail("kernel sampling", t, exc)

    while k < n:
        _, _, _, lam_m, lam_n, b, v = ref
        # next discrete candidate: proposals and deterministic clock times
        cands = []
        if im < len(m_times):
            cands.append((m_times[im], 1))
        if inn < len(n_times):
            cands.append((n_times[inn], 2))
        if idm < len(det_m):
            cands.append((det_m[idm], 3))
        if idn < len(det_n):
            cands.append((det_n[idn], 4))
        tau_e, what = min(cands) if cands else (math.inf, 0)
        # build the stretch s -> ... with constant coefficients
        k_end = min(n, k + stretch_cells)
        j_e = cell_of(grid, tau_e) if tau_e <= grid[k_end] else n + 1
        if j_e < k_end:
            last = j_e
            pts_t = np.concatenate(([s], grid[k + 1 : j_e + 1], [tau_e]))
        else:
            last = k_end - 1
            pts_t = np.concatenate(([s], grid[k + 1 : k_end + 1]))
        m = len(pts_t) - 1
        rem_before = np.empty(m)
        cells = np.arange(k, k + m)
        rem_before[0] = rem_w
        if m > 1:
            rem_before[1:] = dW[k + 1 : k + m]
        incs = rem_before.copy()
        if j_e < k_end:
            # Brownian bridge for the partial last segment
            a0 = pts_t[-2]
            cell_end = grid[j_e + 1]
            full = cell_end - a0
            part = tau_e - a0
            if full > 0:
                mean = rem_before[-1] * part / full
                var = max(part * (cell_end - tau_e) / full, 0.0)
                incs[-1] = mean + math.sqrt(var) * r_bridge.standard_normal()
            else:
                incs[-1] = rem_before[-1]
        pts_y = y + b * (pts_t - s) + v * np.concatenate(([0.0], np.cumsum(incs)))
        pts_y[0] = y

        # threshold clocks
        best = None
        for th in thresholds:
            start = 0
            if not th.armed:
                ok = (pts_t >= th.fired_at + step) & (np.abs(pts_y - th.level) > th.rearm)
                if not ok.any():
                    continue
                start = int(np.argmax(ok))
            i = first_crossing(th.level, th.direction, pts_y, start)
            if i < 0:
                continue
            theta = (th.level - pts_y[i]) / (pts_y[i + 1] - pts_y[i])
            tc = pts_t[i] + theta * (pts_t[i + 1] - pts_t[i])
            if best is None or tc < best[0]:
                best = (tc, i, theta, th)
        # re-arm thresholds that became eligible along the stretch without firing
        for th in thresholds:
            if not th.armed:
                limit = best[0] if best is not None else pts_t[-1]
                ok = (pts_t <= limit) & (pts_t >= th.fired_at + step) & (np.abs(pts_y - th.level) > th.rearm)
                if ok.any():
                    th.armed = True

        if best is not None:
            tc, i, theta, th = best
            if tc == tau_e:
                # clock beats the coinciding proposal, which is dropped
                if what == 1:
                    im += 1
                elif what == 2:
                    inn += 1
            for idx in range(1, i + 1):
                ys[cells[idx - 1] + 1] = pts_y[idx]
            k = int(cells[i])
            rem_w = rem_before[i] - theta * incs[i]
            s = float(tc)
            y_minus = float(th.level)
            th.armed = False
            th.fired_at = s
            n_clock += 1
            if n_clock > max_clock_events:
                raise SimulationError(f"clock-event cap {max_clock_events} exceeded at t={s!r}")
            if th.stream == "m_predictable":
                e = _draw(sig.kernel_r, s, h, y_minus)
                dy = _apply_jump(c.jump_p, s, h, y_minus, e)
                if e == current_value(h):
                    raise SimulationError(f"kernel R^m charged the current state at t={s!r}")
                h = join(h, s, e)
                events.append(EventRecord(s, "m_predictable", e, dy, y_minus))
            else:
                z = _draw(obs.kernel_r, s, h, y_minus)
                dy = _apply_jump(c.size_p, s, h, y_minus, z)
                events.append(EventRecord(s, "n_predictable", z, dy, y_minus))
            y = y_minus + dy
            ref = reference(s, h, y)
            if s == grid[k + 1]:
                ys[k + 1] = y
                k += 1
                if k < n:
                    rem_w = dW[k]
                    s = float(grid[k])
            continue

        # no clock crossing before the stretch end
        for idx in range(1, m + 1 if j_e >= k_end else m):
            ys[cells[idx - 1] + 1] = pts_y[idx]
        if j_e >= k_end:
            k = k_end
            s = float(grid[k])
            y = float(pts_y[-1])
            if k < n:
                rem_w = dW[k]
                if not spec.autonomous:
                    ref = reference(s, h, y)
            continue

        # a discrete candidate at tau_e inside cell j_e
        k = j_e
        rem_w = rem_before[-1] - incs[-1]
        s = float(tau_e)
        y_minus = float(pts_y[-1])
        y = y_minus
        ref_s, ref_h, ref_y = ref[0], ref[1], ref[2]
        if what == 1:
            u = m_u[im]
            im += 1
            if inn < len(n_times) and n_times[inn] == s:
                inn += 1
            if u * sig.rate_bound < lam_m:
                e = _draw(sig.kernel_q, ref_s, ref_h, ref_y)
                if e == current_value(h):
                    raise SimulationError(f"kernel Q^m charged the current state at t={s!r}")
                dy = _apply_jump(c.jump_i, s, h, y_minus, e)
                h = join(h, s, e)
                events.append(EventRecord(s, "m_inaccessible", e, dy, y_minus))
                y = y_minus + dy
                ref = reference(s, h, y)
        elif what == 2:
            u = n_u[inn]
            inn += 1
            if u * obs.rate_bound < lam_n:
                z = _draw(obs.kernel_q, ref_s, ref_h, ref_y)
                dy = _apply_jump(c.size_i, s, h, y_minus, z)
                events.append(EventRecord(s, "n_inaccessible", z, dy, y_minus))
                if dy != 0.0:
                    y = y_minus + dy
                    ref = reference(s, h, y)
        else:
            if im < len(m_times) and m_times[im] == s:
                im += 1
            if inn < len(n_times) and n_times[inn] == s:
                inn += 1
            n_clock += 1
            if n_clock > max_clock_events:
                raise SimulationError(f"clock-event cap {max_clock_events} exceeded at t={s!r}")
            if what == 3:
                idm += 1
                e = _draw(sig.kernel_r, s, h, y_minus)
                if e == current_value(h):
                    raise SimulationError(f"kernel R^m charged the current state at t={s!r}")
                dy = _apply_jump(c.jump_p, s, h, y_minus, e)
                h = join(h, s, e)
                events.append(EventRecord(s, "m_predictable", e, dy, y_minus))
            else:
                idn += 1
                z = _draw(obs.kernel_r, s, h, y_minus)
                dy = _apply_jump(c.size_p, s, h, y_minus, z)
                events.append(EventRecord(s, "n_predictable", z, dy, y_minus))
            y = y_minus + dy
            ref = reference(s, h, y)
        if s == grid[k + 1]:
            ys[k + 1] = y
            k += 1
            if k < n:
                rem_w = dW[k]
                if not spec.autonomous:
                    ref = reference(s, h, y)

    return SystemPath(
        grid=grid,
        latent_history=h,
        y_samples=ys,
        w_increments=dW,
        events=tuple(events),
        seed=seed_repr,
        clock_events=n_clock,
    )


def observe(path: SystemPath) -> ObservationRecord:
    """Drop everything the observer cannot see.

    Clock firings are always kept; inaccessible events only when they move Y.
    """
    out = []
    for ev in path.events:
        if ev.stream == "m_predictable":
            out.append(ObservedEvent(ev.time, "clock_m", ev.y_minus, ev.obs_jump))
        elif ev.stream == "n_predictable":
            out.append(ObservedEvent(ev.time, "clock_n", ev.y_minus, ev.obs_jump))
        elif ev.obs_jump != 0.0:
            out.append(ObservedEvent(ev.time, "jump", ev.y_minus, ev.obs_jump))
    return ObservationRecord(path.grid.copy(), path.y_samples.copy(), tuple(out))
