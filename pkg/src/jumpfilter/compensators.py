"""Compensators of the jump measures and Monte Carlo residual diagnostics.

Absolutely continuous parts are integrated with the left-endpoint rectangle
rule on the grid ``{k * dt}``, with the history frozen at the start of the
interval. Clock firings contribute atoms carrying full kernel mass.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Any, Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .history import History, current_value, join
from .model import ModelSpec
from .simulate import ObservationRecord, SystemPath, simulate, spawn_seeds

__all__ = [
    "SizeSet",
    "CompensatorIncrement",
    "Integrand",
    "mu_increment",
    "nu_increment",
    "bold_mu_increment",
    "muY_increment",
    "hat_muY_increment",
    "joined_target",
    "default_integrands",
    "path_residuals",
    "compensator_residual",
    "innovation_path",
    "innovation_increments",
    "MEASURES",
]

MEASURES = ("m", "n", "mY")


@dataclass(frozen=True)
class SizeSet:
    """Finite union of closed intervals of jump sizes; 0 is never a member."""

    intervals: tuple = ((-math.inf, math.inf),)

    def __post_init__(self):
        ivs = tuple(sorted((float(a), float(b)) for a, b in self.intervals))
        for a, b in ivs:
            if a > b:
                raise ValueError(f"empty interval [{a}, {b}]")
        object.__setattr__(self, "intervals", ivs)

    def __contains__(self, x) -> bool:
        x = float(x)
        if x == 0.0:
            return False
        return any(a <= x <= b for a, b in self.intervals)

    @classmethod
    def everything(cls) -> "SizeSet":
        return cls()

    @classmethod
    def empty(cls) -> "SizeSet":
        return cls(())


class CompensatorIncrement(NamedTuple):
    interval: tuple
    target: Any
    value: float


def _member(target) -> Callable[[Any], bool]:
    if target is None:
        return lambda e: True
    if callable(target) and not isinstance(target, (set, frozenset, list, tuple)):
        return target
    items = set(target)
    return lambda e: e in items


def _quadrature_nodes(s: float, t: float, dt: Optional[float]):
    """Left endpoints and lengths of the grid-aligned partition of (s, t]."""
    if not t >= s:
        raise ValueError(f"invalid interval ({s}, {t}]")
    if t == s:
        return np.empty(0), np.empty(0)
    if dt is None:
        return np.array([s]), np.array([t - s])
    lo = math.floor(s / dt + 1e-9) + 1
    hi = math.ceil(t / dt - 1e-9)
    inner = np.arange(lo, hi) * dt
    inner = inner[(inner > s) & (inner < t)]
    pts = np.concatenate(([s], inner, [t]))
    return pts[:-1], np.diff(pts)


def _y_at(y, u):
    return float(y(u)) if callable(y) else float(y)


def _kernel_part(rate_fn, kernel, h, s, t, y, dt, weight_of):
    if kernel is None:
        return 0.0
    total = 0.0
    for u, length in zip(*_quadrature_nodes(s, t, dt)):
        yu = _y_at(y, u)
        lam = float(rate_fn(u, h, yu))
        if lam == 0.0:
            continue
        marks, w = kernel.quadrature(u, h, yu)
        total += lam * length * sum(p * weight_of(u, yu, e) for e, p in zip(marks, w) if p != 0)
    return total


def _atom_part(kernel, h, firings, s, t, weight_of):
    total = 0.0
    for tau, y_minus in firings:
        if not s < tau <= t:
            continue
        marks, w = kernel.quadrature(tau, h, y_minus)
        total += sum(p * weight_of(tau, y_minus, e) for e, p in zip(marks, w) if p != 0)
    return total


def mu_increment(
    spec: ModelSpec,
    h: History,
    interval: tuple,
    target=None,
    *,
    y=0.0,
    firings: Iterable = (),
    dt: Optional[float] = None,
) -> CompensatorIncrement:
    """Compensator of the signal jump measure over ``interval`` on the mark set ``target``.

    ``target`` is None (all of E), a collection of labels or a predicate.
    ``y`` is the observation value (scalar or a function of time);
    ``firings`` lists ``(time, y_minus)`` of signal-clock firings.
    """
    s, t = interval
    inside = _member(target)
    wt = lambda u, yu, e: 1.0 if inside(e) else 0.0
    sig = spec.signal
    value = _kernel_part(sig.rate, sig.kernel_q, h, s, t, y, dt, wt)
    if sig.kernel_r is not None:
        value += _atom_part(sig.kernel_r, h, firings, s, t, wt)
    return CompensatorIncrement((s, t), target, value)


def nu_increment(
    spec: ModelSpec,
    h: History,
    interval: tuple,
    target=None,
    *,
    y=0.0,
    firings: Iterable = (),
    dt: Optional[float] = None,
) -> CompensatorIncrement:
    """Compensator of the observation mark measure; mirrors :func:`mu_increment`."""
    s, t = interval
    inside = _member(target)
    wt = lambda u, yu, z: 1.0 if inside(z) else 0.0
    obs = spec.observation
    value = _kernel_part(obs.rate, obs.kernel_q, h, s, t, y, dt, wt)
    if obs.kernel_r is not None:
        value += _atom_part(obs.kernel_r, h, firings, s, t, wt)
    return CompensatorIncrement((s, t), target, value)


def joined_target(h: History, marks) -> Callable[[History], bool]:
    """The set ``{join(h, u, e) : u > last jump of h, e in marks}`` as a predicate on histories."""
    inside = _member(marks)
    n = len(h.jumps)

    def contains(g: History) -> bool:
        return (
            len(g.jumps) == n + 1
            and g.initial == h.initial
            and g.jumps[:n] == h.jumps
            and inside(g.jumps[-1].value)
        )

    return contains


def bold_mu_increment(
    spec: ModelSpec,
    h: History,
    interval: tuple,
    target: Callable[[History], bool],
    *,
    y=0.0,
    firings: Iterable = (),
    dt: Optional[float] = None,
) -> CompensatorIncrement:
    """Compensator of the history jump measure on a set of histories.

    Marks are pushed forward through ``join`` before testing membership,
    so the history set is probed with genuine histories.
    """
    s, t = interval
    last = h.last_time
    now = current_value(h)

    def wt(u, yu, e):
        # the jump lands inside the cell that starts at the quadrature node u
        return 1.0 if (e != now and target(join(h, math.nextafter(max(float(u), last), math.inf), e))) else 0.0

    sig = spec.signal
    value = _kernel_part(sig.rate, sig.kernel_q, h, s, t, y, dt, wt)
    if sig.kernel_r is not None:
        value += _atom_part(sig.kernel_r, h, firings, s, t, wt)
    return CompensatorIncrement((s, t), target, value)


def muY_increment(
    spec: ModelSpec,
    h: History,
    interval: tuple,
    sizes: SizeSet = SizeSet(),
    *,
    y=0.0,
    firings_m: Iterable = (),
    firings_n: Iterable = (),
    dt: Optional[float] = None,
) -> CompensatorIncrement:
    """Compensator of the observation jump measure on the size set ``sizes``.

    Adds the four contributions: signal jumps through K^i, observation marks
    through G^i, and the clock atoms through K^p and G^p.
    """
    s, t = interval
    c, sig, obs = spec.coefficients, spec.signal, spec.observation

    def through(fn):
        if fn is None:
            return lambda u, yu, e: 0.0
        return lambda u, yu, e: 1.0 if float(fn(u, h, yu, e)) in sizes else 0.0

    value = 0.0
    if c.jump_i is not None:
        value += _kernel_part(sig.rate, sig.kernel_q, h, s, t, y, dt, through(c.jump_i))
    if c.size_i is not None:
        value += _kernel_part(obs.rate, obs.kernel_q, h, s, t, y, dt, through(c.size_i))
    if c.jump_p is not None and sig.kernel_r is not None:
        value += _atom_part(sig.kernel_r, h, firings_m, s, t, through(c.jump_p))
    if c.size_p is not None and obs.kernel_r is not None:
        value += _atom_part(obs.kernel_r, h, firings_n, s, t, through(c.size_p))
    return CompensatorIncrement((s, t), sizes, value)


def _atoms_of(state):
    if hasattr(state, "atoms"):
        return list(state.atoms())
    return list(state)


def hat_muY_increment(
    state,
    spec: ModelSpec,
    interval: tuple,
    sizes: SizeSet = SizeSet(),
    **kwargs,
) -> CompensatorIncrement:
    """Observation-filtration compensator: :func:`muY_increment` averaged over the filter's atoms."""
    value = 0.0
    for h, w in _atoms_of(state):
        if w != 0:
            value += w * muY_increment(spec, h, interval, sizes, **kwargs).value
    return CompensatorIncrement(tuple(interval), sizes, value)


# -- residual diagnostics ----------------------------------------------------------------


class Integrand(NamedTuple):
    """Bounded predictable test integrand ``fn(t, h, y, mark, measure) -> array``.

    ``t`` and ``y`` are arrays; ``mark`` is a signal value for measure
    ``"m"``, an observation mark for ``"n"`` and a jump size for ``"mY"``.
    """

    name: str
    fn: Callable


def default_integrands(spec: ModelSpec) -> list:
    """Five bounded integrands: constant, state indicator, mark indicator, 1/(1+y^2), time."""
    states = spec.states
    s0 = states[0]
    zmarks = spec.observation.mark_space.labels if spec.observation.mark_space.is_finite else None
    z0 = zmarks[0] if zmarks else None

    def mark_indicator(t, h, y, mark, measure):
        if measure == "m":
            hit = mark == s0
        elif measure == "n":
            hit = mark == z0
        else:
            hit = float(mark) > 0
        return np.full_like(t, 1.0 if hit else 0.0)

    return [
        Integrand("one", lambda t, h, y, mark, measure: np.ones_like(t)),
        Integrand("state0", lambda t, h, y, mark, measure: np.full_like(t, 1.0 if current_value(h) == s0 else 0.0)),
        Integrand("mark", mark_indicator),
        Integrand("inv1py2", lambda t, h, y, mark, measure: 1.0 / (1.0 + y * y)),
        Integrand("time", lambda t, h, y, mark, measure: np.asarray(t, dtype=float).copy()),
    ]


def _segment_arrays(path: SystemPath):
    """Vectorized reference partition: starts, lengths, y at start, history index at start."""
    grid, ys = path.grid, path.y_samples
    evs = [e for e in path.events if not (e.stream == "n_inaccessible" and e.obs_jump == 0.0)]
    ev_t = np.array([e.time for e in evs], dtype=float)
    ev_y = np.array([e.y_minus + e.obs_jump for e in evs], dtype=float)
    starts = np.concatenate((grid[:-1], ev_t))
    ystart = np.concatenate((ys[:-1], ev_y))
    order = np.argsort(starts, kind="stable")
    starts, ystart = starts[order], ystart[order]
    ends = np.concatenate((starts[1:], [grid[-1]]))
    m_times = np.array([e.time for e in path.events if e.stream.startswith("m_")], dtype=float)
    hidx = np.searchsorted(m_times, starts, side="right")
    return starts, ends - starts, ystart, hidx


def path_residuals(spec: ModelSpec, path: SystemPath, integrands: Sequence[Integrand], measures=MEASURES) -> np.ndarray:
    """Realized minus compensator integrals for one path, shape (len(integrands), len(measures))."""
    sig, obs, c = spec.signal, spec.observation, spec.coefficients
    init, jumps = path.latent_history.initial, path.latent_history.jumps
    hists = [History(init, jumps[:k]) for k in range(len(jumps) + 1)]
    starts, lens, ystart, hidx = _segment_arrays(path)
    out = np.zeros((len(integrands), len(measures)))

    # realized parts
    n_m = 0
    for ev in path.events:
        h = hists[n_m]
        t1 = np.array([ev.time])
        y1 = np.array([ev.y_minus])
        for j, meas in enumerate(measures):
            if meas == "m" and ev.stream.startswith("m_"):
                mark = ev.mark
            elif meas == "n" and ev.stream.startswith("n_"):
                mark = ev.mark
            elif meas == "mY" and ev.obs_jump != 0.0:
                mark = ev.obs_jump
            else:
                continue
            for i, C in enumerate(integrands):
                out[i, j] += float(np.asarray(C.fn(t1, h, y1, mark, meas)).reshape(-1)[0])
        if ev.stream.startswith("m_"):
            n_m += 1

    # absolutely continuous parts, grouped by history
    streams = []
    if sig.kernel_q is not None and sig.rate_bound > 0:
        streams.append((sig.rate, sig.kernel_q, "m", c.jump_i))
    if obs.kernel_q is not None and obs.rate_bound > 0:
        streams.append((obs.rate, obs.kernel_q, "n", c.size_i))
    for rate_fn, kernel, stream_meas, ymap in streams:
        for k, h in enumerate(hists):
            sel = hidx == k
            if not sel.any():
                continue
            ts, ls, yv = starts[sel], lens[sel], ystart[sel]
            if spec.autonomous:
                lam = np.full(ts.shape, float(rate_fn(ts[0], h, yv[0])))
                marks, w = kernel.quadrature(ts[0], h, yv[0])
                per_seg = None
            else:
                lam = np.array([float(rate_fn(a, h, b)) for a, b in zip(ts, yv)])
                per_seg = [kernel.quadrature(a, h, b) for a, b in zip(ts, yv)]
                marks = per_seg[0][0]
                w = None
            for mi, e in enumerate(marks):
                if per_seg is None:
                    wk = np.full(ts.shape, float(w[mi]))
                else:
                    wk = np.array([float(q[1][mi]) for q in per_seg])
                dens = lam * wk * ls
                if not dens.any():
                    continue
                for j, meas in enumerate(measures):
                    if meas == stream_meas:
                        for i, C in enumerate(integrands):
                            out[i, j] -= float(np.sum(dens * C.fn(ts, h, yv, e, meas)))
                    elif meas == "mY" and ymap is not None:
                        if spec.autonomous:
                            size = float(ymap(ts[0], h, yv[0], e))
                            if size == 0.0:
                                continue
                            for i, C in enumerate(integrands):
                                out[i, j] -= float(np.sum(dens * C.fn(ts, h, yv, size, meas)))
                        else:
                            for a, b, d in zip(ts, yv, dens):
                                size = float(ymap(a, h, b, e))
                                if size == 0.0 or d == 0.0:
                                    continue
                                for i, C in enumerate(integrands):
                                    out[i, j] -= d * float(np.asarray(C.fn(np.array([a]), h, np.array([b]), size, meas))[0])

    # atoms at clock firings
    n_m = 0
    for ev in path.events:
        h = hists[n_m]
        if ev.stream in ("m_predictable", "n_predictable"):
            is_m = ev.stream == "m_predictable"
            kernel = sig.kernel_r if is_m else obs.kernel_r
            ymap = c.jump_p if is_m else c.size_p
            marks, w = kernel.quadrature(ev.time, h, ev.y_minus)
            t1 = np.array([ev.time])
            y1 = np.array([ev.y_minus])
            for e, p in zip(marks, w):
                if p == 0:
                    continue
                for j, meas in enumerate(measures):
                    if meas == ("m" if is_m else "n"):
                        mark = e
                    elif meas == "mY" and ymap is not None:
                        mark = float(ymap(ev.time, h, ev.y_minus, e))
                        if mark == 0.0:
                            continue
                    else:
                        continue
                    for i, C in enumerate(integrands):
                        out[i, j] -= p * float(np.asarray(C.fn(t1, h, y1, mark, meas)).reshape(-1)[0])
        if ev.stream.startswith("m_"):
            n_m += 1
    return out


_WORKER_SPEC = None


def _worker(args):
    seeds, horizon, dt, integrands, measures = args
    return np.stack(
        [path_residuals(_WORKER_SPEC, simulate(_WORKER_SPEC, horizon, dt, s), integrands, measures) for s in seeds]
    )


def _n_workers() -> int:
    env = os.environ.get("JUMPFILTER_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, min(cap, int(env)))
        except ValueError:
            pass
    return cap


def compensator_residual(
    spec: ModelSpec,
    integrands: Optional[Sequence[Integrand]] = None,
    n_paths: int = 10_000,
    horizon: float = 1.0,
    dt: float = 1e-3,
    seed=0,
    *,
    measures=MEASURES,
    z_threshold: float = 3.0,
) -> list:
    """Monte Carlo check that realized minus compensated integrals have mean zero.

    Returns one report row per (integrand, measure) with keys ``name``,
    ``mean``, ``stderr``, ``z`` and ``pass``. A row whose residual is
    identically zero passes with ``z = 0``.
    """
    global _WORKER_SPEC
    if integrands is None:
        integrands = default_integrands(spec)
    seeds = spawn_seeds(seed, n_paths)
    workers = min(_n_workers(), n_paths)
    if workers > 1:
        import multiprocessing as mp
        from concurrent.futures import ProcessPoolExecutor

        _WORKER_SPEC = spec
        chunks = [seeds[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers, mp_context=mp.get_context("fork")) as ex:
            parts = list(ex.map(_worker, [(ch, horizon, dt, integrands, measures) for ch in chunks]))
        res = np.concatenate(parts)
    else:
        res = np.stack([path_residuals(spec, simulate(spec, horizon, dt, s), integrands, measures) for s in seeds])
    rows = []
    for i, C in enumerate(integrands):
        for j, meas in enumerate(measures):
            x = res[:, i, j]
            mean = float(x.mean())
            se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
            if np.max(np.abs(x)) <= 1e-9:
                # pathwise identity up to rounding: realized and compensated sums coincide
                z = 0.0
            elif se == 0.0:
                z = math.inf
            else:
                z = mean / se
            rows.append({"name": f"{C.name}/{meas}", "mean": mean, "stderr": se, "z": z, "pass": bool(abs(z) <= z_threshold)})
    return rows


# -- innovation ---------------------------------------------------------------------------


def _segment_drift_integrals(source, observation: ObservationRecord, spec: ModelSpec) -> np.ndarray:
    segs = list(observation.segments())
    if isinstance(source, SystemPath):
        # the true drift integrated on the latent reference partition
        starts, lens, ystart, hidx = _segment_arrays(source)
        init, jumps = source.latent_history.initial, source.latent_history.jumps
        hists = [History(init, jumps[:k]) for k in range(len(jumps) + 1)]
        drift = spec.coefficients.drift
        contrib = np.array([float(drift(a, hists[k], b)) for a, k, b in zip(starts, hidx, ystart)]) * lens
        ends = np.cumsum(np.concatenate(([0.0], contrib)))
        bounds = np.concatenate((starts, [source.grid[-1]]))
        seg_end = np.array([t1 for _, _, t1, _, _, _ in segs])
        seg_start = np.array([t0 for _, t0, _, _, _, _ in segs])
        pos_end = np.searchsorted(bounds, seg_end, side="left")
        pos_start = np.searchsorted(bounds, seg_start, side="left")
        return ends[pos_end] - ends[pos_start]
    pi_b = getattr(source, "segment_pi_b", source)
    if pi_b is None:
        raise ValueError("filter run carries no per-segment drift estimates")
    pi_b = np.asarray(pi_b, dtype=float)
    if pi_b.shape != (len(segs),):
        raise ValueError(f"expected {len(segs)} per-segment drift estimates, got shape {pi_b.shape}")
    return pi_b * np.array([t1 - t0 for _, t0, t1, _, _, _ in segs])


def innovation_path(source, observation: ObservationRecord, spec: ModelSpec) -> np.ndarray:
    """Innovation process on the grid.

    ``source`` is a filter run (or an array) with the filtered drift per
    observation segment, or a :class:`SystemPath` whose latent signal plays
    the part of a perfect filter.
    """
    segs = list(observation.segments())
    drift_int = _segment_drift_integrals(source, observation, spec)
    vol = spec.coefficients.vol
    inc = np.zeros(len(observation.grid) - 1)
    for (k, t0, t1, y0, y1m, _), d in zip(segs, drift_int):
        inc[k] += (y1m - y0 - d) / float(vol(t0, y0))
    return np.concatenate(([0.0], np.cumsum(inc)))


def innovation_increments(source, observation: ObservationRecord, spec: ModelSpec) -> np.ndarray:
    """Innovation increments divided by sqrt(dt): standard normal under the model."""
    path = innovation_path(source, observation, spec)
    return np.diff(path) / np.sqrt(np.diff(observation.grid))
