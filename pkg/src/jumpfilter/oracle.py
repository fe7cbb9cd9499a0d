"""Ground-truth posteriors built without the filtering equation.

:func:`enumerate_posterior` applies Bayes' rule on path space to every
assignment of signal marks at clock firings. :func:`bootstrap_pf` is a
plain sequential Monte Carlo filter that proposes from the signal's own
dynamics. Neither imports the filter module.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .history import History, current_value, join
from .model import ModelSpec, g_size_likelihood, k_size_likelihood
from .simulate import ObservationRecord

__all__ = [
    "OracleError",
    "OracleTrajectory",
    "enumerate_posterior",
    "bootstrap_pf",
    "compare",
    "total_variation",
    "ENUMERATION_CAP",
]

ENUMERATION_CAP = 10**6
_LOG2PI = math.log(2 * math.pi)


class OracleError(RuntimeError):
    """Oracle precondition violated or computation impossible."""


@dataclass
class OracleTrajectory:
    """Posterior marginals of the current value, one row per grid node and per event."""

    times: np.ndarray
    is_grid: np.ndarray
    marginals: np.ndarray
    labels: tuple
    posterior: list = field(default_factory=list)

    def grid_times(self) -> np.ndarray:
        return self.times[self.is_grid]

    def grid_marginals(self) -> np.ndarray:
        return self.marginals[self.is_grid]


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


def _softmax(logw: np.ndarray) -> np.ndarray:
    top = np.max(logw)
    if not math.isfinite(top):
        raise OracleError("every configuration has zero likelihood")
    w = np.exp(logw - top)
    return w / w.sum()


def _observable_n_rate(spec, t, h, y):
    obs, c = spec.observation, spec.coefficients
    if obs.rate_bound <= 0 or obs.kernel_q is None or c.size_i is None:
        return 0.0
    lam = float(obs.rate(t, h, y))
    if lam <= 0:
        return 0.0
    marks, q = obs.kernel_q.quadrature(t, h, y)
    return lam * sum(p for z, p in zip(marks, q) if p > 0 and float(c.size_i(t, h, y, z)) != 0.0)


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


# -- enumeration ----------------------------------------------------------------------------


def enumerate_posterior(spec: ModelSpec, observation: ObservationRecord, horizon: Optional[float] = None) -> OracleTrajectory:
    """Exact Bayes posterior over initial state and marks at signal-clock firings.

    Requires a finite signal space and no totally inaccessible signal jumps.
    Per-cell likelihoods are the Euler transition densities of the
    observation, so the discretization matches the simulator.
    """
    sig = spec.signal
    if not sig.space.is_finite:
        raise OracleError("enumeration needs a finite signal space")
    if sig.rate_bound > 0:
        raise OracleError("enumeration needs a signal without totally inaccessible jumps (rate bound must be 0)")
    labels = sig.space.labels
    pos = {l: i for i, l in enumerate(labels)}
    prior = sig.prior()
    firings = [ev for ev in observation.events if ev.kind == "clock_m"]
    if horizon is not None:
        firings = [ev for ev in firings if ev.time <= horizon]
    n_cfg = len(labels) ** (len(firings) + 1)
    if n_cfg > ENUMERATION_CAP:
        raise OracleError(f"combinatorial cap exceeded: {n_cfg} configurations > {ENUMERATION_CAP}")

    # configurations as label-index tuples (x0, e1, ..., ek) with their histories per stage
    cfgs = np.array(list(itertools.product(range(len(labels)), repeat=len(firings) + 1)), dtype=np.int64)
    logprior = np.array([_log(prior.get(labels[c[0]], 0.0)) for c in cfgs])
    stage_hist = []  # stage j -> (unique histories, inverse index over configs)
    prefix_hist = {}
    for j in range(len(firings) + 1):
        uniq, inv = np.unique(cfgs[:, : j + 1], axis=0, return_inverse=True)
        hs = []
        for row in uniq:
            key = tuple(row)
            if key not in prefix_hist:
                if j == 0:
                    prefix_hist[key] = History(labels[row[0]])
                else:
                    parent = prefix_hist[key[:-1]]
                    e = labels[row[-1]]
                    alive = parent is not None and e != current_value(parent)
                    prefix_hist[key] = join(parent, firings[j - 1].time, e) if alive else None
            hs.append(prefix_hist[key])
        stage_hist.append((hs, inv.reshape(-1)))
    # a configuration that "jumps" to its current value has prior mass zero
    for j in range(1, len(firings) + 1):
        hs, inv = stage_hist[j]
        dead = np.array([h is None for h in hs])
        logprior[dead[inv]] = -math.inf

    c = spec.coefficients
    cum = np.zeros(len(cfgs))
    times, is_grid, margs = [], [], []
    stage = 0
    grid = observation.grid
    cache: dict = {}

    def per_hist(fn, stage_j, t, y, key):
        hs, inv = stage_hist[stage_j]
        if spec.autonomous:
            ck = (key, stage_j)
            vals = cache.get(ck)
            if vals is None:
                vals = np.array([fn(t, h, y) if h is not None else 0.0 for h in hs])
                cache[ck] = vals
        else:
            vals = np.array([fn(t, h, y) if h is not None else 0.0 for h in hs])
        return vals[inv]

    def record(t, grid_row):
        lw = logprior + cum
        w = _softmax(lw)
        state_idx = cfgs[:, stage] if stage > 0 else cfgs[:, 0]
        times.append(t)
        is_grid.append(grid_row)
        margs.append(np.bincount(state_idx, weights=w, minlength=len(labels)))

    record(0.0, True)
    for k, t0, t1, y0, y1m, ev in observation.segments():
        length = t1 - t0
        sigma = float(c.vol(t0, y0))
        b = per_hist(lambda t, h, y: float(c.drift(t, h, y)), stage, t0, y0, "b")
        lam = per_hist(lambda t, h, y: _observable_n_rate(spec, t, h, y), stage, t0, y0, "lam")
        dy = y1m - y0
        var = sigma * sigma * length
        cum = cum - (dy - b * length) ** 2 / (2 * var) - 0.5 * (_LOG2PI + math.log(var)) - lam * length
        if ev is None:
            record(t1, True)
            continue
        if ev.kind == "clock_m" and (horizon is None or ev.time <= horizon):
            j = stage + 1
            hs_prev, inv_prev = stage_hist[stage]
            _, inv_new = stage_hist[j]
            lp = np.zeros(len(cfgs))
            ll = np.zeros(len(cfgs))
            for ci in range(len(cfgs)):
                h = hs_prev[inv_prev[ci]]
                if h is None:
                    continue
                e = labels[cfgs[ci, j]]
                marks, r = sig.kernel_r.quadrature(ev.time, h, ev.y_minus)
                rmass = dict(zip(marks, r)).get(e, 0.0)
                lp[ci] = _log(rmass)
                ll[ci] = _log(k_size_likelihood(spec, "p", ev.time, h, ev.y_minus, ev.size, e))
            logprior = logprior + lp
            cum = cum + ll
            stage = j
        elif ev.kind == "clock_n":
            hs, inv = stage_hist[stage]
            ll = np.array(
                [_log(g_size_likelihood(spec, "p", ev.time, h, ev.y_minus, ev.size)) if h is not None else -math.inf for h in hs]
            )[inv]
            cum = cum + ll
        elif ev.kind == "jump":
            hs, inv = stage_hist[stage]
            vals = []
            for h in hs:
                if h is None:
                    vals.append(-math.inf)
                    continue
                lam_n = float(spec.observation.rate(ev.time, h, ev.y_minus)) if spec.observation.rate_bound > 0 else 0.0
                vals.append(_log(lam_n * g_size_likelihood(spec, "i", ev.time, h, ev.y_minus, ev.size)) if lam_n > 0 else -math.inf)
            cum = cum + np.array(vals)[inv]
        record(ev.time, False)
        if ev.time == float(grid[k + 1]):
            record(ev.time, True)

    w = _softmax(logprior + cum)
    final_hs, final_inv = stage_hist[stage]
    acc: dict = {}
    for ci, wi in enumerate(w):
        if wi > 0:
            h = final_hs[final_inv[ci]]
            acc[h] = acc.get(h, 0.0) + float(wi)
    return OracleTrajectory(
        times=np.array(times),
        is_grid=np.array(is_grid, dtype=bool),
        marginals=np.array(margs),
        labels=labels,
        posterior=list(acc.items()),
    )


# -- bootstrap particle filter ----------------------------------------------------------------


def _resample_systematic(w: np.ndarray, rng) -> np.ndarray:
    n = len(w)
    u = (rng.random() + np.arange(n)) / n
    c = np.cumsum(w)
    c[-1] = 1.0
    return np.minimum(np.searchsorted(c, u, side="right"), n - 1)


def bootstrap_pf(
    spec: ModelSpec,
    observation: ObservationRecord,
    n_particles: int = 10_000,
    seed=None,
    *,
    ess_fraction: float = 0.5,
) -> OracleTrajectory:
    """Bootstrap particle filter: signal particles move under the prior dynamics.

    At an observed jump a particle picks the jump source (observation mark
    or signal jump to ``e``) in proportion to its prior intensity and is
    weighted by the total intensity times that source's size likelihood. At
    a signal-clock firing the new value is drawn from R^m and weighted by
    the size likelihood. Markov models carry only the current state.
    """
    sig, obs, c = spec.signal, spec.observation, spec.coefficients
    if not sig.space.is_finite:
        raise OracleError("bootstrap_pf reports current-value marginals and needs a finite signal space")
    labels = sig.space.labels
    lpos = {l: i for i, l in enumerate(labels)}
    rng = np.random.default_rng(seed)
    prior = sig.prior()
    pl = [s for s in prior if prior[s] > 0]
    pp = np.array([prior[s] for s in pl], dtype=float)
    draw = rng.choice(len(pl), size=n_particles, p=pp / pp.sum())
    markov = spec.markov
    canon = [History(l) for l in labels]
    # Markov: particles are state indices; otherwise particles are histories
    sidx = np.array([lpos[pl[d]] for d in draw], dtype=np.int64)
    hist = None if markov else [canon[i] for i in sidx]
    logw = np.zeros(n_particles)

    def h_of(i):
        return canon[sidx[i]] if markov else hist[i]

    def set_h(i, h_old, t, e):
        if markov:
            sidx[i] = lpos[e]
        else:
            hist[i] = join(h_old, t, e)

    def keyed(fn, t, y):
        if markov:
            return np.array([fn(t, h, y) for h in canon])[sidx]
        cache: dict = {}
        out = np.empty(n_particles)
        for i, h in enumerate(hist):
            v = cache.get(h)
            if v is None:
                v = fn(t, h, y)
                cache[h] = v
            out[i] = v
        return out

    def current_idx():
        return sidx if markov else np.array([lpos[current_value(h)] for h in hist])

    def marginal():
        w = np.exp(logw - logw.max())
        return np.bincount(current_idx(), weights=w / w.sum(), minlength=len(labels))

    def maybe_resample():
        nonlocal hist, logw, sidx
        top = logw.max()
        if not math.isfinite(top):
            raise OracleError("particle degeneracy: all weights vanished")
        w = np.exp(logw - top)
        w /= w.sum()
        if 1.0 / np.sum(w * w) < ess_fraction * n_particles:
            pick = _resample_systematic(w, rng)
            if markov:
                sidx = sidx[pick]
            else:
                hist = [hist[i] for i in pick]
            logw = np.zeros(n_particles)

    times, is_grid, margs = [0.0], [True], [marginal()]
    grid = observation.grid
    for k, t0, t1, y0, y1m, ev in observation.segments():
        length = t1 - t0
        # prior dynamics over the segment: inaccessible signal jumps by thinning
        if sig.rate_bound > 0 and sig.kernel_q is not None:
            lam = keyed(lambda t, h, y: float(sig.rate(t, h, y)), t0, y0)
            jump = rng.random(n_particles) < -np.expm1(-lam * length)
            for i in np.nonzero(jump)[0]:
                h = h_of(i)
                e = sig.kernel_q.sample(t0, h, y0, rng)
                size = 0.0 if c.jump_i is None else float(c.jump_i(t0, h, y0, e))
                if size != 0.0:
                    logw[i] = -math.inf  # would have produced a jump that was not observed
                tj = t0 + length * (1.0 - rng.random())
                if not tj > h.last_time:
                    tj = float(np.nextafter(h.last_time, math.inf))
                set_h(i, h, tj, e)
        sigma = float(c.vol(t0, y0))
        b = keyed(lambda t, h, y: float(c.drift(t, h, y)), t0, y0)
        lam_n = keyed(lambda t, h, y: _observable_n_rate(spec, t, h, y), t0, y0)
        dy = y1m - y0
        logw += -((dy - b * length) ** 2) / (2 * sigma * sigma * length) - lam_n * length
        if ev is not None:
            t, ym, size = ev.time, ev.y_minus, ev.size
            if ev.kind == "clock_m":
                for i in range(n_particles):
                    h = h_of(i)
                    e = sig.kernel_r.sample(t, h, ym, rng)
                    logw[i] += _log(k_size_likelihood(spec, "p", t, h, ym, size, e))
                    set_h(i, h, t, e)
            elif ev.kind == "clock_n":
                logw += keyed(lambda tt, h, y: _log(g_size_likelihood(spec, "p", tt, h, y, size)), t, ym)
            else:
                for i in range(n_particles):
                    h = h_of(i)
                    lam_m = float(sig.rate(t, h, ym)) if sig.rate_bound > 0 else 0.0
                    lam_o = float(obs.rate(t, h, ym)) if obs.rate_bound > 0 else 0.0
                    tot = lam_m + lam_o
                    if tot <= 0:
                        logw[i] = -math.inf
                        continue
                    if rng.random() * tot < lam_o:
                        logw[i] += _log(tot * g_size_likelihood(spec, "i", t, h, ym, size))
                    else:
                        e = sig.kernel_q.sample(t, h, ym, rng)
                        logw[i] += _log(tot * k_size_likelihood(spec, "i", t, h, ym, size, e))
                        set_h(i, h, t, e)
        maybe_resample()
        if ev is None:
            times.append(t1)
            is_grid.append(True)
            margs.append(marginal())
        else:
            times.append(ev.time)
            is_grid.append(False)
            margs.append(marginal())
            if ev.time == float(grid[k + 1]):
                times.append(ev.time)
                is_grid.append(True)
                margs.append(margs[-1])
    w = np.exp(logw - logw.max())
    w /= w.sum()
    acc: dict = {}
    for i, wi in enumerate(w):
        h = h_of(i)
        acc[h] = acc.get(h, 0.0) + float(wi)
    return OracleTrajectory(np.array(times), np.array(is_grid, dtype=bool), np.array(margs), labels, list(acc.items()))


# -- comparison ---------------------------------------------------------------------------------


def _grid_view(obj):
    if isinstance(obj, tuple) and len(obj) == 2:
        return np.asarray(obj[0], dtype=float), np.asarray(obj[1], dtype=float)
    return np.asarray(obj.grid_times(), dtype=float), np.asarray(obj.grid_marginals(), dtype=float)


def compare(a, b) -> np.ndarray:
    """Total-variation distance between current-value marginals, per grid time.

    ``a`` and ``b`` are filter or oracle trajectories, or ``(times,
    marginals)`` pairs.
    """
    ta, ma = _grid_view(a)
    tb, mb = _grid_view(b)
    if ta.shape != tb.shape or np.max(np.abs(ta - tb), initial=0.0) > 1e-9:
        raise ValueError("grid mismatch between the two trajectories")
    if ma.shape != mb.shape:
        raise ValueError(f"marginals over different label sets: {ma.shape} vs {mb.shape}")
    return 0.5 * np.abs(ma - mb).sum(axis=1)
