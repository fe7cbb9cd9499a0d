"""Filter for the signal history given the observation record.

Two representations share one API:

* exact mode keeps an enumerated set of history atoms with weights. When
  the signal can jump without moving the observation, exact mode is only
  available for Markov models and then *lumps* atoms by current state;
* particle mode keeps ``N`` sampled histories with weights and resamples
  systematically when the effective sample size drops below ``N/2``.

Between events the production step multiplies weights by the Gaussian
likelihood of the observation increment (the log-domain likelihood form);
:func:`step_continuous_equation` implements the Euler step of the filtering
equation itself (drift plus ``gamma dI``) for cross-checking. Jump times
branch atoms through the model's jump-size likelihoods.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .history import History, current_value, join, total_jumps
from .model import ModelSpec, g_size_likelihood, k_size_likelihood
from .simulate import ObservationRecord, ObservedEvent

__all__ = [
    "FilterError",
    "FilterCollapse",
    "IncompatibleObservation",
    "ExactModeUnsupported",
    "FunctionalPreset",
    "functional_from_id",
    "FilterState",
    "FilterConfig",
    "FilterTrajectory",
    "JumpDecomposition",
    "init",
    "apply_generator_L",
    "apply_generator_A",
    "gamma",
    "step_continuous",
    "step_continuous_equation",
    "update_inaccessible_jump",
    "update_predictable_m",
    "update_predictable_n",
    "jump_decomposition",
    "run",
    "systematic_resample",
]

NORM_TOL = 1e-12
# exact history mode collapses to current-value atoms past this many histories
# (Markov models with Markov functionals only; their marginals are unchanged)
EXACT_ATOM_CAP = 4096


class FilterError(RuntimeError):
    """A filter step failed; ``t`` holds the time when known."""

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t!r})")
        self.t = t


class FilterCollapse(FilterError):
    """All weights underflowed to zero."""


class IncompatibleObservation(FilterError):
    """The observed event has zero likelihood under every atom."""


class ExactModeUnsupported(FilterError):
    """Exact mode cannot represent the filter for this model."""


# -- functionals ---------------------------------------------------------------------


@dataclass(frozen=True)
class FunctionalPreset:
    """Bounded functional of the history; ``markov`` if it only reads the current value."""

    id: str
    fn: Callable[[History], float]
    markov: bool
    bound: Optional[float] = None

    def __call__(self, h: History) -> float:
        return float(self.fn(h))


def _numeric(v) -> float:
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ValueError(f"signal value {v!r} is not numeric") from None


def functional_from_id(fid: str, spec: Optional[ModelSpec] = None) -> FunctionalPreset:
    """Build a functional from its id.

    ``one``; ``indicator:<state>``; ``current`` (numeric current value);
    ``sup`` (largest value visited so far); ``jumps`` (number of jumps).
    Numeric labels in ``indicator:`` ids are matched against the state space.
    """
    if fid == "one":
        return FunctionalPreset("one", lambda h: 1.0, True, 1.0)
    if fid.startswith("indicator:"):
        raw = fid.split(":", 1)[1]
        label = raw
        if spec is not None and spec.signal.space.is_finite:
            for s in spec.signal.space.labels:
                if str(s) == raw:
                    label = s
                    break
            else:
                raise ValueError(f"unknown state {raw!r} in functional {fid!r}")
        return FunctionalPreset(fid, lambda h, _l=label: 1.0 if current_value(h) == _l else 0.0, True, 1.0)
    if fid == "current":
        return FunctionalPreset(fid, lambda h: _numeric(current_value(h)), True, None)
    if fid == "sup":
        return FunctionalPreset(fid, lambda h: max(_numeric(v) for v in h.values), False, None)
    if fid == "jumps":
        return FunctionalPreset(fid, lambda h: float(total_jumps(h)), False, None)
    raise ValueError(f"unknown functional {fid!r}")


# -- state ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterState:
    """Normalized weighted collection of histories.

    ``histories`` are the distinct histories; ``index[i]`` tells which one
    entry ``i`` carries, with weight ``weights[i]``. In exact mode
    ``index`` is ``arange`` (one entry per atom); in particle mode entries
    are particles and several may share a history.
    """

    t: float
    histories: tuple
    index: np.ndarray
    weights: np.ndarray
    mode: str = "exact"
    lumped: bool = False

    def atoms(self) -> list:
        """Distinct histories with their total weight."""
        tot = np.bincount(self.index, weights=self.weights, minlength=len(self.histories))
        return [(h, float(w)) for h, w in zip(self.histories, tot) if w > 0]

    def expectation(self, f: Callable[[History], float]) -> float:
        tot = np.bincount(self.index, weights=self.weights, minlength=len(self.histories))
        vals = np.array([float(f(h)) if w > 0 else 0.0 for h, w in zip(self.histories, tot)])
        return float(np.dot(tot, vals))

    def marginal(self, labels: Sequence) -> np.ndarray:
        """Distribution of the current value over ``labels``."""
        pos = {l: i for i, l in enumerate(labels)}
        out = np.zeros(len(labels))
        for h, w in self.atoms():
            out[pos[current_value(h)]] += w
        return out

    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())


def _normalized(w: np.ndarray, t, what="filter collapse") -> np.ndarray:
    s = w.sum()
    if not (s > 0 and math.isfinite(s)):
        raise FilterCollapse(what, t)
    return w / s


def _exact_state(t, pairs, lumped, labels=None) -> FilterState:
    """Deduplicate ``(history, weight)`` pairs into a normalized exact-mode state."""
    if lumped:
        pos = {l: i for i, l in enumerate(labels)}
        w = np.zeros(len(labels))
        for h, x in pairs:
            w[pos[current_value(h)]] += x
        hist = tuple(History(l) for l in labels)
    else:
        acc: dict = {}
        for h, x in pairs:
            if x > 0:
                acc[h] = acc.get(h, 0.0) + x
        hist = tuple(acc)
        w = np.array([acc[h] for h in hist], dtype=float)
    w = _normalized(w, t, "incompatible observation") if len(w) else None
    if w is None:
        raise IncompatibleObservation("incompatible observation: no atom survives", t)
    return FilterState(t, hist, np.arange(len(hist)), w, "exact", lumped)


def _needs_lumping(spec: ModelSpec) -> bool:
    return spec.signal.rate_bound > 0 and spec.coefficients.jump_i is None


def init(
    prior,
    spec: ModelSpec,
    mode: str = "exact",
    n_particles: int = 1000,
    seed=None,
    *,
    lumped: Optional[bool] = None,
) -> FilterState:
    """Initial filter: histories without jumps weighted by ``prior``.

    ``prior`` is a dict ``{state: probability}`` or None for the model's
    initial law. ``lumped`` defaults to whether the signal can jump unseen.
    """
    if prior is None:
        prior = spec.signal.prior()
    if not prior or sum(prior.values()) <= 0:
        raise ValueError("empty prior")
    total = float(sum(prior.values()))
    if mode == "exact":
        if lumped is None:
            lumped = _needs_lumping(spec)
        if lumped:
            if not spec.markov:
                raise ExactModeUnsupported(
                    "exact mode needs every signal jump to be observed, or a Markov model: "
                    "the signal jumps without moving the observation"
                )
            if not spec.signal.space.is_finite:
                raise ExactModeUnsupported("exact mode needs a finite signal space")
            labels = spec.signal.space.labels
            return _exact_state(0.0, [(History(s), p / total) for s, p in prior.items()], True, labels)
        return _exact_state(0.0, [(History(s), p / total) for s, p in prior.items() if p > 0], False)
    if mode == "particle":
        if n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        rng = np.random.default_rng(seed)
        labels = [s for s, p in prior.items() if p > 0]
        p = np.array([prior[s] for s in labels], dtype=float) / total
        idx = rng.choice(len(labels), size=n_particles, p=p) if len(labels) > 1 else np.zeros(n_particles, dtype=int)
        if lumped:
            if not (spec.markov and spec.signal.space.is_finite):
                raise ValueError("lumped particles need a Markov model on a finite space")
            all_labels = spec.signal.space.labels
            idx = np.array([all_labels.index(labels[i]) for i in idx], dtype=np.int64)
            labels = list(all_labels)
        hist = tuple(History(s) for s in labels)
        return FilterState(0.0, hist, idx.astype(np.int64), np.full(n_particles, 1.0 / n_particles), "particle", bool(lumped))
    raise ValueError(f"unknown mode {mode!r}")


# -- local characteristics per history ------------------------------------------------------


class _Local(NamedTuple):
    b: float
    obs_rate: float  # intensity of jumps that move the observation
    unobs: tuple  # ((e, rate), ...) for signal jumps that leave the observation unchanged


class _Evaluator:
    """Per-history drift and intensities; cached when the model is autonomous."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.cache = {} if spec.autonomous else None

    def key(self, h):
        return current_value(h) if self.spec.markov else h

    def local(self, t, h, y) -> _Local:
        if self.cache is not None:
            k = self.key(h)
            hit = self.cache.get(k)
            if hit is not None:
                return hit
        spec = self.spec
        sig, obs, c = spec.signal, spec.observation, spec.coefficients
        b = float(c.drift(t, h, y))
        obs_rate = 0.0
        unobs = []
        if sig.rate_bound > 0 and sig.kernel_q is not None:
            lam = float(sig.rate(t, h, y))
            if lam > 0:
                marks, q = sig.kernel_q.quadrature(t, h, y)
                for e, p in zip(marks, q):
                    if p <= 0:
                        continue
                    k = 0.0 if c.jump_i is None else float(c.jump_i(t, h, y, e))
                    if k != 0.0:
                        obs_rate += lam * p
                    else:
                        unobs.append((e, lam * p))
        if obs.rate_bound > 0 and obs.kernel_q is not None and c.size_i is not None:
            lam = float(obs.rate(t, h, y))
            if lam > 0:
                marks, q = obs.kernel_q.quadrature(t, h, y)
                obs_rate += lam * sum(p for z, p in zip(marks, q) if p > 0 and float(c.size_i(t, h, y, z)) != 0.0)
        out = _Local(b, obs_rate, tuple(unobs))
        if self.cache is not None:
            self.cache[self.key(h)] = out
        return out

    def arrays(self, state: FilterState, t, y):
        locs = [self.local(t, h, y) for h in state.histories]
        b = np.array([l.b for l in locs])
        lam = np.array([l.obs_rate for l in locs])
        return locs, b, lam


def _label_pos(state: FilterState) -> dict:
    return {current_value(h): i for i, h in enumerate(state.histories)}


def _per_entry(state: FilterState, per_hist: np.ndarray) -> np.ndarray:
    return per_hist[state.index]


# -- generators and gamma -------------------------------------------------------------------


def _generator(state, spec, t, f, y, kernel, rate_fn):
    if kernel is None:
        return 0.0
    total = 0.0
    for h, w in state.atoms():
        lam = 1.0 if rate_fn is None else float(rate_fn(t, h, y))
        if lam == 0.0:
            continue
        marks, q = kernel.quadrature(t, h, y)
        fh = float(f(h))
        acc = 0.0
        for e, p in zip(marks, q):
            if p <= 0:
                continue
            g = History(e) if state.lumped else join(h, t, e)
            acc += p * (float(f(g)) - fh)
        total += w * lam * acc
    return total


def apply_generator_L(state: FilterState, spec: ModelSpec, t: float, f, y: float = 0.0) -> float:
    """Filtered generator of the inaccessible signal jumps applied to ``f``."""
    if spec.signal.rate_bound <= 0:
        return 0.0
    return _generator(state, spec, t, f, y, spec.signal.kernel_q, spec.signal.rate)


def apply_generator_A(state: FilterState, spec: ModelSpec, t: float, f, y: float = 0.0) -> float:
    """Filtered jump operator of the predictable signal jumps applied to ``f``."""
    return _generator(state, spec, t, f, y, spec.signal.kernel_r, None)


def gamma(state: FilterState, spec: ModelSpec, t: float, f, y: float) -> float:
    """Diffusion coefficient of the filtering equation: (pi(f b) - pi(f) pi(b)) / sigma."""
    c = spec.coefficients
    atoms = state.atoms()
    w = np.array([a[1] for a in atoms])
    fv = np.array([float(f(h)) for h, _ in atoms])
    bv = np.array([float(c.drift(t, h, y)) for h, _ in atoms])
    # centered form: exactly zero when f is constant
    tot = float(np.dot(w, np.ones_like(fv)))
    pf = float(np.dot(w, fv)) / tot
    return float(np.dot(w, (fv - pf) * bv)) / tot / float(c.vol(t, y))


# -- continuous steps --------------------------------------------------------------------------


def _lumped_transition(state, locs, length, t):
    labels = [current_value(h) for h in state.histories]
    pos = {l: i for i, l in enumerate(labels)}
    w = state.weights
    flow = np.zeros_like(w)
    for i, loc in enumerate(locs):
        out = 0.0
        for e, r in loc.unobs:
            out += r
            flow[pos[e]] += length * r * w[i]
        if length * out >= 1.0:
            raise FilterError(f"time step too large for jump intensity {out!r}", t)
        flow[i] -= length * out * w[i]
    return w + flow


def _check_unobservable(locs, t):
    for loc in locs:
        if loc.unobs:
            raise ExactModeUnsupported(
                "exact mode needs every signal jump to be observed; "
                "an atom can jump without moving the observation",
                t,
            )


def _particle_unobserved_jumps(state, locs, t0, length, rng):
    """Thin unobservable signal jumps over one segment (at most one per particle)."""
    rates = np.array([sum(r for _, r in loc.unobs) for loc in locs])
    if not rates.any():
        return state
    p_jump = -np.expm1(-_per_entry(state, rates) * length)
    u = rng.random(len(state.index))
    movers = np.nonzero(u < p_jump)[0]
    if movers.size == 0:
        return state
    hist = list(state.histories)
    index = state.index.copy()
    for i in movers:
        hi = index[i]
        loc = locs[hi]
        marks = [e for e, _ in loc.unobs]
        pr = np.array([r for _, r in loc.unobs])
        e = marks[int(np.searchsorted(np.cumsum(pr), rng.random() * pr.sum(), side="right").clip(0, len(marks) - 1))]
        if state.lumped:
            index[i] = _label_pos(state)[e]
            continue
        h = hist[hi]
        tj = t0 + length * (1.0 - rng.random())
        if not tj > h.last_time:
            tj = np.nextafter(h.last_time, math.inf)
        hist.append(join(h, tj, e))
        index[i] = len(hist) - 1
    return FilterState(state.t, tuple(hist), index, state.weights, state.mode, state.lumped)


def step_continuous(
    state: FilterState,
    spec: ModelSpec,
    cell: tuple,
    dy: float,
    y0: float,
    *,
    rng: Optional[np.random.Generator] = None,
    evaluator: Optional[_Evaluator] = None,
):
    """Advance over ``cell = (t0, t1)`` with no event inside; ``dy`` is the observation increment.

    Returns ``(new_state, pi_b)`` where ``pi_b`` is the filtered drift at
    the start of the cell.
    """
    t0, t1 = cell
    length = t1 - t0
    ev = evaluator or _Evaluator(spec)
    locs, b, lam = ev.arrays(state, t0, y0)
    sigma = float(spec.coefficients.vol(t0, y0))
    bw = _per_entry(state, b)
    pi_b = float(np.dot(state.weights, bw))
    if state.mode == "exact":
        if state.lumped:
            w = _lumped_transition(state, locs, length, t0)
        else:
            _check_unobservable(locs, t0)
            w = state.weights
        new = FilterState(t1, state.histories, state.index, w, state.mode, state.lumped)
    else:
        new = _particle_unobserved_jumps(state, locs, t0, length, rng)
        if new is not state:
            locs, b, lam = ev.arrays(new, t0, y0)
            bw = _per_entry(new, b)
        new = FilterState(t1, new.histories, new.index, state.weights, new.mode, new.lumped)
    lamw = _per_entry(new, lam)
    with np.errstate(divide="ignore"):
        logw = np.log(new.weights) + (bw * dy - 0.5 * bw * bw * length) / (sigma * sigma) - lamw * length
    top = logw.max()
    if not math.isfinite(top):
        raise FilterCollapse("filter collapse", t1)
    w = _normalized(np.exp(logw - top), t1)
    new = FilterState(t1, new.histories, new.index, w, new.mode, new.lumped)
    if new.mode == "particle":
        new = _maybe_resample(new, rng)
    return new, pi_b


def step_continuous_equation(
    state: FilterState,
    spec: ModelSpec,
    cell: tuple,
    dy: float,
    y0: float,
    *,
    evaluator: Optional[_Evaluator] = None,
):
    """Explicit Euler step of the filtering equation on the atom weights.

    Each atom weight is the filter applied to the atom's indicator ``f``:
    it moves by the generator drift, by ``gamma dI`` with
    ``dI = (dy - pi(b) dt) / sigma``, and by the compensation of the
    observable jump intensity. Exact mode only. Returns ``(new_state, pi_b)``.
    """
    if state.mode != "exact":
        raise ValueError("the equation form is implemented for exact mode")
    t0, t1 = cell
    length = t1 - t0
    ev = evaluator or _Evaluator(spec)
    locs, b, lam = ev.arrays(state, t0, y0)
    sigma = float(spec.coefficients.vol(t0, y0))
    w = state.weights
    pi_b = float(np.dot(w, b))
    pi_lam = float(np.dot(w, lam))
    if state.lumped:
        drift = _lumped_transition(state, locs, length, t0) - w
    else:
        _check_unobservable(locs, t0)
        drift = np.zeros_like(w)
    d_innov = (dy - pi_b * length) / sigma
    gam = w * (b - pi_b) / sigma
    new_w = w + drift + gam * d_innov - w * (lam - pi_lam) * length
    new_w = np.clip(new_w, 0.0, None)
    new_w = _normalized(new_w, t1)
    return FilterState(t1, state.histories, state.index, new_w, state.mode, state.lumped), pi_b


# -- event updates --------------------------------------------------------------------------


class JumpDecomposition(NamedTuple):
    """Filtered jump measures at an observed jump, per functional.

    ``eta`` is the total likelihood, ``eta_f[j]`` the likelihood weighted by
    functional ``j`` before the jump, ``rho_f[j]`` the likelihood-weighted
    change of functional ``j`` across the jump. The correction applied to
    ``pi(f_j)`` is ``U_j = (eta_f[j] + rho_f[j]) / eta - pi_minus(f_j)``.
    """

    eta: float
    eta_f: np.ndarray
    rho_f: np.ndarray
    pi_minus: np.ndarray

    @property
    def U(self) -> np.ndarray:
        return (self.eta_f + self.rho_f) / self.eta - self.pi_minus


def _branches(state, spec, t, y_minus, size, kind):
    """Yield ``(entry_or_hist, new_history, weight_factor)`` per branch of each distinct history."""
    c = spec.coefficients
    sig, obs = spec.signal, spec.observation
    out = []
    for hi, h in enumerate(state.histories):
        br = []
        if kind == "jump":
            k_br = []
            if sig.rate_bound > 0 and sig.kernel_q is not None:
                lam = float(sig.rate(t, h, y_minus))
                if lam > 0:
                    marks, q = sig.kernel_q.quadrature(t, h, y_minus)
                    for e, p in zip(marks, q):
                        if p <= 0:
                            continue
                        lk = k_size_likelihood(spec, "i", t, h, y_minus, size, e)
                        if lk > 0:
                            k_br.append((e, lam * p * lk))
            g_w = 0.0
            if obs.rate_bound > 0 and obs.kernel_q is not None:
                lam = float(obs.rate(t, h, y_minus))
                if lam > 0:
                    g_w = lam * g_size_likelihood(spec, "i", t, h, y_minus, size)
            if k_br and not obs.mark_space.is_finite and c.lik_iG is not None:
                # an atom of the size law dominates a density
                g_w = 0.0
            if g_w > 0:
                br.append((None, g_w))
            br.extend(k_br)
        elif kind == "clock_m":
            marks, r = sig.kernel_r.quadrature(t, h, y_minus)
            for e, p in zip(marks, r):
                if p <= 0:
                    continue
                lk = k_size_likelihood(spec, "p", t, h, y_minus, size, e)
                if lk > 0:
                    br.append((e, p * lk))
        elif kind == "clock_n":
            lk = g_size_likelihood(spec, "p", t, h, y_minus, size)
            if lk > 0:
                br.append((None, lk))
        else:
            raise ValueError(f"unknown event kind {kind!r}")
        out.append(br)
    return out


def _target(state, h, e, t):
    if e is None:
        return h
    if state.lumped:
        return History(e)
    return join(h, t, e)


def _update_exact(state, spec, t, y_minus, size, kind):
    per_hist = _branches(state, spec, t, y_minus, size, kind)
    tot = np.bincount(state.index, weights=state.weights, minlength=len(state.histories))
    pairs = []
    for hi, br in enumerate(per_hist):
        if tot[hi] <= 0:
            continue
        h = state.histories[hi]
        for e, x in br:
            pairs.append((_target(state, h, e, t), tot[hi] * x))
    mass = sum(x for _, x in pairs)
    if not mass > 0:
        where = "at clock time" if kind != "jump" else "at observed jump"
        raise IncompatibleObservation(f"incompatible observation {where}: size {size!r} has zero likelihood", t)
    labels = [current_value(h) for h in state.histories] if state.lumped else None
    return _exact_state(t, pairs, state.lumped, labels)


def _update_particle(state, spec, t, y_minus, size, kind, rng):
    per_hist = _branches(state, spec, t, y_minus, size, kind)
    mass = np.array([sum(x for _, x in br) for br in per_hist])
    w = state.weights * mass[state.index]
    if not w.sum() > 0:
        raise IncompatibleObservation(f"incompatible observation: size {size!r} has zero likelihood", t)
    w = w / w.sum()
    # locally optimal proposal: choose the branch proportionally to its weight
    hist = list(state.histories)
    cache: dict = {}
    index = state.index.copy()
    for i, hi in enumerate(state.index):
        br = per_hist[hi]
        if not br or w[i] == 0:
            continue
        if len(br) == 1:
            j = 0
        else:
            cw = np.cumsum([x for _, x in br])
            j = int(min(np.searchsorted(cw, rng.random() * cw[-1], side="right"), len(br) - 1))
        e = br[j][0]
        if e is None:
            continue
        if state.lumped:
            index[i] = _label_pos(state)[e]
            continue
        key = (hi, j)
        if key not in cache:
            hist.append(_target(state, hist[hi], e, t))
            cache[key] = len(hist) - 1
        index[i] = cache[key]
    new = FilterState(t, tuple(hist), index, w, "particle", state.lumped)
    return _maybe_resample(new if state.lumped else _compact(new), rng)


def _dispatch(state, spec, t, y_minus, size, kind, rng):
    if state.mode == "exact":
        return _update_exact(state, spec, t, y_minus, size, kind)
    return _update_particle(state, spec, t, y_minus, size, kind, rng)


def update_inaccessible_jump(state, spec, t, y_minus, size, *, rng=None) -> FilterState:
    """Bayes update at an observed jump of size ``size`` that is not a clock time."""
    if size == 0:
        raise ValueError("observed jumps have nonzero size")
    return _dispatch(state, spec, t, y_minus, size, "jump", rng)


def update_predictable_m(state, spec, t, y_minus, size=0.0, *, rng=None) -> FilterState:
    """Update at a firing of the signal clock: atoms branch through the kernel R^m."""
    if spec.signal.kernel_r is None:
        raise FilterError("signal clock fired but the model has no kernel R^m", t)
    return _dispatch(state, spec, t, y_minus, size, "clock_m", rng)


def update_predictable_n(state, spec, t, y_minus, size=0.0, *, rng=None) -> FilterState:
    """Update at a firing of the observation clock: reweight, histories unchanged."""
    if spec.observation.kernel_r is None:
        raise FilterError("observation clock fired but the model has no kernel R^n", t)
    return _dispatch(state, spec, t, y_minus, size, "clock_n", rng)


def jump_decomposition(state, spec, t, y_minus, size, kind, functionals) -> JumpDecomposition:
    """Filtered jump measures and the correction term for each functional."""
    per_hist = _branches(state, spec, t, y_minus, size, kind)
    tot = np.bincount(state.index, weights=state.weights, minlength=len(state.histories))
    k = len(functionals)
    eta = 0.0
    eta_f = np.zeros(k)
    rho_f = np.zeros(k)
    pi_minus = np.zeros(k)
    for hi, br in enumerate(per_hist):
        h = state.histories[hi]
        fh = np.array([float(f(h)) for f in functionals])
        pi_minus += tot[hi] * fh
        for e, x in br:
            m = tot[hi] * x
            eta += m
            eta_f += m * fh
            if e is not None:
                g = _target(state, h, e, t)
                rho_f += m * (np.array([float(f(g)) for f in functionals]) - fh)
    if not eta > 0:
        raise IncompatibleObservation("incompatible observation: zero likelihood", t)
    return JumpDecomposition(eta, eta_f, rho_f, pi_minus)


# -- particle utilities ------------------------------------------------------------------------


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn by systematic resampling (one uniform, ``N`` evenly spaced points)."""
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cw = np.cumsum(weights)
    cw[-1] = 1.0
    return np.searchsorted(cw, positions, side="right").clip(0, n - 1)


def _compact(state: FilterState) -> FilterState:
    used = np.unique(state.index)
    if len(used) == len(state.histories):
        return state
    remap = np.full(len(state.histories), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    hist = tuple(state.histories[i] for i in used)
    return FilterState(state.t, hist, remap[state.index], state.weights, state.mode, state.lumped)


def _maybe_resample(state: FilterState, rng, threshold: float = 0.5) -> FilterState:
    n = len(state.weights)
    if state.ess() >= threshold * n:
        return state
    pick = systematic_resample(state.weights, rng)
    new = FilterState(state.t, state.histories, state.index[pick], np.full(n, 1.0 / n), "particle", state.lumped)
    return new if state.lumped else _compact(new)


# -- driver ----------------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterConfig:
    mode: str = "exact"
    n_particles: int = 1000
    seed: object = None
    functionals: tuple = ("one",)
    snapshot_times: tuple = ()
    continuous_form: str = "likelihood"
    lumped: Optional[bool] = None
    prior: Optional[dict] = None


@dataclass
class FilterTrajectory:
    """Filter output: one row per grid node and per event.

    ``estimates[r, j]`` is the filtered value of functional ``j`` at row
    ``r``; ``marginals[r]`` the law of the current value (finite E only).
    ``segment_pi_b`` holds the filtered drift at the start of every
    observation segment, in the order of :meth:`ObservationRecord.segments`.
    """

    times: np.ndarray
    is_grid: np.ndarray
    kinds: list
    functional_ids: list
    estimates: np.ndarray
    marginals: Optional[np.ndarray]
    labels: Optional[tuple]
    segment_pi_b: np.ndarray
    snapshots: dict = field(default_factory=dict)
    corrections: list = field(default_factory=list)
    final_state: Optional[FilterState] = None

    def grid_rows(self) -> np.ndarray:
        return np.nonzero(self.is_grid)[0]

    def grid_marginals(self) -> np.ndarray:
        return self.marginals[self.is_grid]

    def grid_times(self) -> np.ndarray:
        return self.times[self.is_grid]

    def estimate(self, fid: str) -> np.ndarray:
        return self.estimates[:, self.functional_ids.index(fid)]


def _collapse(state: FilterState, spec: ModelSpec) -> FilterState:
    return _exact_state(state.t, state.atoms(), True, spec.signal.space.labels)


def _check_functionals(functionals, state):
    if state.lumped:
        bad = [f.id for f in functionals if not f.markov]
        if bad:
            raise ExactModeUnsupported(
                f"functionals {bad} read the whole history; the lumped exact filter only tracks the current state"
            )


def run(spec: ModelSpec, observation: ObservationRecord, config: FilterConfig = FilterConfig()) -> FilterTrajectory:
    """Filter an observation record from time 0 to its horizon.

    Reads nothing but ``observation``. Events are dispatched by kind: jumps
    of Y outside clock times, signal-clock firings and observation-clock
    firings.
    """
    functionals = [f if isinstance(f, FunctionalPreset) else functional_from_id(f, spec) for f in config.functionals]
    rng = np.random.default_rng(config.seed)
    lumped = config.lumped
    if lumped is None and config.mode == "particle":
        lumped = spec.markov and spec.signal.space.is_finite and all(f.markov for f in functionals)
    state = init(config.prior, spec, config.mode, config.n_particles, rng, lumped=lumped)
    _check_functionals(functionals, state)
    if config.continuous_form not in ("likelihood", "equation"):
        raise ValueError(f"unknown continuous_form {config.continuous_form!r}")
    if config.continuous_form == "equation" and config.mode != "exact":
        raise ValueError("the equation form runs in exact mode only")
    labels = spec.signal.space.labels if spec.signal.space.is_finite else None
    can_collapse = (config.mode == "exact" and not state.lumped and spec.markov and labels is not None
                    and all(f.markov for f in functionals))
    ev = _Evaluator(spec)
    grid = observation.grid

    times, is_grid, kinds, est, marg, pib = [], [], [], [], [], []
    snaps: dict = {}
    pending_snaps = sorted(float(s) for s in config.snapshot_times)
    corrections = []

    def record(t, grid_row, kind):
        times.append(t)
        is_grid.append(grid_row)
        kinds.append(kind)
        est.append([state.expectation(f) for f in functionals])
        if labels is not None:
            marg.append(state.marginal(labels))
        while grid_row and pending_snaps and pending_snaps[0] <= t + 1e-12:
            snaps[pending_snaps.pop(0)] = [(h.to_dict(), w) for h, w in state.atoms()]

    record(0.0, True, "grid")
    try:
        for k, t0, t1, y0, y1m, event in observation.segments():
            if config.continuous_form == "equation":
                state, pb = step_continuous_equation(state, spec, (t0, t1), y1m - y0, y0, evaluator=ev)
            else:
                state, pb = step_continuous(state, spec, (t0, t1), y1m - y0, y0, rng=rng, evaluator=ev)
            pib.append(pb)
            if event is None:
                record(t1, True, "grid")
                continue
            before = np.array([state.expectation(f) for f in functionals])
            if event.kind == "jump":
                state = update_inaccessible_jump(state, spec, event.time, event.y_minus, event.size, rng=rng)
            elif event.kind == "clock_m":
                state = update_predictable_m(state, spec, event.time, event.y_minus, event.size, rng=rng)
            elif event.kind == "clock_n":
                state = update_predictable_n(state, spec, event.time, event.y_minus, event.size, rng=rng)
            else:
                raise FilterError(f"unknown event kind {event.kind!r}", event.time)
            if can_collapse and len(state.histories) > EXACT_ATOM_CAP:
                state = _collapse(state, spec)
            record(event.time, False, event.kind)
            corrections.append((event.time, event.kind, np.asarray(est[-1]) - before))
            if event.time == float(grid[k + 1]):
                record(event.time, True, "grid")
    except FilterError:
        raise
    except Exception as exc:
        t_now = times[-1] if times else 0.0
        raise FilterError(f"filter step failed: {exc!r}", t_now) from exc

    return FilterTrajectory(
        times=np.array(times),
        is_grid=np.array(is_grid, dtype=bool),
        kinds=kinds,
        functional_ids=[f.id for f in functionals],
        estimates=np.array(est),
        marginals=np.array(marg) if labels is not None else None,
        labels=labels,
        segment_pi_b=np.array(pib),
        snapshots=snaps,
        corrections=corrections,
        final_state=state,
    )
