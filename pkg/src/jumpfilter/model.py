"""Local characteristics of the signal/observation pair and the model presets.

Every user-supplied characteristic takes ``(t, h, y)`` where ``h`` is the
signal :class:`~jumpfilter.history.History` (left limit at jump times) and
``y`` the observation value (left limit at jump times). Observation
volatility takes ``(t, y)``. Jump maps take an extra mark argument.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, NamedTuple, Optional, Sequence

import numpy as np

from .history import FiniteSpace, History, IntervalSpace, RealLine, current_value, join

__all__ = [
    "ModelError",
    "CharacteristicError",
    "Kernel",
    "PredictableClock",
    "ObservationCoefficients",
    "SignalSpec",
    "ObservationSpec",
    "ModelSpec",
    "Characteristics",
    "validate",
    "evaluate_characteristics",
    "finite_model",
    "preset_deterministic_jumps",
    "preset_threshold_regime",
    "preset_reflecting",
    "sizes_match",
    "k_size_likelihood",
    "g_size_likelihood",
    "PRESETS",
]

KERNEL_MASS_TOL = 1e-9
SIZE_MATCH_RTOL = 1e-12


class ModelError(ValueError):
    """Invalid model construction (bad preset parameters)."""


class CharacteristicError(RuntimeError):
    """A user-supplied characteristic raised; carries where it happened."""

    def __init__(self, name, t, exc):
        super().__init__(f"{name} failed at t={t!r}: {exc!r}")
        self.name = name
        self.t = t


def _zero(*args):
    return 0.0


# -- kernels -------------------------------------------------------------------


@dataclass(frozen=True)
class Kernel:
    """Probability transition kernel onto a finite or continuous mark space.

    Finite kernels give ``probs(t, h, y)`` aligned with ``marks``. Continuous
    kernels give a ``sampler(t, h, y, rng)``, a ``density(t, h, y, mark)``
    and a bounded ``support`` used for Gauss-Legendre quadrature.
    """

    marks: Optional[tuple] = None
    probs: Optional[Callable] = None
    sampler: Optional[Callable] = None
    density: Optional[Callable] = None
    support: Optional[tuple] = None
    n_nodes: int = 64
    name: str = "kernel"

    @property
    def is_finite(self) -> bool:
        return self.marks is not None

    @classmethod
    def fixed(cls, marks, probs, name="kernel"):
        p = np.asarray(probs, dtype=float)
        if p.shape != (len(marks),):
            raise ModelError(f"{name}: {len(marks)} marks but probability vector of shape {p.shape}")
        p.setflags(write=False)
        return cls(marks=tuple(marks), probs=lambda t, h, y: p, name=name)

    @classmethod
    def by_state(cls, space: FiniteSpace, marks, matrix, name="kernel"):
        """Row of ``matrix`` selected by the current value of the history."""
        m = np.asarray(matrix, dtype=float)
        if m.shape != (len(space.labels), len(marks)):
            raise ModelError(
                f"{name}: expected a {len(space.labels)}x{len(marks)} matrix, got shape {m.shape}"
            )
        m.setflags(write=False)
        rows = {label: m[i] for i, label in enumerate(space.labels)}
        return cls(marks=tuple(marks), probs=lambda t, h, y: rows[current_value(h)], name=name)

    @classmethod
    def continuous(cls, sampler, density, support, n_nodes=64, name="kernel"):
        return cls(sampler=sampler, density=density, support=tuple(support), n_nodes=n_nodes, name=name)

    def probabilities(self, t, h, y) -> np.ndarray:
        return np.asarray(self.probs(t, h, y), dtype=float)

    def quadrature(self, t, h, y):
        """Marks and weights such that sum(w * g(mark)) integrates g against the kernel."""
        if self.is_finite:
            return self.marks, self.probabilities(t, h, y)
        nodes, wts = np.polynomial.legendre.leggauss(self.n_nodes)
        lo, hi = self.support
        x = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        dens = np.array([self.density(t, h, y, float(v)) for v in x])
        return tuple(float(v) for v in x), 0.5 * (hi - lo) * wts * dens

    def mass(self, t, h, y, mark) -> float:
        if self.is_finite:
            return float(self.probabilities(t, h, y)[self.marks.index(mark)])
        return float(self.density(t, h, y, mark))

    def sample(self, t, h, y, rng: np.random.Generator):
        if self.is_finite:
            p = self.probabilities(t, h, y)
            u = rng.random() * p.sum()
            k = int(np.searchsorted(np.cumsum(p), u, side="right"))
            return self.marks[min(k, len(self.marks) - 1)]
        return self.sampler(t, h, y, rng)


# -- clocks ------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictableClock:
    """Observation-predictable counting process driving predictable jumps.

    ``deterministic`` fires at listed times. ``threshold`` fires when the
    observation path crosses ``level`` in ``direction``; after a firing it
    stays disarmed for one grid cell and until the path has moved at least
    ``rearm`` away from the level.
    """

    kind: str
    times: tuple = ()
    level: float = 0.0
    direction: str = "up"
    rearm: float = 0.0

    @classmethod
    def deterministic(cls, times):
        return cls(kind="deterministic", times=tuple(float(t) for t in times))

    @classmethod
    def threshold(cls, level, direction="up", rearm=0.0):
        return cls(kind="threshold", level=float(level), direction=direction, rearm=float(rearm))

    def to_dict(self) -> dict:
        if self.kind == "deterministic":
            return {"kind": "deterministic", "times": list(self.times)}
        return {"kind": "threshold", "level": self.level, "direction": self.direction, "rearm": self.rearm}

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return None
        kind = d.get("kind")
        if kind == "deterministic":
            return cls.deterministic(d.get("times", ()))
        if kind == "threshold":
            return cls.threshold(d["level"], d.get("direction", "up"), d.get("rearm", 0.0))
        raise ModelError(f"unknown clock kind {kind!r}")


# -- coefficients and specs ----------------------------------------------------------


@dataclass(frozen=True)
class ObservationCoefficients:
    """Drift, volatility, jump maps and optional jump-size likelihoods.

    ``jump_i``/``jump_p`` are the maps from a new signal value to the
    observation jump (``None`` means identically zero); ``size_i``/``size_p``
    map observation marks to jump sizes. ``lik_*K(t, h, y, size, e)`` and
    ``lik_*G(t, h, y, size)`` override the likelihoods derived from the maps,
    and are required for continuous observation marks.
    """

    drift: Callable = _zero
    vol: Callable = lambda t, y: 1.0
    vol_min: float = 1.0
    jump_i: Optional[Callable] = None
    jump_p: Optional[Callable] = None
    size_i: Optional[Callable] = None
    size_p: Optional[Callable] = None
    lik_iK: Optional[Callable] = None
    lik_pK: Optional[Callable] = None
    lik_iG: Optional[Callable] = None
    lik_pG: Optional[Callable] = None


@dataclass(frozen=True)
class SignalSpec:
    space: Any
    initial: Any
    rate: Callable = _zero
    rate_bound: float = 0.0
    kernel_q: Optional[Kernel] = None
    kernel_r: Optional[Kernel] = None
    clock: Optional[PredictableClock] = None
    initial_law: Optional[dict] = None

    def prior(self) -> dict:
        if self.initial_law is not None:
            return dict(self.initial_law)
        return {self.initial: 1.0}


@dataclass(frozen=True)
class ObservationSpec:
    mark_space: Any = field(default_factory=RealLine)
    y0: float = 0.0
    rate: Callable = _zero
    rate_bound: float = 0.0
    kernel_q: Optional[Kernel] = None
    kernel_r: Optional[Kernel] = None
    clock: Optional[PredictableClock] = None
    coefficients: ObservationCoefficients = field(default_factory=ObservationCoefficients)


@dataclass(frozen=True)
class ModelSpec:
    """Complete description of the signal/observation pair.

    ``markov`` declares that every characteristic depends on the history
    only through its current value; ``autonomous`` that the rates, kernels
    and jump maps of the totally inaccessible streams do not depend on time
    or on the observation value. Both flags enable cheaper evaluation paths.
    """

    signal: SignalSpec
    observation: ObservationSpec
    name: str = "custom"
    markov: bool = False
    autonomous: bool = False
    params: Optional[dict] = None

    @property
    def coefficients(self) -> ObservationCoefficients:
        return self.observation.coefficients

    @property
    def states(self) -> tuple:
        if not self.signal.space.is_finite:
            raise ModelError("the signal space is not finite")
        return self.signal.space.labels

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)


class Characteristics(NamedTuple):
    rate_m: float
    rate_n: float
    drift: float
    vol: float
    clock_m: bool
    clock_n: bool


def _call(name, fn, t, *args):
    try:
        return float(fn(t, *args))
    except CharacteristicError:
        raise
    except Exception as exc:
        raise CharacteristicError(name, t, exc) from exc


def evaluate_characteristics(spec: ModelSpec, t: float, h: History, y: float) -> Characteristics:
    """Pointwise evaluation of rates, drift and volatility; clock flags say which clocks exist."""
    obs = spec.observation
    return Characteristics(
        rate_m=_call("signal rate", spec.signal.rate, t, h, y),
        rate_n=_call("observation rate", obs.rate, t, h, y),
        drift=_call("drift", obs.coefficients.drift, t, h, y),
        vol=_call("volatility", obs.coefficients.vol, t, y),
        clock_m=spec.signal.clock is not None,
        clock_n=obs.clock is not None,
    )


# -- jump-size likelihoods ----------------------------------------------------------


def sizes_match(a: float, b: float) -> bool:
    return a == b or abs(a - b) <= SIZE_MATCH_RTOL * max(1.0, abs(a), abs(b))


def k_size_likelihood(spec: ModelSpec, stream: str, t, h, y, size, e) -> float:
    """Likelihood of an observation jump ``size`` given a signal jump to ``e``.

    ``stream`` is ``"i"`` (inaccessible) or ``"p"`` (predictable). Without a
    user likelihood the jump map is deterministic, so this is an indicator.
    """
    c = spec.coefficients
    lik = c.lik_iK if stream == "i" else c.lik_pK
    if lik is not None:
        return float(lik(t, h, y, size, e))
    fn = c.jump_i if stream == "i" else c.jump_p
    k = 0.0 if fn is None else float(fn(t, h, y, e))
    return 1.0 if sizes_match(k, size) else 0.0


def g_size_likelihood(spec: ModelSpec, stream: str, t, h, y, size) -> float:
    """Likelihood of an observation jump ``size`` from the observation mark stream."""
    c = spec.coefficients
    lik = c.lik_iG if stream == "i" else c.lik_pG
    if lik is not None:
        return float(lik(t, h, y, size))
    kernel = spec.observation.kernel_q if stream == "i" else spec.observation.kernel_r
    fn = c.size_i if stream == "i" else c.size_p
    if kernel is None:
        return 1.0 if size == 0 else 0.0
    if not kernel.is_finite:
        raise ModelError(f"continuous observation marks need an explicit lik_{stream}G")
    marks, probs = kernel.quadrature(t, h, y)
    total = 0.0
    for z, p in zip(marks, probs):
        g = 0.0 if fn is None else float(fn(t, h, y, z))
        if p > 0 and sizes_match(g, size):
            total += p
    return total


# -- validation ----------------------------------------------------------------------


def _probe_histories(spec: ModelSpec):
    sig = spec.signal
    starts = list(sig.prior()) if sig.initial_law else [sig.initial]
    out = [History(s) for s in starts]
    if sig.space.is_finite:
        for s in starts:
            for e in sig.space.labels:
                if e != s:
                    out.append(join(History(s), 0.25, e))
    return out


def _check_kernel(findings, kernel, name, t, h, y, current=None):
    try:
        marks, w = kernel.quadrature(t, h, y)
    except Exception as exc:
        findings.append(f"kernel {name} failed at t={t}: {exc!r}")
        return
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        findings.append(f"kernel {name} has negative mass")
    total = float(w.sum())
    tol = KERNEL_MASS_TOL if kernel.is_finite else 1e-4
    if abs(total - 1.0) > tol:
        findings.append(f"kernel {name} mass {total:.6g} ≠ 1")
    if current is not None and kernel.is_finite and current in kernel.marks:
        if w[kernel.marks.index(current)] > 0:
            findings.append(f"kernel {name} charges the current state {current!r}")


def _check_clock(findings, clock, name):
    if clock is None:
        return
    if clock.kind == "deterministic":
        ts = list(clock.times)
        if any(not (t > 0 and math.isfinite(t)) for t in ts):
            findings.append(f"clock {name}: deterministic times must be positive and finite")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            findings.append(f"clock {name}: deterministic times must be strictly increasing")
    elif clock.kind == "threshold":
        if clock.direction not in ("up", "down", "any"):
            findings.append(f"clock {name}: direction {clock.direction!r} not one of up/down/any")
        if not math.isfinite(clock.level):
            findings.append(f"clock {name}: level must be finite")
        if clock.rearm < 0:
            findings.append(f"clock {name}: rearm distance must be nonnegative")
    else:
        findings.append(f"clock {name}: kind {clock.kind!r} is not representable")


def validate(spec: ModelSpec, probe_times: Sequence[float] = (1e-3, 0.5, 1.0, 2.0)) -> list:
    """Return a list of human-readable findings; empty means the model is valid."""
    findings: list = []
    sig, obs, c = spec.signal, spec.observation, spec.coefficients
    if sig.initial not in sig.space:
        findings.append(f"initial value {sig.initial!r} not in the signal space")
    if sig.initial_law is not None:
        tot = sum(sig.initial_law.values())
        if abs(tot - 1.0) > KERNEL_MASS_TOL or any(p < 0 for p in sig.initial_law.values()):
            findings.append(f"initial law mass {tot:.6g} ≠ 1")
        if any(k not in sig.space for k in sig.initial_law):
            findings.append("initial law charges labels outside the signal space")
    if not math.isfinite(obs.y0):
        findings.append("y0 must be finite")
    for label, bound in (("signal", sig.rate_bound), ("observation", obs.rate_bound)):
        if not (bound >= 0 and math.isfinite(bound)):
            findings.append(f"{label} rate bound must be finite and nonnegative")
    if sig.rate_bound > 0 and sig.kernel_q is None:
        findings.append("signal rate bound > 0 but kernel_q is missing")
    if sig.clock is not None and sig.kernel_r is None:
        findings.append("clock_m present but kernel_r is missing")
    if obs.rate_bound > 0 and obs.kernel_q is None:
        findings.append("observation rate bound > 0 but kernel_q is missing")
    if obs.clock is not None and obs.kernel_r is None:
        findings.append("clock_n present but kernel_r is missing")
    _check_clock(findings, sig.clock, "m")
    _check_clock(findings, obs.clock, "n")
    if sig.clock is not None and obs.clock is not None:
        if sig.clock.kind == obs.clock.kind == "deterministic" and set(sig.clock.times) & set(obs.clock.times):
            findings.append("clock_m and clock_n share firing times")
        if sig.clock.kind == obs.clock.kind == "threshold" and sig.clock.level == obs.clock.level:
            findings.append("clock_m and clock_n share the same threshold level")
    if not c.vol_min > 0:
        findings.append("volatility not bounded below (vol_min must be > 0)")
    if not obs.mark_space.is_finite and (obs.kernel_q is not None and c.lik_iG is None):
        findings.append("observation mark space is continuous: lik_iG required")
    if not obs.mark_space.is_finite and (obs.kernel_r is not None and c.lik_pG is None):
        findings.append("observation mark space is continuous: lik_pG required")

    ys = sorted({-2.0, 0.0, 2.0, float(obs.y0)})
    vol_reported = False
    for t in probe_times:
        for y in ys:
            try:
                v = float(c.vol(t, y))
            except Exception as exc:
                findings.append(f"volatility failed at t={t}, y={y}: {exc!r}")
                continue
            if not vol_reported and not (v >= c.vol_min and v > 0):
                findings.append(f"volatility not bounded below: vol({t}, {y}) = {v:.6g} < {c.vol_min}")
                vol_reported = True
            for h in _probe_histories(spec):
                cur = current_value(h)
                for label, fn, bound in (
                    ("signal", sig.rate, sig.rate_bound),
                    ("observation", obs.rate, obs.rate_bound),
                ):
                    try:
                        r = float(fn(t, h, y))
                    except Exception as exc:
                        findings.append(f"{label} rate failed at t={t}: {exc!r}")
                        continue
                    if r < 0:
                        findings.append(f"{label} rate negative ({r:.6g}) at t={t}, y={y}")
                    elif r > bound * (1 + 1e-12):
                        findings.append(f"{label} rate {r:.6g} exceeds its bound {bound:.6g} at t={t}, y={y}")
                try:
                    float(c.drift(t, h, y))
                except Exception as exc:
                    findings.append(f"drift failed at t={t}: {exc!r}")
                if sig.kernel_q is not None:
                    _check_kernel(findings, sig.kernel_q, "Q^m", t, h, y, cur)
                if sig.kernel_r is not None:
                    _check_kernel(findings, sig.kernel_r, "R^m", t, h, y, cur)
                if obs.kernel_q is not None:
                    _check_kernel(findings, obs.kernel_q, "Q^n", t, h, y)
                if obs.kernel_r is not None:
                    _check_kernel(findings, obs.kernel_r, "R^n", t, h, y)
    # one message per distinct problem
    seen, unique = set(), []
    for f in findings:
        key = f.split(" at t=")[0]
        if key not in seen:
            seen.add(key)
            unique.append(f)
    return unique


# -- tabulated finite models and presets ------------------------------------------------


def _per_state(value, n, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if arr.shape != (n,):
        raise ModelError(f"{name} must be a scalar or have one entry per state")
    return arr


def _check_transition_matrix(r, n, name):
    r = np.asarray(r, dtype=float)
    if r.shape != (n, n):
        raise ModelError(f"{name} must be {n}x{n}, got shape {r.shape}")
    if np.any(r < 0):
        raise ModelError(f"{name} has negative entries")
    if np.any(np.abs(np.diag(r)) > 0):
        raise ModelError(f"{name} must have a zero diagonal")
    sums = r.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > KERNEL_MASS_TOL):
        raise ModelError(f"{name} rows must sum to 1, got {sums.tolist()}")
    return r


def finite_model(
    states: Sequence,
    *,
    initial=None,
    initial_law=None,
    rate_m=0.0,
    q_matrix=None,
    r_matrix=None,
    clock_m: Optional[PredictableClock] = None,
    rate_n=0.0,
    z_marks=None,
    qn_probs=None,
    rn_probs=None,
    clock_n: Optional[PredictableClock] = None,
    drift=0.0,
    sigma=1.0,
    jump_i=None,
    jump_p=None,
    size_i=None,
    size_p=None,
    y0: float = 0.0,
    name: str = "custom",
) -> ModelSpec:
    """Model whose characteristics are tables indexed by the current signal state.

    Observation jumps are ``jump_i[e]`` / ``jump_p[e]`` for a signal jump to
    ``e`` and ``size_i[k]`` / ``size_p[k]`` for the k-th observation mark
    (default: the mark itself). Omitted jump tables mean no observation jump.
    """
    space = FiniteSpace(tuple(states))
    n = len(space.labels)
    idx = {s: i for i, s in enumerate(space.labels)}
    if initial is None:
        initial = space.labels[0]
    if initial not in space:
        raise ModelError(f"initial state {initial!r} not among {space.labels!r}")
    if initial_law is not None:
        if isinstance(initial_law, dict):
            law = {k: float(v) for k, v in initial_law.items()}
        else:
            law = {s: float(p) for s, p in zip(space.labels, initial_law)}
        if abs(sum(law.values()) - 1.0) > KERNEL_MASS_TOL:
            raise ModelError("initial_law must sum to 1")
        initial_law = law

    lam_m = _per_state(rate_m, n, "rate_m")
    lam_n = _per_state(rate_n, n, "rate_n")
    b = _per_state(drift, n, "drift")
    sigma = float(sigma)
    if np.any(lam_m < 0) or np.any(lam_n < 0):
        raise ModelError("rates must be nonnegative")

    kernel_q = kernel_r = None
    if q_matrix is not None:
        kernel_q = Kernel.by_state(space, space.labels, _check_transition_matrix(q_matrix, n, "q_matrix"), "Q^m")
    elif np.any(lam_m > 0):
        raise ModelError("rate_m > 0 needs q_matrix")
    if r_matrix is not None:
        kernel_r = Kernel.by_state(space, space.labels, _check_transition_matrix(r_matrix, n, "r_matrix"), "R^m")
    elif clock_m is not None:
        raise ModelError("clock_m needs r_matrix")

    zspace = RealLine()
    kernel_qn = kernel_rn = None
    if z_marks is not None:
        zspace = FiniteSpace(tuple(z_marks))
        nz = len(zspace.labels)

        def _zkernel(p, kname):
            p = np.asarray(p, dtype=float)
            if p.ndim == 1:
                return Kernel.fixed(zspace.labels, p, kname)
            return Kernel.by_state(space, zspace.labels, p, kname)

        if qn_probs is not None:
            kernel_qn = _zkernel(qn_probs, "Q^n")
        elif np.any(lam_n > 0):
            kernel_qn = Kernel.fixed(zspace.labels, np.full(nz, 1.0 / nz), "Q^n")
        if rn_probs is not None:
            kernel_rn = _zkernel(rn_probs, "R^n")
        elif clock_n is not None:
            kernel_rn = Kernel.fixed(zspace.labels, np.full(nz, 1.0 / nz), "R^n")
    elif np.any(lam_n > 0) or clock_n is not None:
        raise ModelError("observation marks (z_marks) required when rate_n > 0 or clock_n is set")

    def _state_table(values, label):
        if values is None:
            return None
        arr = _per_state(values, n, label)
        if not np.any(arr != 0):
            return None
        table = {s: float(arr[i]) for s, i in idx.items()}
        return lambda t, h, y, e: table[e]

    def _mark_table(values, label):
        if z_marks is None:
            return None
        if values is None:
            table = {z: float(z) for z in zspace.labels}
        else:
            arr = np.broadcast_to(np.asarray(values, dtype=float), (len(zspace.labels),))
            table = {z: float(arr[k]) for k, z in enumerate(zspace.labels)}
        if not any(v != 0 for v in table.values()):
            return None
        return lambda t, h, y, z: table[z]

    rate_m_tab = {s: float(lam_m[i]) for s, i in idx.items()}
    rate_n_tab = {s: float(lam_n[i]) for s, i in idx.items()}
    drift_tab = {s: float(b[i]) for s, i in idx.items()}

    coeffs = ObservationCoefficients(
        drift=lambda t, h, y: drift_tab[current_value(h)],
        vol=lambda t, y: sigma,
        vol_min=sigma,
        jump_i=_state_table(jump_i, "jump_i"),
        jump_p=_state_table(jump_p, "jump_p"),
        size_i=_mark_table(size_i, "size_i"),
        size_p=_mark_table(size_p, "size_p"),
    )
    signal = SignalSpec(
        space=space,
        initial=initial,
        rate=(lambda t, h, y: rate_m_tab[current_value(h)]) if np.any(lam_m > 0) else _zero,
        rate_bound=float(lam_m.max()),
        kernel_q=kernel_q,
        kernel_r=kernel_r,
        clock=clock_m,
        initial_law=initial_law,
    )
    observation = ObservationSpec(
        mark_space=zspace,
        y0=float(y0),
        rate=(lambda t, h, y: rate_n_tab[current_value(h)]) if np.any(lam_n > 0) else _zero,
        rate_bound=float(lam_n.max()),
        kernel_q=kernel_qn,
        kernel_r=kernel_rn,
        clock=clock_n,
        coefficients=coeffs,
    )
    return ModelSpec(signal=signal, observation=observation, name=name, markov=True, autonomous=True)


def preset_deterministic_jumps(states, r_matrix, times, drift, sigma, *, y0=0.0, initial=None, initial_law=None):
    """Signal jumping only at known dates, new position drawn from ``r_matrix``."""
    spec = finite_model(
        states,
        initial=initial,
        initial_law=initial_law,
        r_matrix=r_matrix,
        clock_m=PredictableClock.deterministic(times),
        drift=drift,
        sigma=sigma,
        y0=y0,
        name="deterministic_jumps",
    )
    return spec.with_(
        params=dict(states=list(states), r_matrix=np.asarray(r_matrix).tolist(), times=list(times),
                    drift=np.asarray(drift).tolist(), sigma=sigma, y0=y0)
    )


def preset_threshold_regime(
    states, r_matrix, level, drift, sigma, *, direction="up", rearm=0.1, y0=0.0, initial=None, initial_law=None
):
    """Regime-switching drift; the regime jumps whenever the observation hits ``level``."""
    spec = finite_model(
        states,
        initial=initial,
        initial_law=initial_law,
        r_matrix=r_matrix,
        clock_m=PredictableClock.threshold(level, direction, rearm),
        drift=drift,
        sigma=sigma,
        y0=y0,
        name="threshold_regime",
    )
    return spec.with_(
        params=dict(states=list(states), r_matrix=np.asarray(r_matrix).tolist(), level=level,
                    drift=np.asarray(drift).tolist(), sigma=sigma, direction=direction, rearm=rearm, y0=y0)
    )


def preset_reflecting(
    states,
    low,
    up,
    *,
    drift=0.0,
    sigma=1.0,
    r_matrix=None,
    kick_low=None,
    rate_m=0.0,
    q_matrix=None,
    jump_i=None,
    z_marks=(1.0,),
    rn_probs=None,
    kick_up=None,
    rate_n=0.0,
    qn_probs=None,
    size_i=None,
    y0=None,
    initial=None,
    initial_law=None,
):
    """Observation kept in ``(low, up)`` by predictable kicks at the two barriers.

    Hitting ``low`` moves the signal through ``r_matrix`` and kicks the
    observation up by ``kick_low[new state]``; hitting ``up`` draws an
    observation mark from ``rn_probs`` and kicks by ``kick_up[mark]``.
    """
    low, up = float(low), float(up)
    if not low < up:
        raise ModelError(f"need low < up, got low={low}, up={up}")
    if y0 is None:
        y0 = 0.5 * (low + up)
    if not low < y0 < up:
        raise ModelError("y0 must lie strictly between the barriers")
    n = len(states)
    width = up - low
    if r_matrix is None:
        r_matrix = (np.ones((n, n)) - np.eye(n)) / max(n - 1, 1)
    if kick_low is None:
        kick_low = 0.25 * width
    if kick_up is None:
        kick_up = -0.25 * width
    kl = _per_state(kick_low, n, "kick_low")
    if np.any(kl <= 0):
        raise ModelError("kick_low must be positive (push away from the lower barrier)")
    ku = np.broadcast_to(np.asarray(kick_up, dtype=float), (len(z_marks),))
    if np.any(ku >= 0):
        raise ModelError("kick_up must be negative (push away from the upper barrier)")
    spec = finite_model(
        states,
        initial=initial,
        initial_law=initial_law,
        rate_m=rate_m,
        q_matrix=q_matrix,
        r_matrix=r_matrix,
        clock_m=PredictableClock.threshold(low, "down", 0.0),
        rate_n=rate_n,
        z_marks=z_marks,
        qn_probs=qn_probs,
        rn_probs=rn_probs,
        clock_n=PredictableClock.threshold(up, "up", 0.0),
        drift=drift,
        sigma=sigma,
        jump_i=jump_i,
        jump_p=kl,
        size_i=size_i,
        size_p=ku,
        y0=y0,
        name="reflecting",
    )
    return spec.with_(params=dict(states=list(states), low=low, up=up))


PRESETS = {
    "deterministic_jumps": preset_deterministic_jumps,
    "threshold_regime": preset_threshold_regime,
    "reflecting": preset_reflecting,
    "custom": finite_model,
}
