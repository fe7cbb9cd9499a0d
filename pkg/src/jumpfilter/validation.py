"""Input validation helpers shared by the estimator wrapper and the CLI."""
from __future__ import annotations

import math
from numbers import Real

import numpy as np

from .history import History
from .model import ModelSpec, validate
from .simulate import ObservationRecord, ObservedEvent

__all__ = [
    "check_positive",
    "check_probability_vector",
    "check_spec",
    "check_observation",
    "check_history",
]

_KINDS = ("jump", "clock_m", "clock_n")


def check_positive(name: str, value, *, integer: bool = False):
    if integer:
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
        return int(value)
    if isinstance(value, bool) or not isinstance(value, Real) or not (value > 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_probability_vector(p, *, name: str = "probabilities", tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} must be finite and nonnegative")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"{name} must sum to 1, got {p.sum()!r}")
    return p


def check_spec(spec: ModelSpec) -> ModelSpec:
    if not isinstance(spec, ModelSpec):
        raise TypeError(f"expected a ModelSpec, got {type(spec).__name__}")
    findings = validate(spec)
    if findings:
        raise ValueError("invalid model: " + "; ".join(findings))
    return spec


def check_history(h) -> History:
    if isinstance(h, History):
        return h
    if isinstance(h, dict):
        return History.from_dict(h)
    raise TypeError(f"expected a History, got {type(h).__name__}")


def check_observation(obs) -> ObservationRecord:
    """Coerce to :class:`ObservationRecord` and check its internal consistency."""
    if isinstance(obs, dict):
        obs = ObservationRecord.from_dict(obs)
    if not isinstance(obs, ObservationRecord):
        raise TypeError(f"expected an ObservationRecord, got {type(obs).__name__}")
    grid = np.asarray(obs.grid, dtype=float)
    ys = np.asarray(obs.y_samples, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("observation grid needs at least two nodes")
    if grid[0] != 0.0:
        raise ValueError("observation grid must start at 0")
    steps = np.diff(grid)
    if np.any(steps <= 0):
        raise ValueError("observation grid must be strictly increasing")
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, grid[-1]):
        raise ValueError("observation grid must be uniform")
    if ys.shape != grid.shape:
        raise ValueError(f"y_samples has shape {ys.shape}, grid has {grid.shape}")
    if not np.all(np.isfinite(ys)):
        raise ValueError("y_samples must be finite")
    prev = 0.0
    for ev in obs.events:
        if not isinstance(ev, ObservedEvent):
            raise TypeError("events must be ObservedEvent records")
        if ev.kind not in _KINDS:
            raise ValueError(f"unknown event kind {ev.kind!r}")
        if not (prev < ev.time <= grid[-1]):
            raise ValueError(f"event times must be increasing inside (0, horizon], got {ev.time!r}")
        if not (math.isfinite(ev.y_minus) and math.isfinite(ev.size)):
            raise ValueError(f"event at t={ev.time!r} has non-finite values")
        if ev.kind == "jump" and ev.size == 0.0:
            raise ValueError(f"observed jump at t={ev.time!r} has size 0")
        prev = ev.time
    return obs
