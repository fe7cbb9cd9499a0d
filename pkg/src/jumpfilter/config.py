"""Run configuration: a YAML file naming a model preset and the run settings."""
from __future__ import annotations

import inspect
from dataclasses import dataclass, field, replace
from pathlib import Path
import yaml

from .model import PRESETS, ModelError, PredictableClock

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "build_spec"]

_TOP_KEYS = {
    "model", "horizon", "dt", "seed", "mode", "n_particles", "functionals",
    "snapshot_times", "diagnose", "compare", "outputs",
}


class ConfigError(ValueError):
    """Malformed or incomplete run configuration; names the offending field."""

    def __init__(self, field_name, message, line=None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{field_name}: {message}{where}")
        self.field = field_name
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    model: dict
    horizon: float
    dt: float = 1e-3
    seed: int = 0
    mode: str = "exact"
    n_particles: int = 1000
    functionals: tuple = ("one",)
    snapshot_times: tuple = ()
    diagnose: dict = field(default_factory=dict)
    compare: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        cfg = replace(self, **kw)
        _check_values(cfg)
        return cfg


def _check_values(cfg: RunConfig):
    if not isinstance(cfg.horizon, (int, float)) or isinstance(cfg.horizon, bool) or not cfg.horizon > 0:
        raise ConfigError("horizon", f"must be > 0, got {cfg.horizon!r}")
    if not isinstance(cfg.dt, (int, float)) or isinstance(cfg.dt, bool) or not cfg.dt > 0:
        raise ConfigError("dt", f"must be > 0, got {cfg.dt!r}")
    if cfg.dt > cfg.horizon:
        raise ConfigError("dt", "must not exceed the horizon")
    if cfg.mode not in ("exact", "particle"):
        raise ConfigError("mode", f"must be 'exact' or 'particle', got {cfg.mode!r}")
    if not isinstance(cfg.n_particles, int) or isinstance(cfg.n_particles, bool) or cfg.n_particles < 1:
        raise ConfigError("n_particles", f"must be an integer >= 1, got {cfg.n_particles!r}")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ConfigError("seed", f"must be a nonnegative integer, got {cfg.seed!r}")


def parse_config(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    for req in ("model", "horizon"):
        if req not in data:
            raise ConfigError(req, "missing required field")
    model = data["model"]
    if not isinstance(model, dict) or "preset" not in model:
        raise ConfigError("model.preset", "missing required field")
    if model["preset"] not in PRESETS:
        raise ConfigError("model.preset", f"unknown preset {model['preset']!r}; choose from {sorted(PRESETS)}")
    cfg = RunConfig(
        model=dict(model),
        horizon=data["horizon"],
        dt=data.get("dt", 1e-3),
        seed=data.get("seed", 0),
        mode=data.get("mode", "exact"),
        n_particles=data.get("n_particles", 1000),
        functionals=tuple(data.get("functionals", ("one",))),
        snapshot_times=tuple(data.get("snapshot_times", ())),
        diagnose=dict(data.get("diagnose") or {}),
        compare=dict(data.get("compare") or {}),
        outputs=dict(data.get("outputs") or {}),
    )
    _check_values(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("--config", f"file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError("<syntax>", str(getattr(exc, "problem", exc)), mark.line + 1 if mark else None) from exc
    return parse_config(data)


def _clock(value, name):
    if value is None or isinstance(value, PredictableClock):
        return value
    try:
        return PredictableClock.from_dict(value)
    except (KeyError, ModelError, TypeError, AttributeError) as exc:
        raise ConfigError(f"model.params.{name}", f"bad clock description: {exc}") from exc


def build_spec(model: dict):
    """Instantiate the preset named in a ``model`` config block."""
    name = model["preset"]
    factory = PRESETS[name]
    params = dict(model.get("params") or {})
    for key in ("clock_m", "clock_n"):
        if key in params:
            params[key] = _clock(params[key], key)
    sig = inspect.signature(factory)
    accepted = set(sig.parameters)
    for key in params:
        if key not in accepted:
            raise ConfigError(f"model.params.{key}", f"not a parameter of preset {name!r}")
    for pname, p in sig.parameters.items():
        if p.default is inspect.Parameter.empty and p.kind != p.VAR_KEYWORD and pname not in params:
            raise ConfigError(f"model.params.{pname}", "missing required field")
    try:
        return factory(**params)
    except ModelError as exc:
        raise ConfigError("model.params", str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError("model.params", str(exc)) from exc
