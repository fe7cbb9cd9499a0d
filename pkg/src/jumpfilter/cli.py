"""Command-line entry points.

Every command reads a YAML run config and writes its outputs under ``--out``.
Exit status: 0 on success, 1 when the config, model, observation or a
method precondition is rejected, 2 when a run fails midway.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .compensators import compensator_residual, innovation_increments
from .config import ConfigError, RunConfig, build_spec, load_config
from .filter import ExactModeUnsupported, FilterConfig, FilterError, IncompatibleObservation, run
from .io import read_json, write_csv, write_json
from .model import CharacteristicError, ModelError, validate
from .oracle import OracleError, bootstrap_pf, compare, enumerate_posterior
from .simulate import ObservationRecord, SimulationError, observe, simulate, spawn_seeds
from .validation import check_observation

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Invalid(Exception):
    """Input rejected before any work starts."""


def _load(args) -> tuple[RunConfig, object]:
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(
        seed=getattr(args, "seed", None),
        dt=getattr(args, "dt", None),
        mode=getattr(args, "mode", None),
        n_particles=getattr(args, "particles", None),
    )
    return cfg, build_spec(cfg.model)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out if args.out is not None else cfg.outputs.get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_observation(path) -> ObservationRecord:
    if path is None:
        raise _Invalid("--observation: missing required option")
    p = Path(path)
    if not p.exists():
        raise _Invalid(f"--observation: file not found: {p}")
    try:
        return check_observation(read_json(p))
    except (ValueError, KeyError, TypeError) as exc:
        raise _Invalid(f"--observation: {exc}") from exc


def _filter_config(cfg: RunConfig) -> FilterConfig:
    return FilterConfig(
        mode=cfg.mode,
        n_particles=cfg.n_particles,
        seed=cfg.seed,
        functionals=tuple(cfg.functionals),
        snapshot_times=tuple(cfg.snapshot_times),
    )


def _say(msg):
    print(msg, file=sys.stderr)


# -- commands -------------------------------------------------------------------------------------


def cmd_validate(args) -> int:
    cfg, spec = _load(args)
    findings = validate(spec)
    for f in findings:
        print(f"finding: {f}")
    if findings:
        return EXIT_INVALID
    print(f"ok: model {cfg.model['preset']!r} validates")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg, spec = _load(args)
    findings = validate(spec)
    if findings:
        raise _Invalid("invalid model: " + "; ".join(findings))
    out = _out_dir(args, cfg)
    path = simulate(spec, cfg.horizon, cfg.dt, cfg.seed)
    obs = observe(path)
    write_json(out / "path.json", path.to_dict())
    write_json(out / "observation.json", obs.to_dict())
    write_csv(out / "y.csv", ["t", "y"], zip(path.grid.tolist(), path.y_samples.tolist()))
    print(f"simulated {len(path.events)} events over [0, {cfg.horizon}] into {out}")
    return EXIT_OK


def _filter_rows(tr):
    """Long-format rows (t, kind, f_id, estimate); an event also gets its left limit."""
    corr = iter(tr.corrections)
    rows = []
    for r, t in enumerate(tr.times.tolist()):
        kind = tr.kinds[r]
        if not tr.is_grid[r]:
            _, _, delta = next(corr)
            for j, fid in enumerate(tr.functional_ids):
                rows.append((t, "left", fid, float(tr.estimates[r, j] - delta[j])))
        for j, fid in enumerate(tr.functional_ids):
            rows.append((t, kind, fid, float(tr.estimates[r, j])))
    return rows


def cmd_filter(args) -> int:
    cfg, spec = _load(args)
    obs = _read_observation(args.observation)
    out = _out_dir(args, cfg)
    tr = run(spec, obs, _filter_config(cfg))
    write_csv(out / "filter.csv", ["t", "kind", "f_id", "estimate"], _filter_rows(tr))
    if tr.marginals is not None:
        labels = [str(l) for l in tr.labels]
        write_csv(
            out / "marginals.csv",
            ["t", "kind", *labels],
            ([t, k, *m] for t, k, m in zip(tr.times.tolist(), tr.kinds, tr.marginals.tolist())),
        )
    write_json(
        out / "snapshots.json",
        {str(t): [{"history": h, "weight": w} for h, w in atoms] for t, atoms in tr.snapshots.items()},
    )
    print(f"filtered {len(obs.events)} events, {int(tr.is_grid.sum())} grid rows into {out}")
    return EXIT_OK


def _summary(tv: np.ndarray, times: np.ndarray) -> dict:
    return {
        "times": times.tolist(),
        "tv": tv.tolist(),
        "max": float(np.max(tv)),
        "median": float(np.median(tv)),
    }


def cmd_compare(args) -> int:
    cfg, spec = _load(args)
    obs = _read_observation(args.observation)
    out = _out_dir(args, cfg)
    tr = run(spec, obs, _filter_config(cfg))
    n_boot = int(cfg.compare.get("bootstrap_particles", 10_000))
    wanted = ["enumerate", "bootstrap"] if args.reference == "all" else [args.reference]
    report = {"mode": cfg.mode, "seed": cfg.seed, "references": {}}
    for ref in wanted:
        try:
            if ref == "filter":
                other = run(spec, obs, _filter_config(cfg))
            elif ref == "enumerate":
                other = enumerate_posterior(spec, obs)
            else:
                other = bootstrap_pf(spec, obs, n_boot, seed=cfg.seed)
        except OracleError as exc:
            if args.reference != "all":
                raise
            report["references"][ref] = {"skipped": str(exc)}
            continue
        report["references"][ref] = _summary(compare(tr, other), tr.grid_times())
    write_json(out / "compare.json", report)
    for ref, rep in report["references"].items():
        if "skipped" in rep:
            print(f"{ref}: skipped ({rep['skipped']})")
        else:
            print(f"{ref}: max TV {rep['max']:.3g}, median TV {rep['median']:.3g}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    from scipy.stats import kstest

    cfg, spec = _load(args)
    findings = validate(spec)
    if findings:
        raise _Invalid("invalid model: " + "; ".join(findings))
    out = _out_dir(args, cfg)
    n_paths = int(cfg.diagnose.get("n_paths", 1000))
    n_runs = int(cfg.diagnose.get("runs", 20))
    level = float(cfg.diagnose.get("ks_level", 0.01))

    rows = compensator_residual(spec, n_paths=n_paths, horizon=cfg.horizon, dt=cfg.dt, seed=cfg.seed)
    pvals = []
    for s in spawn_seeds(cfg.seed, n_runs):
        path = simulate(spec, cfg.horizon, cfg.dt, s)
        obs = observe(path)
        tr = run(spec, obs, _filter_config(cfg))
        pvals.append(float(kstest(innovation_increments(tr, obs, spec), "norm").pvalue))
    accepted = sum(p >= level for p in pvals)
    report = {
        "compensators": {
            "n_paths": n_paths,
            "rows": rows,
            "all_pass": all(r["pass"] for r in rows),
        },
        "innovation": {
            "runs": n_runs,
            "ks_level": level,
            "p_values": pvals,
            "not_rejected": accepted,
            "fraction_not_rejected": accepted / n_runs if n_runs else None,
        },
    }
    write_json(out / "diagnose.json", report)
    worst = max((abs(r["z"]) for r in rows), default=0.0)
    print(f"compensator rows: {len(rows)}, max |z| {worst:.3g}; KS not rejected in {accepted}/{n_runs} runs")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------------------


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="YAML run config")
    common.add_argument("--seed", type=_seed, help="override the config seed")
    common.add_argument("--out", metavar="DIR", help="output directory (default: outputs.dir or ./out)")
    common.add_argument("--particles", type=int, help="override n_particles")
    common.add_argument("--dt", type=float, help="override the grid step")
    common.add_argument("--mode", choices=("exact", "particle"), help="override the filter mode")

    p = argparse.ArgumentParser(prog="jumpfilter", description="Filtering with predictable and inaccessible jumps.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a model config").set_defaults(func=cmd_validate)
    sub.add_parser("simulate", parents=[common], help="simulate signal and observation").set_defaults(func=cmd_simulate)
    f = sub.add_parser("filter", parents=[common], help="filter an observation file")
    f.add_argument("--observation", metavar="PATH", help="observation.json written by simulate")
    f.set_defaults(func=cmd_filter)
    c = sub.add_parser("compare", parents=[common], help="total variation against reference posteriors")
    c.add_argument("--observation", metavar="PATH")
    c.add_argument("--reference", choices=("enumerate", "bootstrap", "filter", "all"), default="all")
    c.set_defaults(func=cmd_compare)
    sub.add_parser("diagnose", parents=[common], help="compensator residuals and innovation test").set_defaults(
        func=cmd_diagnose
    )
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelError, _Invalid, IncompatibleObservation, ExactModeUnsupported, OracleError) as exc:
        _say(f"error: {exc}")
        return EXIT_INVALID
    except (SimulationError, FilterError, CharacteristicError) as exc:
        _say(f"error: {exc}")
        return EXIT_RUNTIME
    except ValueError as exc:
        _say(f"error: {exc}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
