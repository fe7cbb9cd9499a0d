import csv
import json
import subprocess
import sys

import pytest

from jumpfilter.cli import main
from jumpfilter.config import ConfigError, build_spec, load_config, parse_config


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def edit(path, old, new):
    text = path.read_text()
    assert old in text
    path.write_text(text.replace(old, new))
    return path


class TestConfig:
    def test_load(self, dj_config):
        cfg = load_config(dj_config)
        assert cfg.horizon == 2.0 and cfg.seed == 7 and cfg.functionals == ("one", "indicator:a")
        assert build_spec(cfg.model).name == "deterministic_jumps"

    def test_missing_field_named(self, dj_config):
        edit(dj_config, "horizon: 2.0\n", "")
        with pytest.raises(ConfigError, match="horizon"):
            load_config(dj_config)

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="horizn"):
            parse_config({"model": {"preset": "custom"}, "horizon": 1.0, "horizn": 1.0})

    def test_invariants(self):
        base = {"model": {"preset": "custom", "params": {"states": ["a"]}}, "horizon": 1.0}
        for key, bad in (("horizon", 0.0), ("dt", -1.0), ("n_particles", 0), ("mode", "fast")):
            with pytest.raises(ConfigError, match=key):
                parse_config({**base, key: bad})

    def test_syntax_error_has_line(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("model:\n  preset: custom\nhorizon: [1.0\n")
        with pytest.raises(ConfigError, match="line"):
            load_config(p)

    def test_unknown_param(self):
        with pytest.raises(ConfigError, match="model.params.colour"):
            build_spec({"preset": "custom", "params": {"states": ["a"], "colour": 1}})

    def test_missing_param(self):
        with pytest.raises(ConfigError, match="model.params.states"):
            build_spec({"preset": "custom", "params": {}})

    def test_custom_tables_with_clock(self):
        spec = build_spec({"preset": "custom", "params": {
            "states": ["a", "b"], "r_matrix": [[0, 1], [1, 0]],
            "clock_m": {"kind": "threshold", "level": 0.5, "direction": "up"}}})
        assert spec.signal.clock.kind == "threshold" and spec.signal.clock.level == 0.5

    def test_overrides(self, dj_config):
        cfg = load_config(dj_config).with_overrides(seed=3, dt=None, mode="particle")
        assert (cfg.seed, cfg.dt, cfg.mode) == (3, 0.001, "particle")


class TestValidate:
    def test_valid(self, dj_config, capsys):
        assert main(["validate", "--config", str(dj_config)]) == 0
        assert "validates" in capsys.readouterr().out

    def test_zero_sigma(self, dj_config, capsys):
        edit(dj_config, "sigma: 1.0", "sigma: 0.0")
        assert main(["validate", "--config", str(dj_config)]) == 1
        assert "volatility not bounded below" in capsys.readouterr().out

    def test_missing_field(self, dj_config, capsys):
        edit(dj_config, "horizon: 2.0\n", "")
        assert main(["validate", "--config", str(dj_config)]) == 1
        assert "horizon" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["validate", "--config", str(tmp_path / "nope.yaml")]) == 1


class TestSimulate:
    def test_reproducible(self, dj_config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", str(dj_config), "--out", str(a)]) == 0
        assert main(["simulate", "--config", str(dj_config), "--out", str(b)]) == 0
        for name in ("path.json", "observation.json", "y.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seed_changes_events(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("model:\n  preset: custom\n  params:\n    states: [a, b]\n    rate_m: 3.0\n"
                       "    q_matrix: [[0, 1], [1, 0]]\n    jump_i: [0.5, -0.5]\nhorizon: 2.0\n")
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"])
        ea = json.loads((tmp_path / "a" / "path.json").read_text())["events"]
        eb = json.loads((tmp_path / "b" / "path.json").read_text())["events"]
        assert ea != eb

    def test_zero_horizon(self, dj_config, tmp_path, capsys):
        edit(dj_config, "horizon: 2.0", "horizon: 0.0")
        assert main(["simulate", "--config", str(dj_config), "--out", str(tmp_path)]) == 1
        assert "horizon" in capsys.readouterr().err

    def test_csv_format(self, dj_config, tmp_path):
        main(["simulate", "--config", str(dj_config), "--out", str(tmp_path)])
        r = rows(tmp_path / "y.csv")
        assert r[0] == ["t", "y"] and len(r) == 2002
        ys = json.loads((tmp_path / "path.json").read_text())["y_samples"]
        assert all(v == "%.17g" % float(v) for _, v in r[1:])
        assert [float(v) for _, v in r[1:]] == ys


class TestFilter:
    def simulate(self, cfg, out):
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        return out / "observation.json"

    def test_end_to_end(self, dj_config, tmp_path):
        obs = self.simulate(dj_config, tmp_path)
        assert main(["filter", "--config", str(dj_config), "--observation", str(obs), "--out", str(tmp_path)]) == 0
        r = rows(tmp_path / "filter.csv")
        assert r[0] == ["t", "kind", "f_id", "estimate"]
        at_one = [x for x in r[1:] if x[0] == "1" and x[2] == "indicator:a"]
        kinds = [x[1] for x in at_one]
        assert kinds == ["left", "clock_m", "grid"]
        assert float(at_one[0][3]) != float(at_one[1][3])
        assert all(abs(float(x[3]) - 1.0) <= 1e-12 for x in r[1:] if x[2] == "one")
        snaps = json.loads((tmp_path / "snapshots.json").read_text())
        assert list(snaps) == ["1.0"]
        assert rows(tmp_path / "marginals.csv")[0] == ["t", "kind", "a", "b", "c"]

    def test_unsupported_exact(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("model:\n  preset: custom\n  params:\n    states: [a, b]\n    rate_m: 1.0\n"
                       "    q_matrix: [[0, 1], [1, 0]]\nhorizon: 0.5\nfunctionals: [sup]\n")
        obs = self.simulate(cfg, tmp_path)
        assert main(["filter", "--config", str(cfg), "--observation", str(obs), "--out", str(tmp_path)]) == 1
        assert "current state" in capsys.readouterr().err

    def test_missing_observation(self, dj_config, tmp_path):
        assert main(["filter", "--config", str(dj_config), "--out", str(tmp_path)]) == 1
        assert main(["filter", "--config", str(dj_config), "--observation", str(tmp_path / "x.json")]) == 1

    def test_corrupt_observation(self, dj_config, tmp_path):
        obs = self.simulate(dj_config, tmp_path)
        d = json.loads(obs.read_text())
        d["grid"][0] = 0.5
        obs.write_text(json.dumps(d))
        assert main(["filter", "--config", str(dj_config), "--observation", str(obs), "--out", str(tmp_path)]) == 1

    def test_incompatible_observation(self, dj_config, tmp_path):
        obs = self.simulate(dj_config, tmp_path)
        d = json.loads(obs.read_text())
        d["events"].append({"time": 1.5, "kind": "jump", "y_minus": 0.0, "size": 0.3})
        obs.write_text(json.dumps(d))
        assert main(["filter", "--config", str(dj_config), "--observation", str(obs), "--out", str(tmp_path)]) == 1


class TestCompare:
    def test_references(self, dj_config, tmp_path):
        obs = TestFilter().simulate(dj_config, tmp_path)
        assert main(["compare", "--config", str(dj_config), "--observation", str(obs), "--out", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "compare.json").read_text())
        assert rep["references"]["enumerate"]["max"] <= 1e-6
        assert set(rep["references"]["bootstrap"]) == {"times", "tv", "max", "median"}

    def test_self(self, dj_config, tmp_path):
        obs = TestFilter().simulate(dj_config, tmp_path)
        assert main(["compare", "--config", str(dj_config), "--observation", str(obs), "--out", str(tmp_path),
                     "--reference", "filter"]) == 0
        rep = json.loads((tmp_path / "compare.json").read_text())["references"]["filter"]
        assert rep["max"] == 0.0 and all(v == 0.0 for v in rep["tv"])

    def test_particle_vs_enumeration(self, dj_config, tmp_path):
        obs = TestFilter().simulate(dj_config, tmp_path)
        assert main(["compare", "--config", str(dj_config), "--observation", str(obs), "--out", str(tmp_path),
                     "--reference", "enumerate", "--mode", "particle", "--particles", "10000"]) == 0
        rep = json.loads((tmp_path / "compare.json").read_text())["references"]["enumerate"]
        assert rep["median"] <= 0.05

    def test_precondition(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("model:\n  preset: custom\n  params:\n    states: [a, b]\n    rate_m: 1.0\n"
                       "    q_matrix: [[0, 1], [1, 0]]\nhorizon: 0.2\n")
        obs = TestFilter().simulate(cfg, tmp_path)
        args = ["compare", "--config", str(cfg), "--observation", str(obs), "--out", str(tmp_path)]
        assert main(args + ["--reference", "enumerate"]) == 1
        assert "rate bound" in capsys.readouterr().err
        assert main(args) == 0
        rep = json.loads((tmp_path / "compare.json").read_text())["references"]
        assert "skipped" in rep["enumerate"] and "max" in rep["bootstrap"]


class TestDiagnose:
    def test_report(self, dj_config, tmp_path):
        assert main(["diagnose", "--config", str(dj_config), "--out", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "diagnose.json").read_text())
        assert len(rep["compensators"]["rows"]) == 15
        assert len(rep["innovation"]["p_values"]) == 3
        assert json.loads(json.dumps(rep)) == rep

    def test_silent_model_exact_zero(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("model:\n  preset: custom\n  params:\n    states: [a, b]\nhorizon: 0.5\n"
                       "diagnose:\n  n_paths: 40\n  runs: 2\n")
        assert main(["diagnose", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        rows_ = json.loads((tmp_path / "diagnose.json").read_text())["compensators"]["rows"]
        assert all(r["mean"] == 0.0 and r["stderr"] == 0.0 for r in rows_)


def test_console_script_exit_codes(dj_config, tmp_path):
    ok = subprocess.run([sys.executable, "-m", "jumpfilter.cli", "validate", "--config", str(dj_config)],
                        capture_output=True, text=True)
    assert ok.returncode == 0
    edit(dj_config, "sigma: 1.0", "sigma: 0.0")
    bad = subprocess.run([sys.executable, "-m", "jumpfilter.cli", "validate", "--config", str(dj_config)],
                         capture_output=True, text=True)
    assert bad.returncode == 1


def test_runtime_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    # a threshold that chatters at the start line saturates a tiny clock cap
    cfg.write_text("model:\n  preset: threshold_regime\n  params:\n    states: [a, b]\n"
                   "    r_matrix: [[0, 1], [1, 0]]\n    level: 0.0\n    drift: [0.0, 0.0]\n    sigma: 1.0\n"
                   "    rearm: 0.0\nhorizon: 1.0\n")
    from jumpfilter import cli

    real = cli.simulate
    cli.simulate = lambda *a, **k: real(*a, **k, max_clock_events=0)
    try:
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    finally:
        cli.simulate = real
    assert "cap" in capsys.readouterr().err
