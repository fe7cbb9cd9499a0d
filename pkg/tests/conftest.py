import textwrap

import pytest

DJ_CONFIG = textwrap.dedent(
    """\
    model:
      preset: deterministic_jumps
      params:
        states: [a, b, c]
        r_matrix: [[0, 0.3, 0.7], [0.5, 0, 0.5], [0.4, 0.6, 0]]
        times: [1.0]
        drift: [1.0, -1.0, 0.0]
        sigma: 1.0
        initial_law: {a: 0.5, b: 0.3, c: 0.2}
    horizon: 2.0
    dt: 0.001
    seed: 7
    mode: exact
    functionals: [one, "indicator:a"]
    snapshot_times: [1.0]
    compare:
      bootstrap_particles: 2000
    diagnose:
      n_paths: 100
      runs: 3
    """
)


@pytest.fixture
def dj_config(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(DJ_CONFIG)
    return p


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, title, passed, detail)``."""

    def report(number, title, passed, detail):
        request.config.stash[_ACCEPTANCE].append((number, title, bool(passed), detail))
        return passed

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = sorted(config.stash.get(_ACCEPTANCE, []), key=lambda r: r[0])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in rows:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:>2}. {title}: {detail}")
