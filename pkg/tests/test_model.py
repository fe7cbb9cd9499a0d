import numpy as np
import pytest

from jumpfilter.history import FiniteSpace, History, random_history
from jumpfilter.model import (
    PRESETS,
    CharacteristicError,
    Kernel,
    ModelError,
    ModelSpec,
    ObservationCoefficients,
    ObservationSpec,
    PredictableClock,
    SignalSpec,
    evaluate_characteristics,
    finite_model,
    k_size_likelihood,
    preset_deterministic_jumps,
    preset_reflecting,
    preset_threshold_regime,
    validate,
)

SWAP = [[0, 1], [1, 0]]
R3 = [[0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]]


def _raw_spec(kernel_r=None, vol=lambda t, y: 1.0, vol_min=1.0, rate=lambda t, h, y: 0.0, bound=0.0, clock=None):
    space = FiniteSpace(("a", "b"))
    return ModelSpec(
        signal=SignalSpec(space=space, initial="a", rate=rate, rate_bound=bound, kernel_r=kernel_r, clock=clock),
        observation=ObservationSpec(coefficients=ObservationCoefficients(vol=vol, vol_min=vol_min)),
    )


class TestValidate:
    def test_two_state_preset_is_valid(self):
        assert validate(preset_deterministic_jumps(["a", "b"], SWAP, [1.0], [1.0, -1.0], 1.0)) == []

    def test_zero_volatility(self):
        findings = validate(_raw_spec(vol=lambda t, y: 0.0, vol_min=0.0))
        assert any("volatility not bounded below" in f for f in findings)

    def test_short_kernel(self):
        k = Kernel.fixed(("a", "b"), [0.4, 0.5], name="R")
        spec = _raw_spec(kernel_r=k, clock=PredictableClock.deterministic([1.0]))
        findings = validate(spec)
        assert any("mass 0.9" in f and "≠ 1" in f for f in findings), findings

    def test_rate_above_bound(self):
        spec = _raw_spec(rate=lambda t, h, y: 2.0, bound=1.0)
        assert any("bound" in f for f in validate(spec))

    def test_negative_rate(self):
        spec = _raw_spec(rate=lambda t, h, y: -1.0, bound=1.0)
        assert validate(spec)

    def test_clock_without_kernel(self):
        spec = _raw_spec(clock=PredictableClock.deterministic([1.0]))
        assert validate(spec)

    def test_presets_validate(self):
        specs = [
            preset_deterministic_jumps(["a", "b", "c"], R3, [0.5, 1.0], [1.0, 0.0, -1.0], 0.5),
            preset_threshold_regime(["a", "b", "c"], R3, 0.5, [1.0, -1.0, 0.5], 1.0),
            preset_reflecting(["a", "b"], -1.0, 1.0, drift=[0.5, -0.5], rate_m=1.0, q_matrix=SWAP,
                              jump_i=[0.3, -0.3], rate_n=2.0, z_marks=(0.2, -0.4)),
        ]
        for s in specs:
            assert validate(s) == [], s.name


class TestPresets:
    def test_deterministic_jumps(self):
        spec = preset_deterministic_jumps(["a", "b"], SWAP, [1.0], [1.0, -1.0], 1.0)
        assert spec.signal.clock.kind == "deterministic" and spec.signal.clock.times == (1.0,)
        assert spec.signal.rate_bound == 0.0
        assert spec.coefficients.jump_p is None and spec.coefficients.jump_i is None

    def test_nonzero_diagonal(self):
        with pytest.raises(ModelError):
            preset_deterministic_jumps(["a", "b"], [[0.5, 0.5], [1, 0]], [1.0], [1.0, -1.0], 1.0)

    def test_rows_not_stochastic(self):
        with pytest.raises(ModelError):
            preset_deterministic_jumps(["a", "b"], [[0, 0.9], [1, 0]], [1.0], [1.0, -1.0], 1.0)

    def test_no_times(self):
        spec = preset_deterministic_jumps(["a", "b"], SWAP, [], [1.0, -1.0], 1.0)
        assert spec.signal.clock.times == ()

    def test_threshold_regime(self):
        spec = preset_threshold_regime(["a", "b"], SWAP, 0.5, [1.0, -1.0], 1.0)
        assert spec.signal.clock.kind == "threshold" and spec.signal.clock.level == 0.5
        with pytest.raises(ModelError):
            preset_threshold_regime(["a", "b"], [[1, 0], [1, 0]], 0.5, [1.0, -1.0], 1.0)
        with pytest.raises(ModelError):
            preset_threshold_regime(["a", "b"], [[0, 0.7], [1, 0]], 0.5, [1.0, -1.0], 1.0)

    def test_reflecting_ordering(self):
        spec = preset_reflecting(["a", "b"], -1.0, 1.0)
        assert spec.signal.clock.level == -1.0 and spec.signal.clock.direction == "down"
        assert spec.observation.clock.level == 1.0 and spec.observation.clock.direction == "up"
        with pytest.raises(ModelError):
            preset_reflecting(["a", "b"], 1.0, -1.0)
        with pytest.raises(ModelError):
            preset_reflecting(["a", "b"], 1.0, 1.0)
        with pytest.raises(ModelError):
            preset_reflecting(["a", "b"], -1.0, 1.0, y0=2.0)

    def test_registry(self):
        assert set(PRESETS) == {"deterministic_jumps", "threshold_regime", "reflecting", "custom"}


class TestCharacteristics:
    def test_clock_only_preset_has_no_rate(self):
        spec = preset_deterministic_jumps(["a", "b"], SWAP, [1.0], [1.0, -1.0], 1.0)
        rng = np.random.default_rng(1)
        for _ in range(20):
            h = random_history(rng, ("a", "b"), horizon=2.0)
            c = evaluate_characteristics(spec, rng.uniform(0, 2), h, rng.normal())
            assert c.rate_m == 0.0 and c.clock_m and not c.clock_n

    def test_constant_rate(self):
        spec = finite_model(["a", "b"], rate_m=1.0, q_matrix=SWAP)
        for t in (0.1, 1.0, 7.0):
            assert evaluate_characteristics(spec, t, History("b"), 3.0).rate_m == 1.0

    def test_regime_drift(self):
        spec = preset_threshold_regime(["a", "b", "c"], R3, 0.5, [1.0, -1.0, 0.5], 1.0)
        h = History("a", [(0.3, "c")])
        assert evaluate_characteristics(spec, 0.5, h, 0.0).drift == 0.5
        assert evaluate_characteristics(spec, 0.5, History("b"), 0.0).drift == -1.0

    def test_pure(self):
        spec = preset_threshold_regime(["a", "b"], SWAP, 0.5, [1.0, -1.0], 1.0)
        h = History("a", [(0.3, "b")])
        assert evaluate_characteristics(spec, 0.4, h, 0.1) == evaluate_characteristics(spec, 0.4, h, 0.1)

    def test_user_failure_is_located(self):
        def bad(t, h, y):
            raise ZeroDivisionError("boom")

        spec = _raw_spec(rate=bad, bound=1.0)
        with pytest.raises(CharacteristicError, match="signal rate"):
            evaluate_characteristics(spec, 0.25, History("a"), 0.0)


class TestKernel:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_sampler_matches_mass(self, seed):
        rng = np.random.default_rng(seed)
        space = FiniteSpace(("a", "b", "c"))
        k = Kernel.by_state(space, space.labels, [[0, 0.2, 0.8], [0.5, 0, 0.5], [0.9, 0.1, 0]])
        h = random_history(rng, space.labels, horizon=1.0)
        t, y = rng.uniform(0, 1), rng.normal()
        n = 100_000
        draws = [k.sample(t, h, y, rng) for _ in range(n)]
        p = k.probabilities(t, h, y)
        for mark, pm in zip(k.marks, p):
            freq = sum(d == mark for d in draws) / n
            se = np.sqrt(max(pm * (1 - pm), 1e-12) / n)
            assert abs(freq - pm) <= 4 * se + 1e-12

    def test_continuous_quadrature_integrates_density(self):
        k = Kernel.continuous(
            sampler=lambda t, h, y, rng: rng.uniform(0, 2),
            density=lambda t, h, y, z: 0.5,
            support=(0.0, 2.0),
        )
        marks, w = k.quadrature(0.0, History("a"), 0.0)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.dot(w, np.square(marks)) == pytest.approx(4.0 / 3.0, abs=1e-12)

    def test_wrong_shape(self):
        with pytest.raises(ModelError):
            Kernel.fixed(("a", "b"), [1.0])


class TestClock:
    def test_dict_round_trip(self):
        for c in (PredictableClock.deterministic([0.5, 1.0]), PredictableClock.threshold(0.3, "down", 0.05)):
            assert PredictableClock.from_dict(c.to_dict()) == c

    def test_unknown_kind(self):
        with pytest.raises(ModelError):
            PredictableClock.from_dict({"kind": "poisson"})


class TestSizeLikelihood:
    def test_indicator_from_jump_map(self):
        spec = finite_model(["a", "b"], rate_m=1.0, q_matrix=SWAP, jump_i=[0.5, -0.5])
        h = History("a")
        assert k_size_likelihood(spec, "i", 0.1, h, 0.0, 0.5, "a") == 1.0
        assert k_size_likelihood(spec, "i", 0.1, h, 0.0, -0.5, "a") == 0.0
