"""Three-level rate dynamics: closed forms, integrator agreement, invariants."""

import math

import numpy as np
import pytest

from iondyne import DomainError, RatePair, ValidationError
from iondyne.dynamics import (
    DynamicsParams,
    PopulationState,
    evolve_analytic,
    evolve_numeric,
    rate_matrix,
    spin_echo_signal,
    spin_populations,
)

from conftest import LEAK_B_REF, TWO_PI


def params(r_plus, r_minus, leak_b=0.0) -> DynamicsParams:
    return DynamicsParams(rates=RatePair(r_plus=r_plus, r_minus=r_minus), leak_b=leak_b)


def random_params(rng) -> DynamicsParams:
    r = 10.0 ** rng.uniform(0.0, 5.0, size=2)
    return DynamicsParams(rates=RatePair(*r), leak_b=float(rng.uniform(0.0, 1.0)))


class TestClosedForm:
    def test_zero_duration_returns_init(self):
        p = params(3000.0, 60.0, 0.206)
        assert evolve_analytic(p, "up", 0.0) == PopulationState(1.0, 0.0, 0.0)
        assert evolve_analytic(p, "down", 0.0) == PopulationState(0.0, 1.0, 0.0)

    def test_closed_system_steady_state(self):
        p = params(900.0, 100.0, 0.0)
        late = evolve_analytic(p, "down", 50.0 / 1000.0)
        assert math.isclose(late.p_up, 0.9, rel_tol=1e-9)
        assert math.isclose(late.p_down, 0.1, rel_tol=1e-9)
        assert late.p_sink == 0.0

    def test_matches_numeric_at_reference_point(self):
        p = params(3000.0, 60.0, 0.206)
        a = evolve_analytic(p, "down", 500e-6)
        n = evolve_numeric(p, "down", 500e-6)
        for name in ("p_up", "p_down", "p_sink"):
            assert math.isclose(getattr(a, name), getattr(n, name), rel_tol=1e-9)

    def test_oracle_equivalence_sample(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            p = random_params(rng)
            t = float(rng.uniform(0.1, 5.0)) / p.r_bar * (1.0 + p.leak_b)
            for init in ("up", "down"):
                a = evolve_analytic(p, init, t)
                n = evolve_numeric(p, init, t)
                scale = max(a.p_up, a.p_down, a.p_sink)
                for name in ("p_up", "p_down", "p_sink"):
                    assert abs(getattr(a, name) - getattr(n, name)) <= 1e-9 * scale

    def test_zero_rates_fix_any_state(self):
        p = params(0.0, 0.0, 0.3)
        assert evolve_analytic(p, "up", 1.0) == PopulationState(1.0, 0.0, 0.0)
        mixed = PopulationState(0.3, 0.45, 0.25)
        out = evolve_numeric(p, mixed, 2.0)
        for name in ("p_up", "p_down", "p_sink"):
            assert math.isclose(getattr(out, name), getattr(mixed, name), rel_tol=0, abs_tol=1e-12)

    def test_mirror_symmetry(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            p = random_params(rng)
            mirrored = DynamicsParams(
                rates=RatePair(r_plus=p.rates.r_minus, r_minus=p.rates.r_plus),
                leak_b=p.leak_b)
            t = float(rng.uniform(0.1, 5.0)) / p.r_bar * (1.0 + p.leak_b)
            a = evolve_analytic(p, "up", t)
            b = evolve_analytic(mirrored, "down", t)
            assert math.isclose(a.p_up, b.p_down, rel_tol=1e-12, abs_tol=1e-15)
            assert math.isclose(a.p_down, b.p_up, rel_tol=1e-12, abs_tol=1e-15)
            assert math.isclose(a.p_sink, b.p_sink, rel_tol=1e-12, abs_tol=1e-15)

    def test_vectorized_grid_matches_scalar(self):
        p = params(2500.0, 400.0, 0.2)
        t = np.array([0.0, 1e-5, 1e-4, 1e-3])
        up, down, _ = spin_populations(p.rates.r_plus, p.rates.r_minus, p.leak_b, t, "up")
        for j, tj in enumerate(t):
            state = evolve_analytic(p, "up", float(tj))
            assert math.isclose(up[j], state.p_up, rel_tol=1e-12, abs_tol=1e-15)
            assert math.isclose(down[j], state.p_down, rel_tol=1e-12, abs_tol=1e-15)


class TestInvariants:
    def test_probability_conserved_without_leak(self):
        rng = np.random.default_rng(31)
        for _ in range(500):
            r = 10.0 ** rng.uniform(0.0, 5.0, size=2)
            p = params(float(r[0]), float(r[1]), 0.0)
            t = float(rng.uniform(0.1, 5.0)) / p.r_bar
            state = evolve_analytic(p, "up", t)
            assert abs(state.p_sink) < 1e-14
            assert abs(state.p_up + state.p_down - 1.0) < 1e-12

    def test_total_probability_conserved_with_leak(self):
        rng = np.random.default_rng(37)
        for _ in range(500):
            p = random_params(rng)
            t = float(rng.uniform(0.1, 5.0)) / p.r_bar * (1.0 + p.leak_b)
            state = evolve_analytic(p, "down", t)
            total = state.p_up + state.p_down + state.p_sink
            assert abs(total - 1.0) < 1e-12

    def test_sink_population_monotone(self):
        rng = np.random.default_rng(41)
        times = np.linspace(0.0, 5.0, 40)
        for _ in range(200):
            r = 10.0 ** rng.uniform(0.0, 4.0, size=2)
            b = float(rng.uniform(1e-3, 1.0))
            p = params(float(r[0]), float(r[1]), b)
            sinks = [evolve_analytic(p, "up", float(x) / p.r_bar * (1.0 + b)).p_sink
                     for x in times]
            assert all(s2 >= s1 - 1e-13 for s1, s2 in zip(sinks, sinks[1:]))

    def test_mode_split_dominates_rate_product(self):
        rng = np.random.default_rng(43)
        for _ in range(2000):
            p = random_params(rng)
            lower = 4.0 * p.rates.r_plus * p.rates.r_minus
            assert p.r_tilde_sq >= lower * (1.0 - 1e-12)

    def test_rate_equation_finite_difference(self):
        rng = np.random.default_rng(47)
        for _ in range(200):
            p = random_params(rng)
            r_p, r_m, b = p.rates.r_plus, p.rates.r_minus, p.leak_b
            t = float(rng.uniform(0.2, 4.0)) / p.r_bar * (1.0 + b)
            # Step near eps^(1/3) of the decay time: small enough for the
            # second-order truncation term, large enough to avoid roundoff.
            h = 1e-5 / p.r_bar * (1.0 + b)
            lo = evolve_analytic(p, "up", t - h)
            hi = evolve_analytic(p, "up", t + h)
            mid = evolve_analytic(p, "up", t)
            fd = (hi.p_up - lo.p_up) / (2.0 * h)
            rhs = -r_m * (1.0 + b) * mid.p_up + r_p * mid.p_down
            scale = abs(r_m * (1.0 + b) * mid.p_up) + abs(r_p * mid.p_down)
            assert abs(fd - rhs) <= 1e-6 * scale

    def test_populations_stay_in_unit_interval(self):
        rng = np.random.default_rng(53)
        for _ in range(300):
            p = random_params(rng)
            t = float(rng.uniform(0.0, 10.0)) / p.r_bar * (1.0 + p.leak_b)
            for init in ("up", "down"):
                state = evolve_analytic(p, init, t)
                for name in ("p_up", "p_down", "p_sink"):
                    assert -1e-12 <= getattr(state, name) <= 1.0 + 1e-12


class TestRateMatrix:
    def test_columns_sum_to_zero(self):
        m = rate_matrix(params(123.0, 456.0, 0.3))
        assert np.allclose(m.sum(axis=0), 0.0, atol=1e-12)

    def test_entries(self):
        m = rate_matrix(params(100.0, 10.0, 0.2))
        expected = np.array([
            [-10.0 * 1.2, 100.0, 0.0],
            [10.0, -100.0 * 1.2, 0.0],
            [0.2 * 10.0, 0.2 * 100.0, 0.0],
        ])
        assert np.allclose(m, expected, rtol=1e-15)


class TestValidation:
    def test_negative_leak_rejected(self):
        with pytest.raises(ValidationError):
            params(1.0, 1.0, -0.5)

    def test_negative_rate_rejected(self):
        with pytest.raises(ValidationError):
            RatePair(r_plus=-1.0, r_minus=1.0)

    def test_bad_init_label_rejected(self):
        with pytest.raises(ValidationError):
            evolve_analytic(params(1.0, 1.0), "sideways", 1.0)

    def test_negative_duration_rejected(self):
        with pytest.raises(DomainError):
            evolve_analytic(params(1.0, 1.0), "up", -1.0)

    def test_unnormalized_state_rejected(self):
        with pytest.raises(ValidationError):
            PopulationState(0.5, 0.2, 0.2)

    def test_numeric_tolerance_bounds_enforced(self):
        with pytest.raises(ValidationError):
            evolve_numeric(params(10.0, 10.0), "up", 1.0, rel_tol=1e-3)


class TestEchoSignal:
    def test_zero_contrast_is_constant(self):
        t = np.linspace(0.0, 30e-6, 50)
        sig = spin_echo_signal(TWO_PI * 1e6, t, contrast=0.0, offset=0.42)
        assert np.all(sig.probability == 0.42)
        assert sig.in_bounds

    def test_reference_frequency_period_count(self):
        # 2pi*333 kHz over a 30 us window spans just under ten full periods.
        stark = TWO_PI * 333e3
        period = TWO_PI / stark
        assert 9.9 < 30e-6 / period < 10.0
        t = np.array([0.0, period, 2.0 * period])
        sig = spin_echo_signal(stark, t, contrast=0.3, offset=0.5)
        assert np.allclose(sig.probability, sig.probability[0], atol=1e-12)

    def test_half_period_hits_opposite_extreme(self):
        stark = TWO_PI * 1e6
        t = np.array([0.0, math.pi / stark])
        sig = spin_echo_signal(stark, t, contrast=0.2, offset=0.5)
        assert math.isclose(sig.probability[0], 0.7, rel_tol=1e-12)
        assert math.isclose(sig.probability[1], 0.3, rel_tol=1e-12)

    def test_phase_shifts_pattern(self):
        stark = TWO_PI * 1e6
        t = np.linspace(0.0, 10e-6, 101)
        shifted = spin_echo_signal(stark, t, 0.25, 0.5, phase=math.pi)
        base = spin_echo_signal(stark, t, 0.25, 0.5)
        assert np.allclose(shifted.probability, 1.0 - base.probability, atol=1e-12)

    def test_decay_shrinks_envelope(self):
        stark = TWO_PI * 1e6
        period = TWO_PI / stark
        t = np.array([0.0, 5.0 * period])
        sig = spin_echo_signal(stark, t, 0.3, 0.5, decay_rate=2e4)
        assert sig.probability[1] - 0.5 < sig.probability[0] - 0.5
        assert sig.probability[1] > 0.5

    def test_out_of_range_model_is_clamped_and_flagged(self):
        sig = spin_echo_signal(TWO_PI * 1e6, np.array([0.0]), contrast=0.4, offset=0.9)
        assert sig.probability[0] == 1.0
        assert not sig.in_bounds

    def test_bad_contrast_rejected(self):
        with pytest.raises(ValidationError):
            spin_echo_signal(TWO_PI * 1e6, np.array([0.0]), contrast=0.6, offset=0.5)
