"""Field/rate algebra: hand-substitution oracles and exact identities."""

import math

import numpy as np
import pytest

from iondyne import (
    DecayConstants,
    DomainError,
    LaserField,
    RatePair,
    SignConsistencyError,
    ValidationError,
    closure_gamma_ps,
    leak_rates,
    load_constants,
    matrix_element,
    spin_flip_rates,
    stark_shift,
)

from conftest import GAMMA_PS_REF, TWO_PI, random_field


def make_field(delta, omega, plus_sq, minus_sq, pi_sq) -> LaserField:
    return LaserField.from_intensity_fractions(
        detuning_delta=delta, rabi_omega=omega,
        eps_plus_sq=plus_sq, eps_minus_sq=minus_sq, eps_pi_sq=pi_sq,
    )


class TestLaserField:
    def test_normalization_enforced(self):
        with pytest.raises(ValidationError):
            LaserField(detuning_delta=1e10, rabi_omega=1e8,
                       eps_plus=0.9, eps_minus=0.9, eps_pi=0.0)

    def test_fraction_constructor_renormalizes_small_slack(self):
        f = make_field(-1e10, 1e8, 0.5 + 4e-10, 0.5, 0.0)
        assert math.isclose(f.eps_plus**2 + f.eps_minus**2 + f.eps_pi**2, 1.0, rel_tol=0, abs_tol=1e-12)

    def test_fraction_constructor_rejects_bad_sum(self):
        with pytest.raises(ValidationError):
            make_field(-1e10, 1e8, 0.6, 0.6, 0.0)

    def test_intensity_factor_scales_squared_rabi(self):
        f = make_field(-1e10, 2e8, 0.3, 0.7, 0.0)
        g = f.with_intensity_factor(1.21)
        assert math.isclose(g.rabi_omega**2, 1.21 * f.rabi_omega**2, rel_tol=1e-15)
        assert (g.eps_plus, g.eps_minus, g.eps_pi) == (f.eps_plus, f.eps_minus, f.eps_pi)


class TestStarkShift:
    def test_balanced_polarization_cancels(self):
        f = make_field(-TWO_PI * 12e9, TWO_PI * 300e6, 0.5, 0.5, 0.0)
        assert stark_shift(f) == 0.0

    def test_hand_substitution_pure_sigma_plus(self):
        # Scalar oracle evaluated in plain arithmetic: all light in the
        # plus component, red detuning, so the shift comes out positive.
        omega = TWO_PI * 50e6
        delta = -TWO_PI * 12.03e9
        f = make_field(delta, omega, 1.0, 0.0, 0.0)
        oracle = (1.0 / 3.0) * (omega**2 / (4.0 * delta)) * (0.0 - 1.0)
        assert oracle > 0.0
        assert math.isclose(stark_shift(f), oracle, rel_tol=1e-15)
        assert math.isclose(stark_shift(f), omega**2 / (12.0 * abs(delta)), rel_tol=1e-15)

    def test_polarization_swap_is_odd(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            f = random_field(rng, eps_pi_sq=None)
            swapped = LaserField(
                detuning_delta=f.detuning_delta, rabi_omega=f.rabi_omega,
                eps_plus=f.eps_minus, eps_minus=f.eps_plus, eps_pi=f.eps_pi,
            )
            assert math.isclose(stark_shift(swapped), -stark_shift(f), rel_tol=0, abs_tol=1e-6 * abs(stark_shift(f)) + 1e-300)

    def test_detuning_flip_is_odd(self):
        f = make_field(-TWO_PI * 9e9, TWO_PI * 200e6, 0.2, 0.8, 0.0)
        g = make_field(+TWO_PI * 9e9, TWO_PI * 200e6, 0.2, 0.8, 0.0)
        assert stark_shift(g) == -stark_shift(f)

    def test_zero_detuning_rejected(self):
        with pytest.raises(DomainError):
            stark_shift(LaserField(detuning_delta=0.0, rabi_omega=1e8,
                                   eps_plus=1.0, eps_minus=0.0, eps_pi=0.0))


class TestSpinFlipRates:
    def test_pure_pi_drives_both_directions_equally(self):
        f = make_field(-TWO_PI * 12e9, TWO_PI * 100e6, 0.0, 0.0, 1.0)
        rates = spin_flip_rates(f, GAMMA_PS_REF)
        assert rates.r_plus == rates.r_minus > 0.0

    def test_pure_sigma_plus_is_one_way_pumping(self):
        f = make_field(-TWO_PI * 12e9, TWO_PI * 100e6, 1.0, 0.0, 0.0)
        rates = spin_flip_rates(f, GAMMA_PS_REF)
        assert rates.r_minus == 0.0
        assert rates.r_plus > 0.0

    def test_hand_substitution_oracle(self):
        # Independent scalar evaluation of the rate formula.
        omega = TWO_PI * 50e6
        delta = TWO_PI * 12e9
        gamma = TWO_PI * 21.57e6
        f = make_field(delta, omega, 0.98, 0.02, 0.0)
        rates = spin_flip_rates(f, gamma)
        scale = gamma / 9.0 * omega**2 / (4.0 * delta**2)
        assert math.isclose(rates.r_plus, 0.98 * scale, rel_tol=1e-12)
        assert math.isclose(rates.r_minus, 0.02 * scale, rel_tol=1e-12)
        assert math.isclose(rates.delta_r, (0.02 - 0.98) * scale, rel_tol=1e-12)

    def test_detuning_sign_irrelevant(self):
        red = make_field(-TWO_PI * 7e9, TWO_PI * 150e6, 0.3, 0.6, 0.1)
        blue = make_field(+TWO_PI * 7e9, TWO_PI * 150e6, 0.3, 0.6, 0.1)
        assert spin_flip_rates(red, GAMMA_PS_REF) == spin_flip_rates(blue, GAMMA_PS_REF)

    def test_polarization_swap_swaps_components(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            f = random_field(rng, eps_pi_sq=None)
            swapped = LaserField(
                detuning_delta=f.detuning_delta, rabi_omega=f.rabi_omega,
                eps_plus=f.eps_minus, eps_minus=f.eps_plus, eps_pi=f.eps_pi,
            )
            a = spin_flip_rates(f, GAMMA_PS_REF)
            b = spin_flip_rates(swapped, GAMMA_PS_REF)
            assert math.isclose(a.r_plus, b.r_minus, rel_tol=1e-12)
            assert math.isclose(a.r_minus, b.r_plus, rel_tol=1e-12)


class TestLeakRates:
    def test_closed_system_has_no_leak(self):
        assert leak_rates(RatePair(1000.0, 10.0), 0.0) == (0.0, 0.0)

    def test_hand_multiplication(self):
        up_to_sink, down_to_sink = leak_rates(RatePair(r_plus=1000.0, r_minus=10.0), 0.20609)
        assert math.isclose(up_to_sink, 2.0609, rel_tol=1e-12)
        assert math.isclose(down_to_sink, 206.09, rel_tol=1e-12)

    def test_leak_factor_from_rate_ratio_matches_branching(self):
        # The two published routes to b agree within rounding.
        from_rates = 3.0 * (1.482 / 21.57)
        from_branching = 3.0 * (1.0 / 0.93572 - 1.0)
        assert math.isclose(from_rates, 0.20612, rel_tol=1e-4)
        assert math.isclose(from_rates, from_branching, rel_tol=2e-4)

    def test_negative_leak_rejected(self):
        with pytest.raises(DomainError):
            leak_rates(RatePair(1.0, 1.0), -0.1)


class TestDecayConstants:
    def test_leak_consistency_enforced(self):
        with pytest.raises(ValidationError):
            DecayConstants(gamma_ps=1e8, gamma_pd=1e7, leak_b=0.5)

    def test_from_branching_round_trips(self):
        d = DecayConstants.from_branching(GAMMA_PS_REF, 0.93572)
        assert math.isclose(d.branching_fraction, 0.93572, rel_tol=1e-12)
        assert math.isclose(d.leak_b, 3.0 * d.gamma_pd / d.gamma_ps, rel_tol=1e-12)

    def test_lifetime_includes_sink_channel(self):
        d = DecayConstants.from_rates(gamma_ps=1e8, gamma_pd=1e7)
        assert math.isclose(d.lifetime, 1.0 / (1e8 + 1e7), rel_tol=1e-12)


class TestClosure:
    def test_identity_against_forward_formulas(self, decay_ref):
        rng = np.random.default_rng(17)
        for _ in range(500):
            f = random_field(rng, eps_pi_sq=0.0)
            rates = spin_flip_rates(f, decay_ref.gamma_ps)
            shift = stark_shift(f)
            if shift == 0.0:
                continue
            got = closure_gamma_ps(f.detuning_delta, rates.delta_r, shift)
            assert abs(got - decay_ref.gamma_ps) < 1e-12 * decay_ref.gamma_ps

    def test_paper_style_numbers(self):
        delta = -TWO_PI * 12.03e9
        delta_r = 5000.0
        stark = 3.0 * delta * delta_r / GAMMA_PS_REF
        assert math.isclose(closure_gamma_ps(delta, delta_r, stark), GAMMA_PS_REF, rel_tol=1e-12)

    def test_balanced_limit_returns_zero(self):
        assert closure_gamma_ps(-TWO_PI * 12e9, 0.0, 1e5) == 0.0

    def test_zero_stark_rejected(self):
        with pytest.raises(DomainError):
            closure_gamma_ps(-TWO_PI * 12e9, 100.0, 0.0)

    def test_sign_mismatch_flagged(self):
        with pytest.raises(SignConsistencyError):
            closure_gamma_ps(-TWO_PI * 12e9, 100.0, +1e5)


class TestMatrixElement:
    def test_golden_value(self):
        constants = load_constants()
        d = matrix_element(GAMMA_PS_REF, constants)
        assert abs(d - 2.8928) / 2.8928 < 2e-3
        assert abs(math.sqrt(2.0) * d - 4.091) / 4.091 < 2e-3

    def test_quadruple_rate_doubles_element(self):
        constants = load_constants()
        assert math.isclose(matrix_element(4.0 * GAMMA_PS_REF, constants),
                            2.0 * matrix_element(GAMMA_PS_REF, constants), rel_tol=1e-15)

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(DomainError):
            matrix_element(0.0, load_constants())
