"""Shared fixtures: reference field/decay settings used across the suite."""

import math

import numpy as np
import pytest

from iondyne import DecayConstants, LaserField

TWO_PI = 2.0 * math.pi

# Reference truth used throughout: decay rate and branching fraction that
# the golden-value tests are written against.
GAMMA_PS_REF = TWO_PI * 21.57e6
BRANCHING_REF = 0.93572
LEAK_B_REF = 3.0 * (1.0 / BRANCHING_REF - 1.0)


@pytest.fixture
def decay_ref() -> DecayConstants:
    return DecayConstants.from_branching(GAMMA_PS_REF, BRANCHING_REF)


def random_field(rng: np.random.Generator, eps_pi_sq: float | None = 0.0) -> LaserField:
    """A random off-resonant field; eps_pi_sq=None draws it randomly too."""
    if eps_pi_sq is None:
        fractions = rng.dirichlet(np.ones(3))
    else:
        split = rng.uniform(0.01, 0.99)
        fractions = np.array([(1.0 - eps_pi_sq) * split, (1.0 - eps_pi_sq) * (1.0 - split), eps_pi_sq])
    sign = -1.0 if rng.random() < 0.5 else 1.0
    return LaserField.from_intensity_fractions(
        detuning_delta=sign * TWO_PI * rng.uniform(5e9, 20e9),
        rabi_omega=TWO_PI * rng.uniform(1e8, 1e9),
        eps_plus_sq=float(fractions[0]),
        eps_minus_sq=float(fractions[1]),
        eps_pi_sq=float(fractions[2]),
    )
