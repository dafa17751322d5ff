"""Population dynamics of the driven three-level system.

State ordering everywhere is (p_up, p_down, p_sink). The qubit states
exchange population through Raman spin flips at the RatePair rates and
leak irreversibly into the sink manifold at b times their own partner
rate; the closed-form solution below solves that linear system exactly.
``evolve_numeric`` integrates the same equations with a generic
fourth-order scheme and serves as the independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DomainError, IntegrationError, ValidationError
from .physics import RatePair

InitLabel = Literal["up", "down"]

STATE_TOL = 1e-12  # tolerance on the probability-vector invariants

# evolve_numeric contract bounds
REL_TOL_MIN = 1e-14
REL_TOL_MAX = 1e-6
_MAX_REFINEMENTS = 40


@dataclass(frozen=True)
class PopulationState:
    """Probability triple over (up, down, sink); sums to one."""

    p_up: float
    p_down: float
    p_sink: float

    def __post_init__(self):
        for name in ("p_up", "p_down", "p_sink"):
            p = getattr(self, name)
            if not math.isfinite(p) or p < -STATE_TOL or p > 1.0 + STATE_TOL:
                raise ValidationError(f"{name} = {p!r} outside [0, 1]")
        total = self.p_up + self.p_down + self.p_sink
        if abs(total - 1.0) > STATE_TOL:
            raise ValidationError(f"populations must sum to 1, got {total!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_up, self.p_down, self.p_sink])


@dataclass(frozen=True)
class DynamicsParams:
    """Rate pair plus leak ratio, with the derived decay scales."""

    rates: RatePair
    leak_b: float

    def __post_init__(self):
        if not (math.isfinite(self.leak_b) and self.leak_b >= 0.0):
            raise ValidationError(f"leak_b must be >= 0, got {self.leak_b!r}")
        if self.rates.r_plus > 0.0 and self.rates.r_minus > 0.0:
            # Algebraically r_tilde^2 >= 4 r+ r- > 0; a breach means corrupted inputs.
            assert self.r_tilde_sq > 0.0, "r_tilde^2 <= 0 with both rates positive"

    @property
    def r_bar(self) -> float:
        """Mean decay scale (1+b) * (r_plus + r_minus), 1/s."""
        return (1.0 + self.leak_b) * (self.rates.r_plus + self.rates.r_minus)

    @property
    def r_tilde_sq(self) -> float:
        """Square of the mode-splitting scale, r_bar^2 - 4 b (2+b) r+ r-."""
        return self.r_bar**2 - 4.0 * self.leak_b * (2.0 + self.leak_b) * self.rates.r_plus * self.rates.r_minus

    @property
    def r_tilde(self) -> float:
        return math.sqrt(self.r_tilde_sq)


def _check_init(init: str):
    if init not in ("up", "down"):
        raise ValidationError(f"initial state must be 'up' or 'down', got {init!r}")


def spin_populations(r_plus, r_minus, leak_b, t, init: InitLabel):
    """Closed-form populations at time t; broadcasts over array inputs.

    Parameters
    ----------
    r_plus, r_minus : float or ndarray
        Spin-flip rates in 1/s, >= 0.
    leak_b : float or ndarray
        Sink leak ratio, >= 0.
    t : float or ndarray
        Evolution time in seconds, >= 0.
    init : {'up', 'down'}
        Pure qubit state at t = 0.

    Returns
    -------
    (p_up, p_down, p_sink) : ndarrays broadcast to the common shape.

    The hyperbolic terms are evaluated through exponentials of
    non-positive arguments, so the expressions stay finite for
    arbitrarily large rate * time products.
    """
    _check_init(init)
    r_plus = np.asarray(r_plus, dtype=float)
    r_minus = np.asarray(r_minus, dtype=float)
    leak_b = np.asarray(leak_b, dtype=float)
    t = np.asarray(t, dtype=float)

    one_b = 1.0 + leak_b
    r_bar = one_b * (r_plus + r_minus)
    g_sq = r_bar**2 - 4.0 * leak_b * (2.0 + leak_b) * r_plus * r_minus
    g = np.sqrt(np.maximum(g_sq, 0.0))

    # exp(-r_bar t/2) cosh(g t/2) and exp(-r_bar t/2) sinh(g t/2) via
    # exp((g - r_bar) t/2) and exp(-(g + r_bar) t/2); g <= r_bar always.
    grow = np.exp(0.5 * (g - r_bar) * t)
    fall = np.exp(-0.5 * (g + r_bar) * t)
    c_term = 0.5 * (grow + fall)
    s_term = 0.5 * (grow - fall)

    # sinh term divided by g, with the g -> 0 limit t/2 * exp(-r_bar t/2).
    g_safe = np.where(g > 0.0, g, 1.0)
    s_over_g = np.where(g > 0.0, s_term / g_safe, 0.5 * t * np.exp(-0.5 * r_bar * t))

    delta_r = r_minus - r_plus
    if init == "up":
        p_up = c_term - one_b * delta_r * s_over_g
        p_down = 2.0 * r_minus * s_over_g
    else:
        p_down = c_term + one_b * delta_r * s_over_g
        p_up = 2.0 * r_plus * s_over_g
    p_sink = 1.0 - p_up - p_down
    return p_up, p_down, p_sink


def evolve_analytic(params: DynamicsParams, init: InitLabel, duration: float) -> PopulationState:
    """Exact populations after ``duration`` seconds from a pure qubit state."""
    if not (math.isfinite(duration) and duration >= 0.0):
        raise DomainError(f"duration must be >= 0, got {duration!r}")
    p_up, p_down, p_sink = spin_populations(
        params.rates.r_plus, params.rates.r_minus, params.leak_b, duration, init
    )
    return PopulationState(float(p_up), float(p_down), float(p_sink))


def rate_matrix(params: DynamicsParams) -> np.ndarray:
    """Generator matrix of the rate equations on (up, down, sink)."""
    r_p, r_m, b = params.rates.r_plus, params.rates.r_minus, params.leak_b
    return np.array(
        [
            [-r_m * (1.0 + b), r_p, 0.0],
            [r_m, -r_p * (1.0 + b), 0.0],
            [b * r_m, b * r_p, 0.0],
        ]
    )


def _rk4_step_operator(a: np.ndarray, h: float) -> np.ndarray:
    """One-step operator of classical RK4 for y' = A y with step h."""
    ah = a * h
    m = np.eye(3) + ah
    term = ah
    for k in (2.0, 3.0, 4.0):
        term = term @ ah / k
        m = m + term
    return m


def evolve_numeric(
    params: DynamicsParams, init: InitLabel | PopulationState, duration: float, rel_tol: float = 1e-10
) -> PopulationState:
    """Populations from fixed-step fourth-order integration of the rate
    equations, refined by step halving until two successive grids agree.

    ``init`` is a spin label for the pure starting states the scans use,
    or a full PopulationState for arbitrary starting mixtures.

    Because the system is linear with constant coefficients, n equal RK4
    steps amount to the n-th power of the one-step operator; the power is
    taken by binary matrix powering, which is deterministic and keeps the
    full refinement ladder cheap. Agreement and probability conservation
    are both measured in the sup norm against rel_tol (the state vector
    has unit scale).
    """
    if not (REL_TOL_MIN <= rel_tol <= REL_TOL_MAX):
        raise ValidationError(f"rel_tol must lie in [{REL_TOL_MIN}, {REL_TOL_MAX}], got {rel_tol!r}")
    if not (math.isfinite(duration) and duration >= 0.0):
        raise DomainError(f"duration must be >= 0, got {duration!r}")
    if isinstance(init, PopulationState):
        y0 = np.array([init.p_up, init.p_down, init.p_sink])
    else:
        _check_init(init)
        y0 = np.array([1.0, 0.0, 0.0]) if init == "up" else np.array([0.0, 1.0, 0.0])
    if duration == 0.0:
        return PopulationState(*y0)

    a = rate_matrix(params)
    # Start with steps short enough that h * (fastest column rate) <= 1/2.
    fastest = float(np.max(np.sum(np.abs(a), axis=0)))
    n_steps = max(8, int(math.ceil(2.0 * fastest * duration)))

    previous = None
    for _ in range(_MAX_REFINEMENTS):
        step_op = _rk4_step_operator(a, duration / n_steps)
        current = np.linalg.matrix_power(step_op, n_steps) @ y0
        if previous is not None and float(np.max(np.abs(current - previous))) <= rel_tol:
            total = float(current.sum())
            if abs(total - 1.0) > max(rel_tol, 1e-13):
                raise IntegrationError(
                    f"probability not conserved: sum = {total!r}", last=current, previous=previous
                )
            return PopulationState(*np.clip(current, -STATE_TOL, 1.0 + STATE_TOL))
        previous = current
        n_steps *= 2

    raise IntegrationError(
        f"no convergence to rel_tol = {rel_tol} within {_MAX_REFINEMENTS} refinements",
        last=current,
        previous=previous,
    )


@dataclass(frozen=True)
class EchoSignal:
    """Echo interferometer response on a pulse-time grid."""

    probability: np.ndarray  # expected dark fraction per grid point, clamped to [0, 1]
    in_bounds: bool          # False if any raw value needed clamping

    def __iter__(self):
        yield from (self.probability, self.in_bounds)


def spin_echo_signal(
    stark: float,
    durations,
    contrast: float,
    offset: float,
    phase: float = 0.0,
    decay_rate: float = 0.0,
) -> EchoSignal:
    """Expected dark probability of the echo sequence per pulse time.

    offset + contrast * exp(-decay_rate * t) * cos(stark * t + phase),
    clamped to [0, 1]. Clamping is flagged rather than raised: a slightly
    out-of-range model is still usable as a simulation target but should
    not silently pass as a physical probability.
    """
    if not (0.0 <= contrast <= 0.5):
        raise ValidationError(f"contrast must lie in [0, 0.5], got {contrast!r}")
    if not (0.0 <= offset <= 1.0):
        raise ValidationError(f"offset must lie in [0, 1], got {offset!r}")
    if not (math.isfinite(decay_rate) and decay_rate >= 0.0):
        raise ValidationError(f"decay_rate must be >= 0, got {decay_rate!r}")
    t = np.asarray(durations, dtype=float)
    if np.any(t < 0.0) or not np.all(np.isfinite(t)):
        raise ValidationError("pulse times must be finite and >= 0")
    raw = offset + contrast * np.exp(-decay_rate * t) * np.cos(stark * t + phase)
    in_bounds = bool(np.all((raw >= 0.0) & (raw <= 1.0)))
    return EchoSignal(probability=np.clip(raw, 0.0, 1.0), in_bounds=in_bounds)
