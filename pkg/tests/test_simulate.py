"""Shot sampling: determinism, stream separation, moment checks."""

import math

import numpy as np
import pytest

from iondyne import DecayConstants, DomainError, LaserField, ValidationError
from iondyne.simulate import (
    BLOCK_INITS,
    BLOCK_KINDS,
    BLOCKS_PER_RUN,
    EchoSignalParams,
    RunSchedule,
    ScanPlan,
    SpamModel,
    flip_dark_probability,
    require_low_pi_content,
    simulate_campaign,
    simulate_echo_scan,
    simulate_flip_scan,
)

from conftest import GAMMA_PS_REF, TWO_PI


FIELD = LaserField.from_intensity_fractions(
    detuning_delta=-TWO_PI * 12.03e9, rabi_omega=TWO_PI * 555e6,
    eps_plus_sq=0.25, eps_minus_sq=0.75, eps_pi_sq=0.0)
DECAY = DecayConstants.from_branching(GAMMA_PS_REF, 0.93572)
SPAM = SpamModel.with_bright_sink(dark_given_up=0.99, dark_given_down=0.005)
PLAN = ScanPlan(durations_s=np.geomspace(3e-6, 4e-3, 12), shots_per_duration=400)


class TestScanPlan:
    def test_linear_grid(self):
        plan = ScanPlan.from_spacing(spacing_s=120e-9, count=5, shots=10)
        assert np.allclose(plan.durations_s, 120e-9 * np.arange(1, 6))
        assert plan.shots_per_duration == 10

    def test_unsorted_grid_rejected(self):
        with pytest.raises(ValidationError):
            ScanPlan(durations_s=np.array([2e-6, 1e-6]), shots_per_duration=5)

    def test_zero_shots_rejected(self):
        with pytest.raises(ValidationError):
            ScanPlan(durations_s=np.array([1e-6]), shots_per_duration=0)


class TestSpamModel:
    def test_affine_map(self):
        q = SPAM.dark_probability(0.5, 0.3, 0.2)
        assert math.isclose(q, 0.99 * 0.5 + 0.005 * 0.5, rel_tol=1e-12)

    def test_non_discriminating_readout_rejected(self):
        with pytest.raises(ValidationError):
            SpamModel.with_bright_sink(dark_given_up=0.4, dark_given_down=0.6)


class TestFlipScan:
    def test_deterministic_for_fixed_address(self):
        a = simulate_flip_scan(FIELD, DECAY, SPAM, PLAN, "up", seed=9, stream_block=1)
        b = simulate_flip_scan(FIELD, DECAY, SPAM, PLAN, "up", seed=9, stream_block=1)
        assert np.array_equal(a.dark_counts, b.dark_counts)

    def test_seed_and_block_change_draws(self):
        base = simulate_flip_scan(FIELD, DECAY, SPAM, PLAN, "up", seed=9, stream_block=1)
        other_seed = simulate_flip_scan(FIELD, DECAY, SPAM, PLAN, "up", seed=10, stream_block=1)
        other_block = simulate_flip_scan(FIELD, DECAY, SPAM, PLAN, "up", seed=9, stream_block=2)
        assert not np.array_equal(base.dark_counts, other_seed.dark_counts)
        assert not np.array_equal(base.dark_counts, other_block.dark_counts)

    def test_counts_match_binomial_moments(self):
        # 200 seeds; the standardized per-duration means must behave like
        # a standard normal sample (three standard errors slack).
        plan = ScanPlan(durations_s=PLAN.durations_s, shots_per_duration=250)
        q = flip_dark_probability(FIELD, DECAY, SPAM, "down", plan.durations_s)
        n_seeds = 200
        fractions = np.empty((n_seeds, plan.durations_s.size))
        for s in range(n_seeds):
            ds = simulate_flip_scan(FIELD, DECAY, SPAM, plan, "down", seed=s, stream_block=3)
            fractions[s] = ds.dark_counts / plan.shots_per_duration
        se = np.sqrt(q * (1.0 - q) / (plan.shots_per_duration * n_seeds))
        z = (fractions.mean(axis=0) - q) / se
        assert np.all(np.abs(z) < 3.5)
        assert abs(float(z.mean())) < 3.0 / math.sqrt(z.size)

    def test_frozen_dynamics_with_ideal_readout_is_all_dark(self):
        field = LaserField.from_intensity_fractions(
            detuning_delta=-TWO_PI * 12.03e9, rabi_omega=0.0,
            eps_plus_sq=0.25, eps_minus_sq=0.75, eps_pi_sq=0.0)
        ideal = SpamModel.with_bright_sink(dark_given_up=1.0, dark_given_down=0.0)
        ds = simulate_flip_scan(field, DECAY, ideal, PLAN, "up", seed=1)
        assert np.all(ds.dark_counts == PLAN.shots_per_duration)
        ds_down = simulate_flip_scan(field, DECAY, ideal, PLAN, "down", seed=1)
        assert np.all(ds_down.dark_counts == 0)

    def test_pi_light_guard(self):
        pi_heavy = LaserField.from_intensity_fractions(
            detuning_delta=-TWO_PI * 12.03e9, rabi_omega=TWO_PI * 555e6,
            eps_plus_sq=0.25, eps_minus_sq=0.55, eps_pi_sq=0.20)
        with pytest.raises(DomainError):
            require_low_pi_content(pi_heavy)
        with pytest.raises(DomainError):
            simulate_flip_scan(pi_heavy, DECAY, SPAM, PLAN, "up", seed=1)

    def test_metadata_recorded(self):
        ds = simulate_flip_scan(FIELD, DECAY, SPAM, PLAN, "up", seed=1,
                                metadata={"detuning_label": "red12"})
        assert ds.metadata["detuning_label"] == "red12"
        assert ds.init == "up"


class TestEchoScan:
    SIGNAL = EchoSignalParams(contrast=0.35, offset=0.5, decay_rate=4000.0)

    def test_deterministic(self):
        plan = ScanPlan.from_spacing(120e-9, count=40, shots=50)
        a = simulate_echo_scan(TWO_PI * 1.1e6, self.SIGNAL, plan, seed=4)
        b = simulate_echo_scan(TWO_PI * 1.1e6, self.SIGNAL, plan, seed=4)
        assert np.array_equal(a.dark_counts, b.dark_counts)
        assert a.init == "echo"

    def test_mean_tracks_model(self):
        plan = ScanPlan.from_spacing(120e-9, count=30, shots=400)
        stark = TWO_PI * 1.1e6
        acc = np.zeros(30)
        n_seeds = 100
        for s in range(n_seeds):
            ds = simulate_echo_scan(stark, self.SIGNAL, plan, seed=s, stream_block=1)
            acc += ds.dark_fractions
        mean = acc / n_seeds
        from iondyne.dynamics import spin_echo_signal
        model = spin_echo_signal(stark, plan.durations_s, 0.35, 0.5, decay_rate=4000.0).probability
        se = np.sqrt(model * (1.0 - model) / (400 * n_seeds))
        assert np.all(np.abs(mean - model) < 4.0 * se)


class TestSeedIndependence:
    def test_adjacent_seed_streams_uncorrelated(self):
        # Same plan under seed pairs (s, s+1): shot-count fluctuations
        # must not correlate across seeds.
        plan = ScanPlan(durations_s=np.geomspace(1e-5, 2e-3, 6), shots_per_duration=200)
        q = flip_dark_probability(FIELD, DECAY, SPAM, "down", plan.durations_s)
        sigma = np.sqrt(q * (1.0 - q) * plan.shots_per_duration)
        n_pairs = 100
        a = np.empty((n_pairs, 6))
        b = np.empty((n_pairs, 6))
        for s in range(n_pairs):
            da = simulate_flip_scan(FIELD, DECAY, SPAM, plan, "down", seed=2 * s, stream_block=0)
            db = simulate_flip_scan(FIELD, DECAY, SPAM, plan, "down", seed=2 * s + 1, stream_block=0)
            a[s] = (da.dark_counts - q * 200) / sigma
            b[s] = (db.dark_counts - q * 200) / sigma
        rho = float(np.corrcoef(a.ravel(), b.ravel())[0, 1])
        assert abs(rho) < 0.1


class TestCampaign:
    SIGNAL = EchoSignalParams(contrast=0.35, offset=0.5, decay_rate=4000.0)

    def schedule(self, drift=0.0) -> RunSchedule:
        return RunSchedule(
            run_labels=("red", "blue"),
            flip_plan=ScanPlan(durations_s=np.geomspace(3e-6, 2e-3, 8), shots_per_duration=50),
            echo_plan=ScanPlan.from_spacing(120e-9, count=24, shots=30),
            drift_per_block=drift,
        )

    def fields(self):
        blue = LaserField.from_intensity_fractions(
            detuning_delta=+TWO_PI * 11.52e9, rabi_omega=TWO_PI * 555e6,
            eps_plus_sq=0.25, eps_minus_sq=0.75, eps_pi_sq=0.0)
        return {"red": FIELD, "blue": blue}

    def test_block_structure(self):
        out = simulate_campaign(self.schedule(), self.fields(), DECAY, SPAM, self.SIGNAL, seed=5)
        assert len(out) == 2 * BLOCKS_PER_RUN
        kinds = [ds.metadata["kind"] for ds in out[:BLOCKS_PER_RUN]]
        inits = [ds.init for ds in out[:BLOCKS_PER_RUN]]
        assert tuple(kinds) == BLOCK_KINDS
        assert tuple(inits) == BLOCK_INITS
        for j, ds in enumerate(out):
            assert ds.metadata["run_index"] == str(j // BLOCKS_PER_RUN)
            # Block numbering is campaign-wide, so filenames stay unique.
            assert ds.metadata["block_index"] == str(j)
        assert out[0].metadata["detuning_label"] == "red"
        assert out[BLOCKS_PER_RUN].metadata["detuning_label"] == "blue"

    def test_label_metadata_attached(self):
        extra = {"red": {"optical_freq_hz": "7.43e14"}, "blue": {}}
        out = simulate_campaign(self.schedule(), self.fields(), DECAY, SPAM,
                                self.SIGNAL, seed=5, label_metadata=extra)
        assert out[0].metadata["optical_freq_hz"] == "7.43e14"
        assert "optical_freq_hz" not in out[BLOCKS_PER_RUN].metadata

    def test_unknown_label_rejected(self):
        schedule = RunSchedule(run_labels=("red", "green"),
                               flip_plan=self.schedule().flip_plan,
                               echo_plan=self.schedule().echo_plan)
        with pytest.raises(ValidationError):
            simulate_campaign(schedule, self.fields(), DECAY, SPAM, self.SIGNAL, seed=5)

    def test_drift_raises_late_block_intensity(self):
        # Expected dark fraction of the first echo point grows with the
        # drift factor through the stark frequency; compare block 0 and 3
        # at strong drift using the simulation means over many seeds.
        drifted = simulate_campaign(self.schedule(drift=0.05), self.fields(),
                                    DECAY, SPAM, self.SIGNAL, seed=5)
        flat = simulate_campaign(self.schedule(drift=0.0), self.fields(),
                                 DECAY, SPAM, self.SIGNAL, seed=5)
        # Same seed, same addresses: only the drift factor differs, so the
        # flip blocks (1, 2) must differ between the two campaigns.
        assert not np.array_equal(drifted[1].dark_counts, flat[1].dark_counts) or \
            not np.array_equal(drifted[2].dark_counts, flat[2].dark_counts)

    def test_deterministic_and_order_addressed(self):
        a = simulate_campaign(self.schedule(), self.fields(), DECAY, SPAM, self.SIGNAL, seed=5)
        b = simulate_campaign(self.schedule(), self.fields(), DECAY, SPAM, self.SIGNAL, seed=5)
        for da, db in zip(a, b):
            assert np.array_equal(da.dark_counts, db.dark_counts)
