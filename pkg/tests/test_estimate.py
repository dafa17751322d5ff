"""Posterior estimate records: construction and file round trips."""

import numpy as np
import pytest

from iondyne import ValidationError
from iondyne.inference.estimate import (
    COLUMN_HEADER,
    FORMAT_HEADER,
    PosteriorEstimate,
    read_estimates,
    write_estimates,
)


def make_estimate(**overrides) -> PosteriorEstimate:
    kwargs = dict(
        params=("r_plus", "r_minus", "delta_r"),
        median=np.array([2000.0, 6000.0, 4000.0]),
        ci68_lo=np.array([1900.0, 5800.0, 3800.0]),
        ci68_hi=np.array([2100.0, 6200.0, 4200.0]),
        rhat=np.array([1.003, 1.002, 1.004]),
        acceptance_rate=0.27,
        converged=True,
        samples=None,
        metadata={"run_index": "0", "role": "flip"},
    )
    kwargs.update(overrides)
    return PosteriorEstimate(**kwargs)


def test_value_and_sigma_accessors():
    est = make_estimate()
    assert est.value("delta_r") == 4000.0
    assert est.sigma("delta_r") == pytest.approx(200.0)
    with pytest.raises(KeyError):
        est.value("nope")


def test_interval_ordering_enforced():
    with pytest.raises(ValidationError):
        make_estimate(ci68_lo=np.array([2100.0, 5800.0, 3800.0]))


def test_round_trip(tmp_path):
    est = make_estimate()
    path = tmp_path / "est.csv"
    write_estimates(est, path)
    back = read_estimates(path)
    assert back.params == est.params
    assert np.array_equal(back.median, est.median)
    assert np.array_equal(back.ci68_lo, est.ci68_lo)
    assert np.array_equal(back.ci68_hi, est.ci68_hi)
    assert np.array_equal(back.rhat, est.rhat)
    assert dict(back.metadata) == dict(est.metadata)
    assert back.converged == est.converged


def test_file_layout(tmp_path):
    path = tmp_path / "est.csv"
    write_estimates(make_estimate(), path)
    lines = path.read_text().splitlines()
    assert lines[0] == FORMAT_HEADER
    assert COLUMN_HEADER in lines
    row = next(l for l in lines if l.startswith("delta_r,"))
    fields = row.split(",")
    assert len(fields) == 5


def test_unconverged_round_trips(tmp_path):
    est = make_estimate(converged=False, rhat=np.array([1.2, 1.1, 1.3]))
    path = tmp_path / "bad.csv"
    write_estimates(est, path)
    assert read_estimates(path).converged is False
