"""Beta prior KS checks"""

import pytest

from src.analysis.priors import check_priors


def test_small_sample_report():
    report = check_priors(64, 8, samples=3_000, seed=0)
    assert report.status == "ok"
    assert report.dim == 64 and report.subspace_dim == 8
    assert report.energy_prior == "Beta(4,28)"
    assert report.coordinate_prior == "Beta(0.5,3.5)"
    assert 0.0 <= report.ks_energy < 0.05
    assert 0.0 <= report.ks_coordinate < 0.05
    assert report.passes(0.05)


def test_degenerate_single_subspace():
    report = check_priors(16, 16, samples=100)
    assert report.status == "degenerate"
    assert report.ks_energy is None
    assert report.passes()
    assert report.to_dict()["status"] == "degenerate"


def test_rejects_non_divisor():
    with pytest.raises(ValueError):
        check_priors(128, 3)


@pytest.mark.slow
def test_default_geometry_ks_bound():
    report = check_priors(128, 8, samples=100_000, seed=0)
    assert report.ks_energy < 0.02
    assert report.ks_coordinate < 0.02
