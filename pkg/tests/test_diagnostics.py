import numpy as np
import pytest

from gsbps import Dataset, balance_report, diagnostic_matrix, parse_transforms, standardized_difference
from gsbps.diagnostics import format_value, weighted_sd_arm

from conftest import make_dataset


def test_sd_unit_weights_two_points():
    assert weighted_sd_arm(np.array([1.0, 3.0]), np.ones(2)) == pytest.approx(np.sqrt(2), abs=1e-12)


def test_sd_constant_is_zero():
    assert weighted_sd_arm(np.full(4, 2.5), np.array([1.0, 2.0, 3.0, 4.0])) == 0.0


def test_sd_single_unit_undefined():
    assert np.isnan(weighted_sd_arm(np.array([1.0]), np.ones(1)))


def test_sd_reliability_weights_by_hand():
    z, w = np.array([0.0, 1.0, 4.0]), np.array([1.0, 2.0, 1.0])
    mean = (0 + 2 + 4) / 4
    var = 4 / (16 - 6) * (1 * mean ** 2 + 2 * (1 - mean) ** 2 + 1 * (4 - mean) ** 2)
    assert weighted_sd_arm(z, w) == pytest.approx(np.sqrt(var), abs=1e-12)


def test_sd_unit_weights_matches_sample_sd():
    z = np.random.default_rng(0).normal(size=25)
    assert weighted_sd_arm(z, np.ones(25)) == pytest.approx(np.std(z, ddof=1), rel=1e-12)


def test_standardized_difference_by_hand():
    z = np.array([1.0, 3.0, 0.0, 2.0])
    T = np.array([1.0, 1.0, 0.0, 0.0])
    assert standardized_difference(z, T, np.ones(4), np.ones(4)) == pytest.approx(100 / np.sqrt(2), abs=1e-12)
    assert standardized_difference(z, T, np.ones(4), np.ones(4)) == pytest.approx(70.71, abs=5e-3)


def test_standardized_difference_equal_means_zero():
    z = np.array([1.0, 3.0, 1.0, 3.0])
    T = np.array([1.0, 1.0, 0.0, 0.0])
    assert standardized_difference(z, T, np.ones(4), np.ones(4)) == 0.0


def test_zero_pooled_sd():
    T = np.array([1.0, 1.0, 0.0, 0.0])
    assert standardized_difference(np.array([1.0, 1.0, 1.0, 1.0]), T, np.ones(4), np.ones(4)) == 0.0
    assert np.isnan(standardized_difference(np.array([1.0, 1.0, 2.0, 2.0]), T, np.ones(4), np.ones(4)))


def test_scale_and_weight_normalisation_invariance():
    rng = np.random.default_rng(1)
    z, T = rng.normal(size=30), np.r_[np.ones(15), np.zeros(15)]
    w1, w0 = rng.uniform(0.5, 3, 30), rng.uniform(0.5, 3, 30)
    base = standardized_difference(z, T, w1, w0)
    assert standardized_difference(7.5 * z, T, w1, w0) == pytest.approx(base, rel=1e-12)
    assert standardized_difference(z, T, 4 * w1, w0) == pytest.approx(base, rel=1e-12)
    assert standardized_difference(z, T, w1, 0.2 * w0) == pytest.approx(base, rel=1e-12)


def test_report_identical_arms_all_zero():
    Z = np.array([[1.0], [2.0], [1.0], [2.0]])
    d = Dataset(Z, np.array([1, 1, 0, 0]), subgroups=np.ones((4, 1)))
    rep = balance_report(d)
    assert np.all(rep.global_sd == 0) and np.all(rep.subgroup_sd == 0)


def test_report_undefined_cell_recorded():
    Z = np.array([[1.0], [2.0], [1.5], [2.5], [3.0]])
    S = np.array([[1], [1], [1], [0], [0]], dtype=float)
    d = Dataset(Z, np.array([1, 0, 0, 1, 0]), subgroups=S)
    rep = balance_report(d)
    assert rep.undefined_cells == [(0, 0)]
    assert np.isnan(rep.mean_subgroup)
    assert np.isfinite(rep.global_sd).all()


def test_transforms_add_rows():
    d = make_dataset(m=4)
    d = Dataset(d.covariates, d.treatment, d.outcome, d.subgroups, ("X1", "X2", "X3", "X4"), d.subgroup_names)
    terms = parse_transforms("X1*X1, X1*X4")
    assert terms == [("X1", "X1"), ("X1", "X4")]
    Zd, names = diagnostic_matrix(d, terms)
    np.testing.assert_allclose(Zd[:, 4], d.covariates[:, 0] ** 2)
    np.testing.assert_allclose(Zd[:, 5], d.covariates[:, 0] * d.covariates[:, 3])
    rep = balance_report(d, diag_covariates=Zd, diag_names=names)
    assert len(rep.rows()) == (1 + d.n_subgroups) * 6


def test_format_value():
    assert format_value(np.nan) == "NA"
    assert format_value(1 / 3) == "0.333333"
    assert float(format_value(1 / 3, "full")) == 1 / 3
