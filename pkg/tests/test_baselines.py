import numpy as np
import pytest
from scipy import optimize

from gsbps import (DataError, Dataset, SeparationError, balance_report, design_for, fit_cbps, fit_gsbps,
                   fit_logistic, fit_logistic_s, solve)
from gsbps.loss import bernoulli_eval
from gsbps.simulation import Scenario, generate

from conftest import make_dataset


def _mle_oracle(T, X):
    res = optimize.minimize(lambda t: -bernoulli_eval(t, T, X).loss, np.zeros(X.shape[1]),
                            jac=lambda t: -bernoulli_eval(t, T, X).score, method="BFGS",
                            options={"gtol": 1e-10})
    return res.x


def test_logistic_matches_generic_mle():
    d = make_dataset(n=300, seed=3, partition=False)
    fit = fit_logistic(d)
    X = design_for(d, interactions=False).values
    np.testing.assert_allclose(fit.theta, _mle_oracle(d.treatment, X), atol=1e-5)
    assert np.max(np.abs(X.T @ (d.treatment - fit.propensities))) / d.n <= 1e-8


def test_logistic_null_model():
    rng = np.random.default_rng(5)
    n = 2000
    Z = rng.normal(size=(n, 2))
    T = (rng.uniform(size=n) < 0.3).astype(float)
    fit = fit_logistic(Dataset(Z, T))
    assert np.all(np.abs(fit.theta[1:]) < 3 * 2.2 / np.sqrt(n))
    assert fit.theta[0] == pytest.approx(np.log(T.mean() / (1 - T.mean())), abs=0.05)


def test_logistic_recovers_coefficients_over_draws():
    # mean over replicates within 3 Monte Carlo standard errors of the truth
    thetas = np.array([fit_logistic(generate(Scenario("PS1", seed=21), r)).theta for r in range(20)])
    mean, se = thetas.mean(axis=0), thetas.std(axis=0, ddof=1) / np.sqrt(len(thetas))
    truth = np.r_[-1.0, -1 / 3, 1 / 3, 1.0, -0.2, -0.2, 0.4, -0.4]
    assert np.all(np.abs(mean - truth) <= 3 * se + 1e-12)


def test_logistic_s_single_group_equals_pooled():
    d = make_dataset(n=300, seed=6)
    one = Dataset(d.covariates, d.treatment, d.outcome, np.ones((d.n, 1)), d.covariate_names, ("all",))
    pooled = fit_logistic(Dataset(d.covariates, d.treatment, d.outcome))
    np.testing.assert_allclose(fit_logistic_s(one).propensities, pooled.propensities, atol=1e-10)


def test_logistic_s_per_group_first_order_conditions(small_data):
    fit = fit_logistic_s(small_data)
    for k in range(small_data.n_subgroups):
        rows = small_data.subgroups[:, k] == 1
        X = np.column_stack([np.ones(rows.sum()), small_data.covariates[rows]])
        resid = X.T @ (small_data.treatment[rows] - fit.propensities[rows])
        assert np.max(np.abs(resid)) / rows.sum() <= 1e-8


def test_logistic_s_rejects_overlap():
    d = make_dataset(partition=False, seed=2)
    with pytest.raises(DataError, match="overlapping subgroups"):
        fit_logistic_s(d)


def test_logistic_s_empty_arm_is_separation():
    S = np.array([[1, 0]] * 4 + [[0, 1]] * 4, dtype=float)
    T = np.array([1, 0, 1, 0, 1, 1, 1, 1])
    d = Dataset(np.arange(8.0)[:, None] ** 1.5, T, subgroups=S)
    with pytest.raises(SeparationError):
        fit_logistic_s(d)


def test_cbps_exact_overall_balance(ps1_draw):
    fit = fit_cbps(ps1_draw)
    rep = balance_report(ps1_draw, fit)
    assert rep.max_global <= 1e-4


def test_cbps_is_solver_on_main_effects(small_data):
    a = fit_cbps(small_data)
    b = solve(small_data.treatment, design_for(small_data, interactions=False), "ATE")
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.propensities, b.propensities)


def test_gsbps_without_subgroups_is_cbps():
    d = make_dataset(k=0, seed=4)
    np.testing.assert_array_equal(fit_gsbps(d).theta, fit_cbps(d).theta)


def test_gsbps_subgroup_balance_beats_cbps_under_misspecification():
    d = generate(Scenario("PS2", seed=5), 0)
    g = balance_report(d, fit_gsbps(d)).subgroup_sd.max()
    c = balance_report(d, fit_cbps(d)).subgroup_sd.max()
    assert g <= 1e-4 < 5.0 < c
