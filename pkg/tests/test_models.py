import numpy as np
import pytest

from twophase import models
from twophase.errors import ConvergenceError


def breslow_loglik_direct(beta, time, event, x, w):
    """O(n^2) Breslow partial likelihood, independent of the package path."""
    beta = np.atleast_1d(beta)
    eta = x @ beta
    ll = 0.0
    for i in range(len(time)):
        if event[i]:
            risk = time >= time[i]
            ll += w[i] * (eta[i] - np.log(np.sum(w[risk] * np.exp(eta[risk]))))
    return ll


def logistic_loglik_direct(beta, y, x, w):
    eta = x @ np.atleast_1d(beta)
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def small_survival_data(seed=5, n=20):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1))
    t = rng.exponential(scale=np.exp(-0.6 * x[:, 0]))
    c = rng.exponential(scale=1.5, size=n)
    time = np.minimum(t, c)
    event = (t <= c).astype(float)
    if event.sum() == 0:
        event[0] = 1.0
    return time, event, x


class TestCox:
    def test_matches_grid_search_oracle(self):
        time, event, x = small_survival_data()
        w = np.ones(len(time))
        fit = models.fit_cox(time, event, x, w)
        # Two-stage grid maximization of the same likelihood, independent path.
        grid = np.arange(-4.0, 4.0, 1e-3)
        vals = [breslow_loglik_direct(np.array([b]), time, event, x, w) for b in grid]
        best = grid[int(np.argmax(vals))]
        fine = np.arange(best - 2e-3, best + 2e-3, 2e-5)
        vals = [breslow_loglik_direct(np.array([b]), time, event, x, w) for b in fine]
        best = fine[int(np.argmax(vals))]
        assert abs(fit.coefficients[0] - best) < 1e-4

    def test_loglik_matches_direct(self):
        time, event, x = small_survival_data(seed=11)
        w = np.ones(len(time)) + 0.5
        beta = np.array([0.3])
        ll, _, _ = models.cox_loglik_score_info(beta, time, event, x, w)
        assert ll == pytest.approx(breslow_loglik_direct(beta, time, event, x, w))

    def test_ties_use_breslow(self):
        time = np.array([1.0, 1.0, 2.0, 3.0])
        event = np.array([1.0, 1.0, 1.0, 0.0])
        x = np.array([[0.5], [-0.2], [0.1], [0.9]])
        w = np.array([1.0, 2.0, 1.0, 1.0])
        beta = np.array([0.4])
        ll, _, _ = models.cox_loglik_score_info(beta, time, event, x, w)
        assert ll == pytest.approx(breslow_loglik_direct(beta, time, event, x, w))

    def test_score_matches_finite_differences(self):
        time, event, x = small_survival_data(seed=3, n=40)
        x = np.column_stack([x, np.random.default_rng(1).normal(size=len(time))])
        w = np.random.default_rng(2).uniform(0.5, 2.0, size=len(time))
        rng = np.random.default_rng(9)
        eps = 1e-6
        for _ in range(10):
            beta = rng.uniform(-1, 1, size=2)
            _, score, _ = models.cox_loglik_score_info(beta, time, event, x, w)
            for j in range(2):
                e = np.zeros(2)
                e[j] = eps
                up, *_ = models.cox_loglik_score_info(beta + e, time, event, x, w)
                dn, *_ = models.cox_loglik_score_info(beta - e, time, event, x, w)
                fd = (up - dn) / (2 * eps)
                assert abs(score[j] - fd) <= 1e-6 * max(1.0, abs(fd))

    def test_null_covariate_near_zero(self):
        rng = np.random.default_rng(42)
        n = 4000
        x = rng.normal(size=(n, 1))
        t = rng.exponential(size=n)
        c = rng.exponential(scale=2.0, size=n)
        fit = models.fit_cox(np.minimum(t, c), (t <= c).astype(float), x)
        assert abs(fit.coefficients[0]) < 3 * fit.se[0]

    def test_influence_sums_to_zero(self):
        time, event, x = small_survival_data(seed=8, n=60)
        fit = models.fit_cox(time, event, x)
        h = fit.influence[:, 0]
        assert abs(h.sum()) < 1e-8 * np.abs(h).sum()

    def test_duplicated_half_weight_rows_halve_influence(self):
        time, event, x = small_survival_data(seed=13, n=25)
        fit = models.fit_cox(time, event, x)
        time2 = np.concatenate([time, time])
        event2 = np.concatenate([event, event])
        x2 = np.vstack([x, x])
        w2 = np.full(2 * len(time), 0.5)
        fit2 = models.fit_cox(time2, event2, x2, w2)
        np.testing.assert_allclose(fit2.coefficients, fit.coefficients, atol=1e-8)
        np.testing.assert_allclose(fit2.influence[:len(time)], fit.influence / 2,
                                   atol=1e-9)

    def test_integer_weights_equal_row_replication(self):
        time, event, x = small_survival_data(seed=21, n=15)
        w = np.array([1, 2, 3] * 5, dtype=float)
        fit_w = models.fit_cox(time, event, x, w)
        reps = np.repeat(np.arange(15), w.astype(int))
        fit_r = models.fit_cox(time[reps], event[reps], x[reps])
        np.testing.assert_allclose(fit_w.coefficients, fit_r.coefficients, atol=1e-8)

    def test_covariate_rescaling(self):
        time, event, x = small_survival_data(seed=2, n=50)
        x2 = np.column_stack([x, np.random.default_rng(5).normal(size=50)])
        fit = models.fit_cox(time, event, x2)
        fit.variance = models.sandwich_variance(fit)
        scaled = x2.copy()
        scaled[:, 0] *= 4.0
        fit_s = models.fit_cox(time, event, scaled)
        fit_s.variance = models.sandwich_variance(fit_s)
        assert fit_s.coefficients[0] == pytest.approx(fit.coefficients[0] / 4.0, abs=1e-7)
        assert fit_s.coefficients[1] == pytest.approx(fit.coefficients[1], abs=1e-7)
        assert fit_s.se[0] == pytest.approx(fit.se[0] / 4.0, rel=1e-6)

    def test_zero_events_raises(self):
        with pytest.raises(ConvergenceError):
            models.fit_cox(np.array([1.0, 2.0]), np.array([0.0, 0.0]),
                           np.array([[1.0], [2.0]]))

    def test_monotone_likelihood_raises(self):
        # Covariate perfectly ordered with event times: likelihood is monotone.
        time = np.arange(1.0, 13.0)
        event = np.ones(12)
        x = np.arange(12.0).reshape(-1, 1)
        with pytest.raises(ConvergenceError):
            models.fit_cox(time, event, x)


class TestLogistic:
    def test_intercept_only_weighted_prevalence(self):
        y = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
        w = np.array([2.0, 1.0, 1.0, 0.5, 3.0])
        fit = models.fit_logistic(y, np.ones((5, 1)), w)
        prev = np.sum(w * y) / np.sum(w)
        assert fit.coefficients[0] == pytest.approx(np.log(prev / (1 - prev)), abs=1e-8)

    def test_matches_nested_grid_oracle(self):
        rng = np.random.default_rng(17)
        n = 30
        x = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = (rng.uniform(size=n) < 1 / (1 + np.exp(-(0.2 + 0.8 * x[:, 1])))).astype(float)
        w = rng.uniform(0.5, 1.5, size=n)
        fit = models.fit_logistic(y, x, w)
        # Nested grid search, coarse to fine, on the same likelihood.
        b_range = [(-3.0, 3.0), (-3.0, 3.0)]
        center = np.zeros(2)
        width = 3.0
        for _ in range(6):
            g0 = np.linspace(center[0] - width, center[0] + width, 41)
            g1 = np.linspace(center[1] - width, center[1] + width, 41)
            vals = np.array([[logistic_loglik_direct(np.array([a, b]), y, x, w)
                              for b in g1] for a in g0])
            i, j = np.unravel_index(np.argmax(vals), vals.shape)
            center = np.array([g0[i], g1[j]])
            width /= 8.0
        del b_range
        np.testing.assert_allclose(fit.coefficients, center, atol=1e-4)

    def test_score_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        n = 50
        x = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = (rng.uniform(size=n) < 0.4).astype(float)
        w = rng.uniform(0.5, 2.0, size=n)
        eps = 1e-6
        for _ in range(10):
            beta = rng.uniform(-1, 1, size=2)
            _, score, _, _ = models.logistic_loglik_score_info(beta, y, x, w)
            for j in range(2):
                e = np.zeros(2)
                e[j] = eps
                up = models.logistic_loglik_score_info(beta + e, y, x, w)[0]
                dn = models.logistic_loglik_score_info(beta - e, y, x, w)[0]
                fd = (up - dn) / (2 * eps)
                assert abs(score[j] - fd) <= 1e-6 * max(1.0, abs(fd))

    def test_perfect_separation_raises(self):
        y = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
        x = np.column_stack([np.ones(6), np.array([-3.0, -2, -1, 1, 2, 3])])
        with pytest.raises(ConvergenceError):
            models.fit_logistic(y, x)

    def test_single_class_raises(self):
        with pytest.raises(ConvergenceError):
            models.fit_logistic(np.ones(4), np.ones((4, 1)))

    def test_influence_sums_to_zero(self):
        rng = np.random.default_rng(31)
        n = 80
        x = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = (rng.uniform(size=n) < 0.5).astype(float)
        fit = models.fit_logistic(y, x)
        for j in range(2):
            h = models.influence_for_target(fit, j)
            assert abs(h.sum()) < 1e-8 * max(np.abs(h).sum(), 1e-12)


class TestSandwich:
    def test_single_stratum_equals_classic_sandwich(self):
        rng = np.random.default_rng(7)
        n = 120
        x = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = (rng.uniform(size=n) < 0.5).astype(float)
        fit = models.fit_logistic(y, x)
        v = models.sandwich_variance(fit)
        _, _, info, prob = models.logistic_loglik_score_info(fit.coefficients, y, x,
                                                             np.ones(n))
        u = (y - prob)[:, None] * x
        a_inv = np.linalg.inv(info)
        classic = a_inv @ (u.T @ u) @ a_inv
        np.testing.assert_allclose(v, classic * n / (n - 1), rtol=1e-8)

    def test_doubling_weights_leaves_fit_and_se_unchanged(self):
        time, event, x = small_survival_data(seed=19, n=40)
        w = np.random.default_rng(3).uniform(1, 4, size=40)
        strata = np.repeat([0, 1], 20)
        f1 = models.fit_cox(time, event, x, w)
        f1.variance = models.sandwich_variance(f1, strata)
        f2 = models.fit_cox(time, event, x, 2 * w)
        f2.variance = models.sandwich_variance(f2, strata)
        np.testing.assert_allclose(f1.coefficients, f2.coefficients, atol=1e-9)
        np.testing.assert_allclose(f1.se, f2.se, rtol=1e-7)

    def test_single_record_stratum_pools_with_warning(self):
        rng = np.random.default_rng(23)
        n = 30
        x = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = (rng.uniform(size=n) < 0.5).astype(float)
        fit = models.fit_logistic(y, x)
        strata = np.zeros(n, dtype=int)
        strata[0] = 9
        with pytest.warns(UserWarning, match="pooled"):
            v = models.sandwich_variance(fit, strata)
        np.testing.assert_allclose(v, models.sandwich_variance(fit))

    def test_monte_carlo_se_calibration(self):
        rng = np.random.default_rng(1234)
        n = 300
        reps = 500
        betas = np.empty(reps)
        ses = np.empty(reps)
        for r in range(reps):
            x = np.column_stack([np.ones(n), rng.normal(size=n)])
            p = 1 / (1 + np.exp(-(0.3 + 0.7 * x[:, 1])))
            y = (rng.uniform(size=n) < p).astype(float)
            fit = models.fit_logistic(y, x)
            fit.variance = models.sandwich_variance(fit)
            betas[r] = fit.coefficients[1]
            ses[r] = fit.se[1]
        assert abs(betas.std(ddof=1) - ses.mean()) < 0.15 * ses.mean()


def test_target_index_out_of_range():
    fit = models.fit_logistic(np.array([0.0, 1.0, 0, 1]), np.ones((4, 1)))
    with pytest.raises(IndexError):
        models.influence_for_target(fit, 3)


def test_reporting_transforms_match_published_effects():
    assert round(models.hazard_ratio(0.87, 0.25), 2) == 1.24
    assert round(models.hazard_ratio(1.06, 0.25), 2) == 1.30
    assert round(models.hazard_ratio(-0.54, 0.25), 2) == 0.87
