"""Global, constrained, and adjusted maximum likelihood fits."""

import numpy as np
import pytest

from likpivot.fit import (
    fit_adjusted,
    fit_constrained,
    fit_global,
    likelihood_ratio,
    signed_root,
)
from likpivot.models import Dataset, make_model
from likpivot.pivots import AdjustmentSpec

Y123 = Dataset(np.array([1.0, 2.0, 3.0]))


class TestGlobalFit:
    def test_normal_closed_form(self):
        m = make_model("normal-mv")
        f = fit_global(m, Y123)
        np.testing.assert_allclose(f.theta_hat.values, [2.0, 2.0 / 3.0], atol=1e-12)
        assert f.converged
        assert f.grad_norm <= 1e-8 * max(1.0, abs(f.loglik))

    def test_exponential_closed_form(self):
        m = make_model("exponential")
        f = fit_global(m, Dataset(np.array([0.4, 0.5, 0.6])))
        assert f.theta_hat.values[0] == pytest.approx(2.0)

    def test_newton_agrees_with_closed_form(self):
        # force the Newton path with an explicit init
        m = make_model("normal-mv")
        f = fit_global(m, Y123, init=m.param_point([0.5, 2.0]))
        np.testing.assert_allclose(f.theta_hat.values, [2.0, 2.0 / 3.0], atol=1e-7)

    def test_gamma_against_grid_search_oracle(self):
        m = make_model("gamma")
        truth = m.param_point([3.0, 1.5])
        d = m.simulate(truth, 200, seed=41)
        f = fit_global(m, d)

        # independent two-stage grid search on a 400 x 400 lattice
        y = d.observations[:, 0]
        s, slog = y.sum(), np.log(y).sum()
        from scipy.special import gammaln

        def loglik(a, b):
            return 200 * (a * np.log(b) - gammaln(a)) + (a - 1) * slog - b * s

        center = np.array([3.0, 1.5])
        radius = np.array([1.5, 0.9])
        for _ in range(4):
            a_grid = np.linspace(center[0] - radius[0], center[0] + radius[0], 400)
            b_grid = np.linspace(center[1] - radius[1], center[1] + radius[1], 400)
            ll = loglik(a_grid[:, None], b_grid[None, :])
            i, j = np.unravel_index(np.argmax(ll), ll.shape)
            center = np.array([a_grid[i], b_grid[j]])
            radius = radius * (2.5 / 400)  # keep a few lattice cells around the argmax
        assert center[0] > 0 and center[1] > 0
        np.testing.assert_allclose(f.theta_hat.values, center, atol=1e-4)

    def test_observed_info_symmetric(self):
        m = make_model("gamma")
        d = m.simulate(m.param_point([2.0, 1.0]), 50, seed=4)
        f = fit_global(m, d)
        np.testing.assert_allclose(f.observed_info, f.observed_info.T)


class TestConstrainedFit:
    def test_normal_closed_form(self):
        m = make_model("normal-mv")
        prof = fit_constrained(m, Y123, 0.0)
        assert prof.theta_tilde.values[1] == pytest.approx(14.0 / 3.0)
        assert prof.M1[0] == pytest.approx(9.0 / 7.0)

    def test_at_mle_recovers_global(self):
        m = make_model("normal-mv")
        f = fit_global(m, Y123)
        prof = fit_constrained(m, Y123, float(f.psi_hat[0]))
        np.testing.assert_allclose(prof.theta_tilde.values, f.theta_hat.values, atol=1e-10)
        assert prof.profile_loglik == pytest.approx(f.loglik)

    @pytest.mark.parametrize("family,theta", [("normal-mv", [0.2, 1.1]), ("gamma", [3.0, 1.5])])
    def test_profile_finite_difference_oracle(self, family, theta):
        """5-point stencil of M reproduces M1 and M11."""
        m = make_model(family)
        d = m.simulate(m.param_point(theta), 60, seed=9)
        psi0 = float(theta[0]) * 1.1
        prof = fit_constrained(m, d, psi0)
        h = 1e-3 * max(1.0, abs(psi0))
        stencil = [psi0 - 2 * h, psi0 - h, psi0, psi0 + h, psi0 + 2 * h]
        mvals = np.array([fit_constrained(m, d, p).profile_loglik for p in stencil])
        m1_fd = (mvals[0] - 8 * mvals[1] + 8 * mvals[3] - mvals[4]) / (12 * h)
        m11_fd = (-mvals[0] + 16 * mvals[1] - 30 * mvals[2] + 16 * mvals[3] - mvals[4]) / (
            12 * h**2
        )
        assert abs(m1_fd - prof.M1[0]) <= 1e-5 * max(1.0, abs(prof.M1[0]))
        assert abs(m11_fd - prof.M11[0, 0]) <= 1e-3 * max(1.0, abs(prof.M11[0, 0]))

    def test_profile_score_identity(self):
        """M1 equals the interest component of the full score at theta_tilde."""
        m = make_model("gamma")
        d = m.simulate(m.param_point([2.5, 2.0]), 40, seed=10)
        prof = fit_constrained(m, d, 2.0)
        full = m.loglik_derivs(prof.theta_tilde, d, order=1)
        assert abs(prof.M1[0] - full.grad[0]) <= 1e-8 * max(1.0, abs(full.grad[0]))
        # nuisance block of the score vanishes at the constrained fit
        assert abs(full.grad[1]) <= 1e-6

    def test_vector_interest_no_nuisance(self):
        m = make_model("mvn-mean", q=2)
        d = m.simulate(m.param_point([0.0, 0.0]), 25, seed=6)
        prof = fit_constrained(m, d, [0.0, 0.0])
        np.testing.assert_array_equal(prof.theta_tilde.values, [0.0, 0.0])


class TestLikelihoodRatio:
    def test_w_nonnegative_zero_iff_at_mle(self):
        m = make_model("normal-mv")
        f = fit_global(m, Y123)
        for psi0 in np.linspace(-2.0, 4.0, 13):
            prof = fit_constrained(m, Y123, float(psi0))
            w = likelihood_ratio(f, prof)
            assert w >= 0.0
            if abs(psi0 - 2.0) > 1e-9:
                assert w > 0.0
        prof_hat = fit_constrained(m, Y123, 2.0)
        assert likelihood_ratio(f, prof_hat) == pytest.approx(0.0, abs=1e-12)
        assert signed_root(f, prof_hat) == 0.0

    def test_profile_bounded_by_max(self):
        m = make_model("gamma")
        d = m.simulate(m.param_point([2.0, 1.0]), 40, seed=2)
        f = fit_global(m, d)
        for psi0 in np.linspace(1.0, 3.5, 9):
            prof = fit_constrained(m, d, float(psi0))
            assert prof.profile_loglik <= f.loglik + 1e-10

    def test_signed_root_sign(self):
        m = make_model("normal-mv")
        f = fit_global(m, Y123)
        assert signed_root(f, fit_constrained(m, Y123, 0.0)) > 0
        assert signed_root(f, fit_constrained(m, Y123, 5.0)) < 0


class TestAdjustedFit:
    def test_null_adjustment_recovers_mle(self):
        m = make_model("normal-mv")
        f = fit_global(m, Y123)
        af = fit_adjusted(m, Y123, AdjustmentSpec(kind="none"), fit=f)
        assert af.psi_bar == pytest.approx(float(f.psi_hat[0]), abs=1e-7)
        assert af.adjusted_profile_max == pytest.approx(f.loglik, abs=1e-9)

    def test_tk_flat_matches_fine_grid(self):
        m = make_model("normal-mv")
        adj = AdjustmentSpec(kind="tierney_kadane")
        af = fit_adjusted(m, Y123, adj)
        # 1e-6-resolution grid search of Mbar
        from likpivot.pivots import adjustment_value

        f = fit_global(m, Y123)

        def mbar(psi):
            prof = fit_constrained(m, Y123, psi)
            return prof.profile_loglik + adjustment_value(adj, m, Y123, psi, prof, f)

        grid = np.arange(1.9, 2.1, 1e-6)
        vals = np.array([mbar(p) for p in grid[:: 2000]])  # coarse bracket first
        best = grid[::2000][np.argmax(vals)]
        fine = np.arange(best - 3e-3, best + 3e-3, 1e-6)
        vals = np.array([mbar(p) for p in fine])
        assert abs(af.psi_bar - fine[np.argmax(vals)]) <= 2e-6

    def test_wbar_nonnegative(self):
        m = make_model("normal-mv")
        adj = AdjustmentSpec(kind="tierney_kadane")
        d = m.simulate(m.param_point([0.0, 1.0]), 20, seed=14)
        af = fit_adjusted(m, d, adj)
        from likpivot.pivots import adjustment_value

        f = fit_global(m, d)
        for psi0 in np.linspace(-1.0, 1.0, 7):
            prof = fit_constrained(m, d, float(psi0))
            mbar0 = prof.profile_loglik + adjustment_value(adj, m, d, float(psi0), prof, f)
            assert 2.0 * (af.adjusted_profile_max - mbar0) >= -1e-9
