"""Model families: simulation, derivatives, exact tensors."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from likpivot.models import (
    Dataset,
    DomainError,
    available_families,
    finite_difference_derivs,
    make_model,
    read_csv_dataset,
)

ALL_SCALAR_FAMILIES = ["exponential", "normal-mv", "gamma", "ls-normal", "ls-logistic", "ls-t"]


def _model(family):
    return make_model(family, df=5) if family == "ls-t" else make_model(family)


class TestSimulate:
    def test_determinism_contract(self):
        m = make_model("normal-mv")
        th = m.param_point([0.0, 1.0])
        a = m.simulate(th, 3, seed=7)
        b = m.simulate(th, 3, seed=7)
        assert a.observations.shape == (3, 1)
        assert np.all(np.isfinite(a.observations))
        np.testing.assert_array_equal(a.observations, b.observations)
        c = m.simulate(th, 3, seed=8)
        assert not np.array_equal(a.observations, c.observations)

    def test_exponential_moment_oracle(self):
        m = make_model("exponential")
        d = m.simulate(m.param_point([2.0]), 10_000, seed=1)
        y = d.observations[:, 0]
        # E[Y] = 1/theta = 0.5
        se = y.std(ddof=1) / np.sqrt(y.size)
        assert abs(y.mean() - 0.5) <= 5.0 * se

    def test_student_t_symmetry_oracle(self):
        m = make_model("ls-t", df=5)
        d = m.simulate(m.param_point([0.0, 1.0]), 50, seed=2)
        y = d.observations[:, 0]
        # SE of the sample median ~ 1 / (2 f(0) sqrt(n)) for the t5 density
        from scipy.stats import t as t_dist

        se_med = 1.0 / (2.0 * t_dist(5).pdf(0.0) * np.sqrt(50))
        assert abs(np.median(y)) <= 5.0 * se_med

    def test_domain_rejection(self):
        m = make_model("exponential")
        with pytest.raises(DomainError):
            m.simulate(m.param_point([-1.0]), 10, seed=0)

    def test_minimum_n(self):
        m = make_model("normal-mv")
        with pytest.raises(DomainError):
            m.simulate(m.param_point([0.0, 1.0]), 2, seed=0)


class TestLoglikDerivs:
    def test_exponential_closed_form(self):
        m = make_model("exponential")
        y = np.full(10, 0.5)  # sum y = 5
        d = Dataset(y)
        derivs = m.loglik_derivs(m.param_point([2.0]), d, order=3)
        assert derivs.grad[0] == pytest.approx(10 / 2 - 5)       # = 0
        assert derivs.hess[0, 0] == pytest.approx(-10 / 4)       # = -2.5
        assert derivs.third[0, 0, 0] == pytest.approx(2 * 10 / 8)  # = 2.5

    def test_normal_score_vanishes_at_mle(self):
        m = make_model("normal-mv")
        d = Dataset(np.array([1.0, 2.0, 3.0]))
        derivs = m.loglik_derivs(m.param_point([2.0, 2.0 / 3.0]), d, order=1)
        np.testing.assert_allclose(derivs.grad, 0.0, atol=1e-12)

    @pytest.mark.parametrize("family", ALL_SCALAR_FAMILIES)
    def test_finite_difference_oracle(self, family):
        m = _model(family)
        rng = np.random.default_rng(11)
        base = {"exponential": [2.0], "normal-mv": [0.3, 1.4], "gamma": [3.0, 1.5]}.get(
            family, [0.2, 0.9]
        )
        theta = m.param_point(np.asarray(base) * (1.0 + 0.05 * rng.uniform(size=len(base))))
        d = m.simulate(theta, 25, seed=5)
        an = m.loglik_derivs(theta, d, order=3)
        fd = finite_difference_derivs(m, theta, d, order=3)
        np.testing.assert_allclose(
            an.grad, fd.grad, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(an.grad).max())
        )
        np.testing.assert_allclose(
            an.hess, fd.hess, rtol=1e-4, atol=1e-4 * max(1.0, np.abs(an.hess).max())
        )
        np.testing.assert_allclose(
            an.third, fd.third, rtol=1e-3, atol=1e-3 * max(1.0, np.abs(an.third).max())
        )

    def test_support_violation_reports_row(self):
        m = make_model("exponential")
        with pytest.raises(DomainError, match="row 2"):
            m.loglik_derivs(m.param_point([1.0]), Dataset(np.array([1.0, 2.0, -1.0])), 1)

    def test_order_truncation(self):
        m = make_model("gamma")
        d = m.simulate(m.param_point([2.0, 1.0]), 20, seed=3)
        derivs = m.loglik_derivs(m.param_point([2.0, 1.0]), d, order=1)
        assert derivs.hess is None and derivs.third is None


class TestExactTensors:
    def test_exponential(self):
        m = make_model("exponential")
        t = m.exact_tensors(m.param_point([2.0]), 10)
        assert t.lam2[0, 0] == pytest.approx(-10 / 4)
        assert t.lam3[0, 0, 0] == pytest.approx(2 * 10 / 8)
        assert t.lam21[0, 0, 0] == 0.0  # L_11 non-random
        assert t.lam111[0, 0, 0] == pytest.approx(-2 * 10 / 8)

    def test_normal_information(self):
        m = make_model("normal-mv")
        t = m.exact_tensors(m.param_point([0.0, 1.0]), 8)
        np.testing.assert_allclose(t.lam2, np.diag([-8.0, -4.0]), atol=1e-14)

    def test_location_scale_unavailable(self):
        m = make_model("ls-t", df=5)
        assert m.exact_tensors(m.param_point([0.0, 1.0]), 20) is None

    @pytest.mark.parametrize("family", ["exponential", "normal-mv", "gamma"])
    def test_tensor_arrays_match_mc_derivative_means(self, family):
        """lambda_rs and lambda_rst against direct simulation averages."""
        m = _model(family)
        theta = m.param_point({"exponential": [2.0], "normal-mv": [0.1, 1.3],
                               "gamma": [3.0, 1.5]}[family])
        n, reps = 12, 4000
        t = m.exact_tensors(theta, n)
        from likpivot.rng import replicate_seeds

        ys = m.simulate_batch(theta.values, n, replicate_seeds(0, "tt", reps))
        _, G, H, T3 = m.derivs_batch(theta.values, ys, order=3)
        se2 = H.std(axis=0) / np.sqrt(reps) + 1e-12
        assert np.all(np.abs(H.mean(axis=0) - t.lam2) <= 5 * se2 + 1e-9)
        se3 = T3.std(axis=0) / np.sqrt(reps) + 1e-12
        assert np.all(np.abs(T3.mean(axis=0) - t.lam3) <= 5 * se3 + 1e-9)

    @pytest.mark.parametrize("family", ALL_SCALAR_FAMILIES + ["mvn-mean"])
    def test_score_mean_zero(self, family):
        """First Bartlett identity precursor: E L_r = 0."""
        m = _model(family) if family != "mvn-mean" else make_model("mvn-mean", q=2)
        theta = {
            "exponential": [2.0], "normal-mv": [0.0, 1.0], "gamma": [3.0, 1.5],
            "ls-normal": [0.0, 1.0], "ls-logistic": [0.0, 1.0], "ls-t": [0.0, 1.0],
            "mvn-mean": [0.0, 0.0],
        }[family]
        from likpivot.rng import replicate_seeds

        ys = m.simulate_batch(np.asarray(theta), 15, replicate_seeds(3, "sm", 10_000))
        _, G, _, _ = m.derivs_batch(np.asarray(theta), ys, order=1)
        se = G.std(axis=0) / np.sqrt(G.shape[0])
        assert np.all(np.abs(G.mean(axis=0)) <= 4.0 * se)


class TestExpectedInfo:
    def test_ls_normal_matches_closed_form(self):
        m = make_model("ls-normal")
        lam2 = m.expected_info(np.array([0.5, 2.0]), 10)
        np.testing.assert_allclose(lam2, np.diag([-10 / 4.0, -20 / 4.0]), atol=1e-8)

    def test_ls_t_matches_known_constant(self):
        # Fisher information for t location: (nu+1)/(nu+3) per observation
        m = make_model("ls-t", df=5)
        lam2 = m.expected_info(np.array([0.0, 1.0]), 1)
        assert lam2[0, 0] == pytest.approx(-(5 + 1) / (5 + 3), rel=1e-8)

    def test_batch_theta(self):
        m = make_model("gamma")
        thetas = np.array([[2.0, 1.0], [3.0, 1.5]])
        out = m.expected_info(thetas, 7)
        assert out.shape == (2, 2, 2)
        np.testing.assert_allclose(out[1], m.expected_info(thetas[1], 7))


class TestRegistry:
    def test_families_listed(self):
        fams = available_families()
        for f in ["exponential", "normal-mv", "gamma", "ls-normal", "ls-logistic",
                  "ls-t", "mvn-mean"]:
            assert f in fams

    def test_unknown_family(self):
        with pytest.raises(DomainError):
            make_model("weibull")

    def test_csv_roundtrip(self, tmp_path):
        path = tmp_path / "y.csv"
        path.write_text("y\n1.0\n2.0\n3.0\n")
        d = read_csv_dataset(path)
        np.testing.assert_array_equal(d.observations[:, 0], [1.0, 2.0, 3.0])


@settings(max_examples=12, deadline=None)
@given(
    rate=st.floats(0.2, 5.0),
    seed=st.integers(0, 10_000),
)
def test_exponential_derivative_property(rate, seed):
    """Analytic gradient tracks finite differences at random rates."""
    m = make_model("exponential")
    theta = m.param_point([rate])
    d = m.simulate(theta, 12, seed=seed)
    an = m.loglik_derivs(theta, d, order=2)
    fd = finite_difference_derivs(m, theta, d, order=2)
    np.testing.assert_allclose(an.grad, fd.grad, rtol=1e-5, atol=1e-7 * abs(an.value))
    np.testing.assert_allclose(an.hess, fd.hess, rtol=1e-3)
