"""Reproducible Monte Carlo engines.

Parametric bootstrap p-values (sampling at the constrained MLE),
bootstrap-standardized signed roots, simulation-estimated Bartlett
factors, and the exact conditional distribution of the location-scale
fit given its configuration ancillary.

Everything is a pure function of its inputs and a master seed;
replicate seeds are derived per index, so results do not depend on
chunking or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fit import FitError, fit_constrained, fit_global
from .models import Dataset, DomainError, LocationScale, Model
from .pivots import AdjustmentSpec, PivotKind, evaluate_pivot
from .rng import replicate_seeds

__all__ = [
    "BootstrapMoments",
    "AncillaryConfig",
    "BartlettFactor",
    "ConditionalDistribution",
    "bootstrap_pvalue",
    "bootstrap_pvalues_paired",
    "bootstrap_standardized_r",
    "bartlett_factor",
    "conditional_distribution_location_scale",
    "pivot_values_batch",
    "pivot_values_multi",
    "w_batch",
]

#: replicate-fit failure fraction beyond which an experiment aborts
MAX_FAIL_FRACTION = 0.01


@dataclass
class BootstrapMoments:
    mean_star: float
    var_star: float
    reps: int


@dataclass
class BartlettFactor:
    """Simulation estimate of the Bartlett factor 1 + omega/n."""

    factor: float
    omega_hat: float
    mc_se: float


# --------------------------------------------------------------------- #
# Batched fitting and pivot evaluation
# --------------------------------------------------------------------- #


def _batch_global_fits(model: Model, ys: np.ndarray):
    """(theta_hat (m,d), ok (m,)) with one perturbed-start retry."""
    theta = model.mle_batch(ys)
    if theta is None:
        m = ys.shape[0]
        theta = np.empty((m, model.dim))
        ok = np.zeros(m, dtype=bool)
        for i in range(m):
            try:
                f = fit_global(model, Dataset(ys[i]))
                theta[i] = f.theta_hat.values
                ok[i] = f.converged
            except (FitError, DomainError, np.linalg.LinAlgError):
                ok[i] = False
        return theta, ok
    _, grad, _, _ = model.derivs_batch(theta, ys, order=1)
    tol = 1e-6 * max(1.0, float(ys.shape[1]))
    ok = np.all(np.isfinite(theta), axis=1) & (
        np.abs(grad).max(axis=1) <= tol
    )
    if not ok.all():
        bad = np.nonzero(~ok)[0]
        for i in bad:
            try:
                init = model.param_point(model.moment_init(ys[i]) * 1.05 + 1e-3)
                f = fit_global(model, Dataset(ys[i]), init=init)
                theta[i] = f.theta_hat.values
                ok[i] = f.converged
            except (FitError, DomainError, np.linalg.LinAlgError):
                ok[i] = False
    return theta, ok


def _batch_constrained_fits(model: Model, psi0, ys: np.ndarray):
    theta = model.constrained_mle_batch(psi0, ys)
    if theta is None:
        m = ys.shape[0]
        theta = np.empty((m, model.dim))
        ok = np.zeros(m, dtype=bool)
        for i in range(m):
            try:
                prof = fit_constrained(model, Dataset(ys[i]), psi0)
                theta[i] = prof.theta_tilde.values
                ok[i] = prof.converged
            except (FitError, DomainError, np.linalg.LinAlgError):
                ok[i] = False
        return theta, ok
    q = model.interest_dim
    _, grad, _, _ = model.derivs_batch(theta, ys, order=1)
    tol = 1e-6 * max(1.0, float(ys.shape[1]))
    nuis = grad[:, q:]
    ok = np.all(np.isfinite(theta), axis=1)
    if nuis.shape[1]:
        ok &= np.abs(nuis).max(axis=1) <= tol
    return theta, ok


def w_batch(model: Model, ys: np.ndarray, psi0) -> tuple[np.ndarray, np.ndarray]:
    """Likelihood ratio statistics W(psi0) for a batch of datasets."""
    theta_hat, ok_h = _batch_global_fits(model, ys)
    theta_til, ok_t = _batch_constrained_fits(model, psi0, ys)
    v_hat = model.derivs_batch(theta_hat, ys, order=0)[0]
    v_til = model.derivs_batch(theta_til, ys, order=0)[0]
    w = np.maximum(2.0 * (v_hat - v_til), 0.0)
    return w, ok_h & ok_t & np.isfinite(w)


def _golden_max(fn, lo: np.ndarray, hi: np.ndarray, iters: int = 60):
    """Vectorized golden-section maximizer on per-row brackets.

    Two evaluations per iteration (no state carry-over) keeps the
    per-row branching trivially vectorizable; 60 iterations shrink the
    bracket by ~3e-13, far below the profile curvature scale.
    """
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo.copy(), hi.copy()
    for _ in range(iters):
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        take = fn(c) >= fn(d)
        b = np.where(take, d, b)
        a = np.where(take, a, c)
    x = 0.5 * (a + b)
    return x, fn(x)


class _AdjustedProfileBatch:
    """Vectorized adjusted profile likelihood over replicate datasets.

    Requires closed-form constrained fits that broadcast over a
    per-replicate psi vector (true for the built-in analytic families).
    """

    def __init__(self, model: Model, ys: np.ndarray, adjustment: AdjustmentSpec):
        if model.interest_dim != 1:
            raise DomainError("adjusted profiles need a scalar interest parameter")
        if model.dim < 2:
            raise DomainError("adjustment requires a nuisance parameter")
        self.model = model
        self.ys = ys
        self.adjustment = adjustment
        self.theta_hat, self.ok = _batch_global_fits(model, ys)
        _, _, h_hat, _ = model.derivs_batch(self.theta_hat, ys, order=2)
        self._logdet_hat = self._nuis_logdet(h_hat)
        self._lp_hat = self._log_prior(self.theta_hat)
        inv = np.linalg.inv(-h_hat)
        self.se = np.sqrt(np.abs(inv[:, 0, 0]))

    def _nuis_logdet(self, hess):
        q = self.model.interest_dim
        sign, logdet = np.linalg.slogdet(-hess[:, q:, q:])
        bad = sign <= 0
        if np.any(bad):
            logdet = np.where(bad, np.nan, logdet)
        return logdet

    def _log_prior(self, thetas):
        if self.adjustment.log_prior is None:
            return 0.0
        return self.adjustment.log_prior(thetas.T)

    def value(self, psi: np.ndarray) -> np.ndarray:
        """Mbar(psi_i) on dataset i, vectorized over replicates."""
        theta_t = self.model.constrained_mle_batch(psi, self.ys)
        if theta_t is None:
            raise DomainError(
                f"{self.model.name}: batch adjusted profile needs closed-form "
                "constrained fits"
            )
        v, _, h, _ = self.model.derivs_batch(theta_t, self.ys, order=2)
        b = -0.5 * (self._nuis_logdet(h) - self._logdet_hat)
        if self.adjustment.log_prior is not None:
            b = b + self._log_prior(theta_t) - self._lp_hat
        return v + b

    def maximize(self, radius_se: float = 10.0):
        psi_hat = self.theta_hat[:, 0]
        radius = radius_se * self.se
        for attempt in range(2):
            lo, hi = psi_hat - radius, psi_hat + radius
            psi_bar, m_max = _golden_max(self.value, lo, hi)
            edge = 1e-5 * radius
            pinned = np.minimum(psi_bar - lo, hi - psi_bar) <= edge
            if not np.any(pinned):
                break
            if attempt == 1:
                raise FitError(
                    f"{int(pinned.sum())} adjusted-profile maximizers pinned to "
                    "the bracket boundary"
                )
            radius = radius * 4.0
        return psi_bar, m_max

    def mbar11(self, psi_bar: np.ndarray, m_max: np.ndarray) -> np.ndarray:
        h = np.maximum(1e-5 * np.maximum(1.0, np.abs(psi_bar)), 1e-3 * self.se)
        return (self.value(psi_bar + h) - 2.0 * m_max + self.value(psi_bar - h)) / h**2

    def mbar1(self, psi: np.ndarray) -> np.ndarray:
        h = np.maximum(1e-6 * np.maximum(1.0, np.abs(psi)), 1e-4 * self.se)
        return (self.value(psi + h) - self.value(psi - h)) / (2.0 * h)


def adjusted_w_batch(
    model: Model, ys: np.ndarray, psi0: float, adjustment: AdjustmentSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Adjusted likelihood ratio Wbar(psi0) for a batch of datasets."""
    prof = _AdjustedProfileBatch(model, ys, adjustment)
    psi_bar, m_max = prof.maximize()
    psi_vec = np.full(ys.shape[0], float(psi0))
    wbar = np.maximum(2.0 * (m_max - prof.value(psi_vec)), 0.0)
    return wbar, prof.ok & np.isfinite(wbar)


def pivot_values_multi(
    kinds,
    model: Model,
    ys: np.ndarray,
    psi0: float,
    adjustment: Optional[AdjustmentSpec] = None,
    theta_hat: Optional[np.ndarray] = None,
) -> tuple[dict, np.ndarray]:
    """Several pivot kinds on one batch of datasets, sharing the fits.

    Returns ({kind value: values array}, ok mask).  Sharing both the
    replicate datasets and the fitted parameters across kinds is what
    makes bootstrap comparisons of two pivots common-random-number
    paired.  ``theta_hat`` can be supplied when the global fits are
    already known (the conditional-quadrature path, where each grid
    node is its own exact fit).
    """
    kinds = [PivotKind(k) for k in kinds]
    n = ys.shape[1]
    psi0 = float(psi0)
    m = ys.shape[0]
    ok = np.ones(m, dtype=bool)
    out: dict[str, np.ndarray] = {}

    plain = [k for k in kinds if not k.adjusted]
    adjusted = [k for k in kinds if k.adjusted]

    if plain:
        if theta_hat is None:
            theta_hat, ok_h = _batch_global_fits(model, ys)
        else:
            ok_h = np.ones(m, dtype=bool)
        theta_til, ok_t = _batch_constrained_fits(model, psi0, ys)
        ok &= ok_h & ok_t
        dpsi = theta_hat[:, 0] - psi0
        need_score = any(
            k in (PivotKind.SO, PivotKind.SOC, PivotKind.SE, PivotKind.SEC)
            for k in plain
        )
        score = (
            model.derivs_batch(theta_til, ys, order=1)[1][:, 0] if need_score else None
        )
        cache: dict[str, np.ndarray] = {}

        def entry_at(which: str) -> np.ndarray:
            if which not in cache:
                if which == "obs_hat":
                    hess = model.derivs_batch(theta_hat, ys, order=2)[2]
                    cache[which] = np.linalg.inv(-hess)[:, 0, 0]
                elif which == "obs_til":
                    hess = model.derivs_batch(theta_til, ys, order=2)[2]
                    cache[which] = np.linalg.inv(-hess)[:, 0, 0]
                elif which == "exp_hat":
                    cache[which] = np.linalg.inv(
                        -model.expected_info(theta_hat, n)
                    )[:, 0, 0]
                else:
                    cache[which] = np.linalg.inv(
                        -model.expected_info(theta_til, n)
                    )[:, 0, 0]
            return cache[which]

        for kind in plain:
            if kind == PivotKind.R:
                v_hat = model.derivs_batch(theta_hat, ys, order=0)[0]
                v_til = model.derivs_batch(theta_til, ys, order=0)[0]
                w = np.maximum(2.0 * (v_hat - v_til), 0.0)
                vals = np.sign(dpsi) * np.sqrt(w)
            else:
                which = {
                    PivotKind.WO: "obs_hat",
                    PivotKind.SO: "obs_hat",
                    PivotKind.WOC: "obs_til",
                    PivotKind.SOC: "obs_til",
                    PivotKind.WE: "exp_hat",
                    PivotKind.SE: "exp_hat",
                    PivotKind.WEC: "exp_til",
                    PivotKind.SEC: "exp_til",
                }[kind]
                entry = entry_at(which)
                ok &= entry > 0
                safe = np.where(entry > 0, entry, 1.0)
                if kind in (PivotKind.WO, PivotKind.WOC, PivotKind.WE, PivotKind.WEC):
                    vals = dpsi / np.sqrt(safe)
                else:
                    vals = score * np.sqrt(safe)
            ok &= np.isfinite(vals)
            out[kind.value] = vals

    if adjusted:
        if adjustment is None or adjustment.kind == "none":
            raise DomainError("adjusted pivots require an adjustment specification")
        prof = _AdjustedProfileBatch(model, ys, adjustment)
        psi_bar, m_max = prof.maximize()
        psi_vec = np.full(m, psi0)
        ok &= prof.ok
        m11 = None
        for kind in adjusted:
            if kind == PivotKind.RBAR:
                wbar = np.maximum(2.0 * (m_max - prof.value(psi_vec)), 0.0)
                vals = np.sign(psi_bar - psi0) * np.sqrt(wbar)
            else:
                if m11 is None:
                    m11 = prof.mbar11(psi_bar, m_max)
                    ok &= m11 < 0
                    m11 = np.where(m11 < 0, m11, -1.0)
                if kind == PivotKind.AWO:
                    vals = (psi_bar - psi0) * np.sqrt(-m11)
                else:
                    vals = prof.mbar1(psi_vec) / np.sqrt(-m11)
            ok &= np.isfinite(vals)
            out[kind.value] = vals
    return out, ok


def pivot_values_batch(
    kind: PivotKind,
    model: Model,
    ys: np.ndarray,
    psi0: float,
    adjustment: Optional[AdjustmentSpec] = None,
    theta_hat: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One pivot kind over a batch of datasets: (values, ok mask)."""
    out, ok = pivot_values_multi(
        [kind], model, ys, psi0, adjustment=adjustment, theta_hat=theta_hat
    )
    return out[PivotKind(kind).value], ok


# --------------------------------------------------------------------- #
# Bootstrap engines
# --------------------------------------------------------------------- #


def bootstrap_pvalues_paired(
    kinds,
    model: Model,
    data: Dataset,
    psi0: float,
    B: int = 2000,
    seed: int = 0,
    adjustment: Optional[AdjustmentSpec] = None,
) -> dict[str, float]:
    """Bootstrap p-values of several pivots on one shared replicate set.

    All statistics are bootstrapped at the same theta_tilde(psi0) with
    the same simulated replicates, so differences between the returned
    p-values are common-random-number paired rather than dominated by
    independent resampling noise.
    """
    if B < 500:
        raise DomainError("bootstrap needs B >= 500")
    kinds = [PivotKind(k) for k in kinds]
    fit = fit_global(model, data)
    profile = fit_constrained(model, data, psi0)
    obs = {
        k.value: evaluate_pivot(
            k, model, data, psi0, adjustment=adjustment, fit=fit, profile=profile
        ).value
        for k in kinds
    }
    seeds = replicate_seeds(seed, f"boot-{model.name}", B)
    ys = model.simulate_batch(profile.theta_tilde.values, data.n, seeds)
    vals, ok = pivot_values_multi(kinds, model, ys, psi0, adjustment=adjustment)
    fail = 1.0 - ok.mean()
    if fail > MAX_FAIL_FRACTION:
        raise FitError(f"bootstrap replicate failure rate {fail:.1%} exceeds 1%")
    b_eff = int(ok.sum())
    return {
        k: _exceedance_p(int(np.sum(vals[k][ok] >= obs[k])), b_eff) for k in obs
    }


def _bootstrap_replicates(
    kind, model, data, psi0, B, seed, adjustment
) -> tuple[float, np.ndarray]:
    """(observed value, replicate values at theta_tilde(psi0))."""
    if B < 500:
        raise DomainError("bootstrap needs B >= 500")
    fit = fit_global(model, data)
    profile = fit_constrained(model, data, psi0)
    obs = evaluate_pivot(
        kind, model, data, psi0, adjustment=adjustment, fit=fit, profile=profile
    ).value
    seeds = replicate_seeds(seed, f"boot-{model.name}", B)
    ys = model.simulate_batch(profile.theta_tilde.values, data.n, seeds)
    vals, ok = pivot_values_batch(kind, model, ys, psi0, adjustment=adjustment)
    fail = 1.0 - ok.mean()
    if fail > MAX_FAIL_FRACTION:
        raise FitError(f"bootstrap replicate failure rate {fail:.1%} exceeds 1%")
    return obs, vals[ok]


def _exceedance_p(count: int, b_eff: int) -> float:
    """(count + 1)/(B + 1), with the all-exceed boundary pulled inside.

    The +1 convention already keeps the lower end off 0; when every
    replicate exceeds the observed value the count is capped at B - 1
    so the p-value stays strictly below 1 as well.
    """
    return (min(count, b_eff - 1) + 1.0) / (b_eff + 1.0)


def bootstrap_pvalue(
    kind,
    model: Model,
    data: Dataset,
    psi0: float,
    B: int = 2000,
    seed: int = 0,
    adjustment: Optional[AdjustmentSpec] = None,
) -> tuple[float, float]:
    """Upper-sided parametric bootstrap p-value at theta_tilde(psi0).

    p = (#{T* >= T_obs} + 1) / (B + 1), kept strictly inside (0, 1);
    the reported Monte Carlo standard error is sqrt(p(1-p)/B).
    """
    obs, vals = _bootstrap_replicates(kind, model, data, psi0, B, seed, adjustment)
    b_eff = vals.size
    p = _exceedance_p(int(np.sum(vals >= obs)), b_eff)
    mc_se = float(np.sqrt(p * (1.0 - p) / b_eff))
    return float(p), mc_se


def bootstrap_standardized_r(
    model: Model,
    data: Dataset,
    psi0: float,
    B: int = 2000,
    seed: int = 0,
) -> tuple[float, BootstrapMoments]:
    """(R_obs - E*) / sqrt(var*) with moments from the bootstrap at theta_tilde."""
    obs, vals = _bootstrap_replicates(PivotKind.R, model, data, psi0, B, seed, None)
    mean_star = float(vals.mean())
    var_star = float(vals.var(ddof=1))
    if var_star <= 0:
        raise FitError("degenerate bootstrap variance")
    return float((obs - mean_star) / np.sqrt(var_star)), BootstrapMoments(
        mean_star=mean_star, var_star=var_star, reps=vals.size
    )


# --------------------------------------------------------------------- #
# Bartlett factor
# --------------------------------------------------------------------- #


def bartlett_factor(
    model: Model,
    theta,
    n: int,
    q: Optional[int] = None,
    reps: int = 5000,
    seed: int = 0,
    adjusted: Optional[AdjustmentSpec] = None,
) -> BartlettFactor:
    """Simulation estimate of the Bartlett factor at theta.

    The factor is mean W(psi0)/q over ``reps`` datasets simulated at
    theta, with psi0 the interest slice of theta; ``adjusted`` switches
    to the adjusted statistic Wbar.
    """
    if reps < 1000:
        raise DomainError("bartlett_factor needs reps >= 1000")
    theta = model.param_point(np.asarray(theta, dtype=float))
    if q is None:
        q = model.interest_dim
    seeds = replicate_seeds(seed, f"bartlett-factor-{model.name}-n{n}", reps)
    ys = model.simulate_batch(theta.values, n, seeds)
    psi0 = theta.psi if q > 1 else float(theta.psi[0])
    if adjusted is not None and adjusted.kind != "none":
        w, ok = adjusted_w_batch(model, ys, psi0, adjusted)
    else:
        w, ok = w_batch(model, ys, psi0)
    fail = 1.0 - ok.mean()
    if fail > MAX_FAIL_FRACTION:
        raise FitError(f"bartlett replicate failure rate {fail:.1%} exceeds 1%")
    w = w[ok]
    factor = float(w.mean() / q)
    mc_se = float(w.std(ddof=1) / (q * np.sqrt(w.size)))
    return BartlettFactor(
        factor=factor, omega_hat=float(n * (factor - 1.0)), mc_se=mc_se
    )


# --------------------------------------------------------------------- #
# Conditional inference given the configuration ancillary
# --------------------------------------------------------------------- #


@dataclass(frozen=True)
class AncillaryConfig:
    """Configuration ancillary of a location-scale sample.

    ``a`` is the standardized residual vector: the MLE of the
    reconstructed data mu + sigma * a is exactly (mu, sigma).
    """

    a: np.ndarray

    @classmethod
    def from_data(cls, model: LocationScale, data: Dataset) -> "AncillaryConfig":
        f = fit_global(model, data)
        mu, sig = f.theta_hat.values
        return cls(a=(data.observations[:, 0] - mu) / sig)

    @property
    def n(self) -> int:
        return self.a.size


class ConditionalDistribution:
    """Discretized conditional law of (mu_hat, sigma_hat) given ``a``.

    The density is Fisher's conditional-density construction for the
    exact configuration ancillary,

        p(mu_hat, sigma_hat | a; theta)
            proportional to sigma_hat^(n-2)
              prod_i f((mu_hat + sigma_hat a_i - mu) / sigma),

    normalized on a tensor grid that is uniform in mu_hat and in
    log sigma_hat.
    """

    def __init__(
        self,
        model: LocationScale,
        config: AncillaryConfig,
        theta,
        grid_points: int = 201,
        span_se: float = 6.0,
    ):
        if not isinstance(model, LocationScale):
            raise DomainError("conditional quadrature is defined for location-scale models")
        self.model = model
        self.config = config
        self.theta = model.param_point(np.asarray(theta, dtype=float))
        self.grid_points = int(grid_points)
        self.span_se = float(span_se)
        self._build(self.span_se)
        if self._boundary_mass() > 1e-4:
            self._build(self.span_se * 1.5)
            if self._boundary_mass() > 1e-4:
                raise FitError("conditional grid boundary mass exceeds 1e-4 after widening")

    def _build(self, span_se: float):
        mu, sigma = self.theta.values
        n = self.config.n
        cov = np.linalg.inv(-self.model.expected_info(self.theta.values, n))
        se_mu = np.sqrt(cov[0, 0])
        se_logsig = np.sqrt(cov[1, 1]) / sigma
        g = self.grid_points
        self.mu_grid = mu + np.linspace(-span_se * se_mu, span_se * se_mu, g)
        self.logsig_grid = np.log(sigma) + np.linspace(
            -span_se * se_logsig, span_se * se_logsig, g
        )
        self.sig_grid = np.exp(self.logsig_grid)
        a = self.config.a
        z = (
            self.mu_grid[:, None, None]
            + self.sig_grid[None, :, None] * a[None, None, :]
            - mu
        ) / sigma
        loglik = self.model.base.g(z).sum(axis=2)
        # sigma_hat^(n-2) with the log-sigma grid volume element adds one power
        logdens = (n - 1) * self.logsig_grid[None, :] + loglik
        logdens -= logdens.max()
        w_mu = _trapezoid_weights(self.mu_grid)
        w_ls = _trapezoid_weights(self.logsig_grid)
        mass = np.exp(logdens) * w_mu[:, None] * w_ls[None, :]
        self.prob = mass / mass.sum()

    def _boundary_mass(self) -> float:
        p = self.prob
        return float(p[0, :].sum() + p[-1, :].sum() + p[:, 0].sum() + p[:, -1].sum())

    def expectation(self, values: np.ndarray) -> float:
        """Grid expectation of a function tabulated on (mu_hat, sigma_hat)."""
        return float((self.prob * values).sum())

    def grid_datasets(self) -> np.ndarray:
        """Reconstructed samples y = mu_hat + sigma_hat a, one per grid node."""
        y = (
            self.mu_grid[:, None, None]
            + self.sig_grid[None, :, None] * self.config.a[None, None, :]
        )
        return y.reshape(-1, self.config.n, 1)

    def grid_theta_hat(self) -> np.ndarray:
        """Exact global MLE of each reconstructed dataset (the grid node)."""
        g = self.grid_points
        mu = np.repeat(self.mu_grid, g)
        sig = np.tile(self.sig_grid, g)
        return np.stack([mu, sig], axis=1)

    def pivot_moments_multi(
        self,
        kinds,
        psi0: float,
        adjustment: Optional[AdjustmentSpec] = None,
    ) -> dict[str, tuple[float, float]]:
        """{kind: (E[T | a], E[T^2 | a])} with the grid fits shared."""
        ys = self.grid_datasets()
        vals, ok = pivot_values_multi(
            kinds,
            self.model,
            ys,
            psi0,
            adjustment=adjustment,
            theta_hat=self.grid_theta_hat(),
        )
        if not np.all(ok):
            if 1.0 - ok.mean() > MAX_FAIL_FRACTION:
                raise FitError("conditional grid pivot evaluation failed")
            p = np.where(ok.reshape(self.prob.shape), self.prob, 0.0)
            p = p / p.sum()
        else:
            p = self.prob
        out = {}
        for key, v in vals.items():
            flat = np.where(ok, v, 0.0).reshape(self.prob.shape)
            out[key] = (float((p * flat).sum()), float((p * flat**2).sum()))
        return out

    def pivot_moments(
        self,
        kind,
        psi0: float,
        adjustment: Optional[AdjustmentSpec] = None,
    ) -> tuple[float, float]:
        """(E[T | a], E[T^2 | a]) for one pivot kind at psi0."""
        return self.pivot_moments_multi([kind], psi0, adjustment=adjustment)[
            PivotKind(kind).value
        ]


def _trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    w = np.empty_like(grid)
    w[1:-1] = 0.5 * (grid[2:] - grid[:-2])
    w[0] = 0.5 * (grid[1] - grid[0])
    w[-1] = 0.5 * (grid[-1] - grid[-2])
    return w


def conditional_distribution_location_scale(
    model: LocationScale,
    config: AncillaryConfig,
    theta,
    grid_points: int = 201,
    span_se: float = 6.0,
) -> ConditionalDistribution:
    """Conditional law of the fit given the configuration ancillary."""
    return ConditionalDistribution(
        model, config, theta, grid_points=grid_points, span_se=span_se
    )
