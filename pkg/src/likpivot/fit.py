"""Maximum likelihood fitting: global, constrained, and adjusted-profile.

The optimizer is Newton with backtracking line search on the
log-likelihood, falling back to a steepest-ascent step whenever the
Hessian is not negative definite.  Families with closed-form estimators
(exponential, normal, the q-variate normal mean) shortcut the iteration;
the Newton path remains the reference implementation and is exercised
against those closed forms in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models import Dataset, DomainError, Model, ParamPoint

__all__ = [
    "FitError",
    "FitResult",
    "ProfileResult",
    "AdjustedFit",
    "fit_global",
    "fit_constrained",
    "fit_adjusted",
    "likelihood_ratio",
    "signed_root",
]

MAX_ITER = 200
GRAD_TOL = 1e-8
#: |psi_hat - psi0| below this is treated as an exact tie and R = 0.
TIE_TOL = 1e-10


class FitError(RuntimeError):
    """Optimization failed in a way the caller must not ignore."""


@dataclass
class FitResult:
    """Global maximum likelihood fit."""

    theta_hat: ParamPoint
    loglik: float
    observed_info: np.ndarray  # J(theta_hat) = -L_rs
    converged: bool
    iterations: int
    grad_norm: float
    hess: np.ndarray = None  # L_rs(theta_hat)

    @property
    def psi_hat(self) -> np.ndarray:
        return self.theta_hat.psi


@dataclass
class ProfileResult:
    """Constrained fit at fixed interest value psi0."""

    psi0: np.ndarray
    theta_tilde: ParamPoint
    profile_loglik: float  # M(psi0)
    M1: np.ndarray         # q-vector, profile score
    M11: np.ndarray        # q x q profile Hessian (Schur complement)
    hess_tilde: np.ndarray  # full L_rs at theta_tilde
    converged: bool
    iterations: int


@dataclass
class AdjustedFit:
    """Maximizer of an adjusted profile likelihood Mbar = M + B."""

    psi_bar: float
    adjusted_profile_max: float
    Mbar11_at_max: float


# --------------------------------------------------------------------- #
# Newton machinery
# --------------------------------------------------------------------- #


def _newton_max(obj, x0: np.ndarray, max_iter: int = MAX_ITER):
    """Maximize obj(x) -> (value, grad, hess) by damped Newton.

    Returns (x, value, grad, hess, converged, iterations).
    """
    x = np.asarray(x0, dtype=float).copy()
    value, grad, hess = obj(x)
    if not np.isfinite(value):
        raise FitError(f"objective not finite at start {x0}")
    it = 0
    for it in range(1, max_iter + 1):
        tol = GRAD_TOL * max(1.0, abs(value))
        if np.linalg.norm(grad, np.inf) <= tol:
            return x, value, grad, hess, True, it - 1
        step = None
        try:
            eig = np.linalg.eigvalsh(hess)
            if eig.max() < 0:
                step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = None
        if step is None:
            # steepest ascent, scaled to the curvature magnitude
            scale = max(1.0, float(np.abs(np.diag(hess)).max()))
            step = grad / scale
        # backtracking with domain guard: obj returns -inf outside
        t = 1.0
        slope = float(grad @ step)
        accepted = False
        for _ in range(60):
            x_new = x + t * step
            v_new, g_new, h_new = obj(x_new)
            if np.isfinite(v_new) and v_new >= value + 1e-4 * t * slope:
                x, value, grad, hess = x_new, v_new, g_new, h_new
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # cannot improve; report where we are
            return x, value, grad, hess, np.linalg.norm(grad, np.inf) <= tol, it
    tol = GRAD_TOL * max(1.0, abs(value))
    return x, value, grad, hess, np.linalg.norm(grad, np.inf) <= tol, it


def fit_global(model: Model, data: Dataset, init: Optional[ParamPoint] = None) -> FitResult:
    """Global MLE with observed information at the maximizer."""
    model.check_data(data)
    ys = data.observations[None, :, :]

    closed = model.mle_batch(ys)
    if closed is not None and init is None:
        theta_v = closed[0]
        _, grad, hess, _ = model.derivs_batch(theta_v, ys, order=2)
        value = float(model.derivs_batch(theta_v, ys, order=0)[0][0])
        gn = float(np.linalg.norm(grad[0], np.inf))
        return FitResult(
            theta_hat=model.param_point(theta_v),
            loglik=value,
            observed_info=-hess[0],
            converged=gn <= GRAD_TOL * max(1.0, abs(value)),
            iterations=0,
            grad_norm=gn,
            hess=hess[0],
        )

    x0 = init.values if init is not None else model.moment_init(data.observations)

    def obj(x):
        if not model.in_domain(x):
            return -np.inf, None, None
        v, g, h, _ = model.derivs_batch(x, ys, order=2)
        return float(v[0]), g[0], h[0]

    x, value, grad, hess, converged, it = _newton_max(obj, x0)
    if not np.all(np.isfinite(hess)):
        raise FitError("non-finite Hessian at the fitted point")
    return FitResult(
        theta_hat=model.param_point(x),
        loglik=value,
        observed_info=-hess,
        converged=bool(converged),
        iterations=it,
        grad_norm=float(np.linalg.norm(grad, np.inf)),
        hess=hess,
    )


def fit_constrained(
    model: Model, data: Dataset, psi0, init_phi: Optional[np.ndarray] = None
) -> ProfileResult:
    """Constrained MLE with the interest slice fixed at psi0.

    M1 is the interest block of the full score at theta_tilde (the
    profile-score identity) and M11 the Schur complement of the observed
    information there.
    """
    model.check_data(data)
    q = model.interest_dim
    d = model.dim
    psi0 = np.atleast_1d(np.asarray(psi0, dtype=float))
    if psi0.size != q:
        raise DomainError(f"psi0 must have length {q}")
    ys = data.observations[None, :, :]

    closed = model.constrained_mle_batch(psi0, ys)
    if closed is not None and init_phi is None:
        theta_v = closed[0]
        converged, it = True, 0
    elif q == d:
        theta_v = psi0.copy()
        converged, it = True, 0
    else:
        if init_phi is None:
            # warm start from the global fit's nuisance slice
            try:
                init_phi = fit_global(model, data).theta_hat.phi
            except FitError:
                init_phi = model.moment_init(data.observations)[q:]

        def obj(phi):
            x = np.concatenate([psi0, phi])
            if not model.in_domain(x):
                return -np.inf, None, None
            v, g, h, _ = model.derivs_batch(x, ys, order=2)
            return float(v[0]), g[0][q:], h[0][q:, q:]

        phi, _, _, _, converged, it = _newton_max(obj, np.asarray(init_phi, dtype=float))
        theta_v = np.concatenate([psi0, phi])

    if not model.in_domain(theta_v):
        raise FitError(f"constrained fit left the domain at psi0={psi0}")
    v, g, h, _ = model.derivs_batch(theta_v, ys, order=2)
    value, grad, hess = float(v[0]), g[0], h[0]
    M1 = grad[:q].copy()
    J = -hess
    if q == d:
        M11 = hess[:q, :q].copy()
    else:
        J_pp = J[:q, :q]
        J_pf = J[:q, q:]
        J_ff = J[q:, q:]
        try:
            M11 = -(J_pp - J_pf @ np.linalg.solve(J_ff, J_pf.T))
        except np.linalg.LinAlgError as exc:
            raise FitError(f"singular nuisance information: {exc}") from exc
    return ProfileResult(
        psi0=psi0,
        theta_tilde=model.param_point(theta_v),
        profile_loglik=value,
        M1=M1,
        M11=M11,
        hess_tilde=hess,
        converged=bool(converged),
        iterations=it,
    )


# --------------------------------------------------------------------- #
# Likelihood ratio helpers
# --------------------------------------------------------------------- #


def likelihood_ratio(fit: FitResult, profile: ProfileResult) -> float:
    """W(psi0) = 2 {M(psi_hat) - M(psi0)}, clamped at 0 against round-off."""
    w = 2.0 * (fit.loglik - profile.profile_loglik)
    return max(w, 0.0)


def signed_root(fit: FitResult, profile: ProfileResult) -> float:
    """R(psi0) = sgn(psi_hat - psi0) sqrt(W); R = 0 on an exact tie."""
    dpsi = float(fit.psi_hat[0] - profile.psi0[0])
    if abs(dpsi) < TIE_TOL:
        return 0.0
    return float(np.sign(dpsi) * np.sqrt(likelihood_ratio(fit, profile)))


# --------------------------------------------------------------------- #
# Adjusted profile likelihood
# --------------------------------------------------------------------- #


def fit_adjusted(
    model: Model,
    data: Dataset,
    adjustment,
    fit: Optional[FitResult] = None,
    bracket_se: float = 10.0,
) -> AdjustedFit:
    """Maximize Mbar(psi) = M(psi) + B(psi) over a Wald bracket.

    The bracket is psi_hat +- ``bracket_se`` standard errors; a
    maximizer pinned to the boundary triggers one widen-and-retry, then
    an error.  Mbar11 at the maximizer comes from a central second
    difference.
    """
    from .pivots import adjustment_value
    from scipy.optimize import minimize_scalar

    if model.interest_dim != 1:
        raise DomainError("adjusted profile fits require a scalar interest parameter")
    if fit is None:
        fit = fit_global(model, data)
    se = float(np.sqrt(np.linalg.inv(fit.observed_info)[0, 0]))
    psi_hat = float(fit.psi_hat[0])

    def mbar(psi: float) -> float:
        prof = fit_constrained(model, data, psi)
        return prof.profile_loglik + adjustment_value(
            adjustment, model, data, psi, prof, fit
        )

    radius = bracket_se * se
    for attempt in range(2):
        lo, hi = psi_hat - radius, psi_hat + radius
        res = minimize_scalar(
            lambda p: -mbar(p), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-10 * max(1.0, abs(psi_hat))},
        )
        psi_bar = float(res.x)
        edge = 1e-6 * radius
        if min(psi_bar - lo, hi - psi_bar) > edge:
            break
        if attempt == 1:
            raise FitError("adjusted-profile maximizer pinned to the bracket boundary")
        radius *= 2.0
    m_max = float(-res.fun)
    h = max(1e-5 * max(1.0, abs(psi_bar)), 1e-3 * se)
    m_p, m_m = mbar(psi_bar + h), mbar(psi_bar - h)
    mbar11 = (m_p - 2.0 * m_max + m_m) / h**2
    return AdjustedFit(
        psi_bar=psi_bar, adjusted_profile_max=m_max, Mbar11_at_max=float(mbar11)
    )
