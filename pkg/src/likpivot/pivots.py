"""The pivot catalog: twelve asymptotically standard normal statistics.

Direct evaluation goes through the defining formulas (never the
expansions): the signed root R, Wald and score statistics with observed
or expected information evaluated at the global or constrained MLE, and
the three adjusted-profile variants.  ``expansion_coefficients`` returns
each pivot's second-order coefficient arrays (xi^rst, xi^rs, and the
order-1/n constant for adjusted pivots), which feed the cumulant and
p-value machinery in :mod:`likpivot.theory`.

Superscript-index placement note: ``xi3[r, s, t]`` multiplies
l_rs l_t and ``xi2[r, s]`` multiplies l_r l_s in the expansion
T = eta^(1/2) (T1 + xi3 l_rs l_t - xi2 l_r l_s + const).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .fit import (
    AdjustedFit,
    FitError,
    FitResult,
    ProfileResult,
    TIE_TOL,
    fit_adjusted,
    fit_constrained,
    fit_global,
    signed_root,
)
from .models import Dataset, DomainError, Model
from .tensors import CumulantTensors, DerivedTensors
from .rng import replicate_seeds

__all__ = [
    "PivotKind",
    "PivotValue",
    "ExpansionCoefficients",
    "AdjustmentSpec",
    "AdjustmentInfo",
    "WEC_VARIANTS",
    "evaluate_pivot",
    "expansion_coefficients",
    "adjustment_value",
    "beta1",
]


class PivotKind(str, Enum):
    R = "r"
    WO = "wo"
    SO = "so"
    WOC = "woc"
    SOC = "soc"
    WE = "we"
    WEC = "wec"
    SE = "se"
    SEC = "sec"
    RBAR = "rbar"
    AWO = "awo"
    ASO = "aso"

    @classmethod
    def from_string(cls, s: str) -> "PivotKind":
        try:
            return cls(s.strip().lower())
        except ValueError:
            raise DomainError(
                f"unknown pivot '{s}'; choose from "
                + ", ".join(k.value for k in cls)
            ) from None

    @property
    def adjusted(self) -> bool:
        return self in (PivotKind.RBAR, PivotKind.AWO, PivotKind.ASO)


#: Kinds whose xi^rs1 slice satisfies the second-order stability condition.
STABLE_KINDS = (
    PivotKind.R,
    PivotKind.WO,
    PivotKind.SO,
    PivotKind.WOC,
    PivotKind.SOC,
    PivotKind.RBAR,
    PivotKind.AWO,
    PivotKind.ASO,
)

#: Variants of the WEC xi^rs coefficient (see expansion_coefficients).
WEC_VARIANTS = ("derived", "printed", "printed-dedup")


@dataclass(frozen=True)
class AdjustmentSpec:
    """Profile-likelihood adjustment B(psi).

    ``kind='none'`` leaves the profile untouched; ``'tierney_kadane'``
    is the Laplace/posterior adjustment
    B(psi) = -1/2 log det(-L_nuis(theta_tilde)) / det(-L_nuis(theta_hat))
             + log pi(theta_tilde)/pi(theta_hat),
    with a flat prior when ``log_prior`` is absent.  ``log_prior_grad``
    must return the gradient of log pi for the analytic beta1 formula.
    The batch experiment paths call ``log_prior`` with the parameter
    components stacked first (shape (d,) or (d, m)), so priors must be
    written with broadcasting numpy operations.
    """

    kind: str = "none"
    log_prior: Optional[Callable[[np.ndarray], float]] = None
    log_prior_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.kind not in ("none", "tierney_kadane"):
            raise DomainError(f"unknown adjustment kind '{self.kind}'")


@dataclass
class AdjustmentInfo:
    """beta_1 = E B_1(psi) and where it came from."""

    beta1: float
    source: str  # analytic_rho | analytic_tk | mc_estimate
    mc_se: Optional[float] = None


@dataclass
class PivotValue:
    kind: PivotKind
    psi0: float
    value: float
    fit: FitResult
    profile: ProfileResult
    adjusted: Optional[AdjustedFit] = None


@dataclass
class ExpansionCoefficients:
    """Second-order expansion arrays of one pivot."""

    xi3: np.ndarray          # (d, d, d), multiplies l_rs l_t
    xi2: np.ndarray          # (d, d), multiplies l_r l_s
    sigma_const: float = 0.0  # the O(1/n) constant of adjusted pivots

    @property
    def xi_rs1(self) -> np.ndarray:
        """The t = 1 slice, subject of the stability condition."""
        return self.xi3[:, :, 0]


# --------------------------------------------------------------------- #
# Direct evaluation
# --------------------------------------------------------------------- #


def _inv_entry00(mat: np.ndarray, what: str) -> float:
    try:
        inv = np.linalg.inv(mat)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"singular {what}: {exc}") from exc
    return float(inv[0, 0])


def evaluate_pivot(
    kind: PivotKind,
    model: Model,
    data: Dataset,
    psi0: float,
    adjustment: Optional[AdjustmentSpec] = None,
    fit: Optional[FitResult] = None,
    profile: Optional[ProfileResult] = None,
) -> PivotValue:
    """Evaluate one pivot at psi0 by its defining formula.

    For the information-standardized statistics, -L^11 is the (1,1)
    entry of the inverse of the full observed-information matrix (at
    theta_hat or theta_tilde as the kind dictates), and -lambda^11 the
    same entry of the inverted expected information.
    """
    kind = PivotKind(kind)
    if model.interest_dim != 1:
        raise DomainError("pivots are defined for a scalar interest parameter")
    if kind.adjusted and (adjustment is None or adjustment.kind == "none"):
        raise DomainError(f"pivot {kind.value} requires an adjustment specification")
    if fit is None:
        fit = fit_global(model, data)
    if profile is None:
        profile = fit_constrained(model, data, psi0)
    if not (fit.converged and profile.converged):
        raise FitError("pivot evaluation requires converged fits")
    psi0 = float(np.atleast_1d(psi0)[0])
    dpsi = float(fit.psi_hat[0]) - psi0
    m1 = float(profile.M1[0])
    n = data.n
    adj_fit = None

    if kind == PivotKind.R:
        value = signed_root(fit, profile)
    elif kind in (PivotKind.WO, PivotKind.SO):
        neg_l11 = _inv_entry00(fit.observed_info, "observed information")
        if neg_l11 <= 0:
            raise FitError("observed information not positive definite at theta_hat")
        value = dpsi / np.sqrt(neg_l11) if kind == PivotKind.WO else m1 * np.sqrt(neg_l11)
    elif kind in (PivotKind.WOC, PivotKind.SOC):
        neg_l11 = _inv_entry00(-profile.hess_tilde, "observed information at theta_tilde")
        if neg_l11 <= 0:
            raise FitError("observed information not positive definite at theta_tilde")
        value = dpsi / np.sqrt(neg_l11) if kind == PivotKind.WOC else m1 * np.sqrt(neg_l11)
    elif kind in (PivotKind.WE, PivotKind.SE):
        lam2 = model.expected_info(fit.theta_hat.values, n)
        neg_lam11 = _inv_entry00(-lam2, "expected information")
        value = dpsi / np.sqrt(neg_lam11) if kind == PivotKind.WE else m1 * np.sqrt(neg_lam11)
    elif kind in (PivotKind.WEC, PivotKind.SEC):
        lam2 = model.expected_info(profile.theta_tilde.values, n)
        neg_lam11 = _inv_entry00(-lam2, "expected information at theta_tilde")
        value = dpsi / np.sqrt(neg_lam11) if kind == PivotKind.WEC else m1 * np.sqrt(neg_lam11)
    else:
        adj_fit = fit_adjusted(model, data, adjustment, fit=fit)
        mbar11 = adj_fit.Mbar11_at_max
        if mbar11 >= 0:
            raise FitError("adjusted profile not concave at its maximizer")
        mbar_psi0 = profile.profile_loglik + adjustment_value(
            adjustment, model, data, psi0, profile, fit
        )
        if kind == PivotKind.RBAR:
            wbar = max(2.0 * (adj_fit.adjusted_profile_max - mbar_psi0), 0.0)
            dbar = adj_fit.psi_bar - psi0
            value = 0.0 if abs(dbar) < TIE_TOL else np.sign(dbar) * np.sqrt(wbar)
        elif kind == PivotKind.AWO:
            value = (adj_fit.psi_bar - psi0) * np.sqrt(-mbar11)
        else:  # ASO; score form uses the -1/2 exponent like its
            # unadjusted counterparts
            h = max(1e-5 * max(1.0, abs(psi0)), 1e-8)
            prof_p = fit_constrained(model, data, psi0 + h)
            prof_m = fit_constrained(model, data, psi0 - h)
            mbar_p = prof_p.profile_loglik + adjustment_value(
                adjustment, model, data, psi0 + h, prof_p, fit
            )
            mbar_m = prof_m.profile_loglik + adjustment_value(
                adjustment, model, data, psi0 - h, prof_m, fit
            )
            mbar1 = (mbar_p - mbar_m) / (2.0 * h)
            value = mbar1 / np.sqrt(-mbar11)

    value = float(value)
    if not np.isfinite(value):
        raise FitError(f"pivot {kind.value} evaluated non-finite")
    return PivotValue(
        kind=kind, psi0=psi0, value=value, fit=fit, profile=profile, adjusted=adj_fit
    )


# --------------------------------------------------------------------- #
# Adjustment function and beta1
# --------------------------------------------------------------------- #


def adjustment_value(
    adjustment: AdjustmentSpec,
    model: Model,
    data: Dataset,
    psi: float,
    profile: ProfileResult,
    fit: FitResult,
) -> float:
    """B(psi) for the Tierney-Kadane adjustment (0 for kind 'none').

    B(psi) = -1/2 log( det[-L_ab(theta_tilde)] / det[-L_ab(theta_hat)] )
             + log( pi(theta_tilde) / pi(theta_hat) ),
    with a, b ranging over the nuisance block.
    """
    if adjustment is None or adjustment.kind == "none":
        return 0.0
    q = model.interest_dim
    if model.dim - q < 1:
        raise DomainError("adjustment requires at least one nuisance parameter")
    nuis_tilde = -profile.hess_tilde[q:, q:]
    nuis_hat = fit.observed_info[q:, q:]
    sign_t, logdet_t = np.linalg.slogdet(nuis_tilde)
    sign_h, logdet_h = np.linalg.slogdet(nuis_hat)
    if sign_t <= 0 or sign_h <= 0:
        raise FitError("nuisance information block not positive definite")
    b = -0.5 * (logdet_t - logdet_h)
    if adjustment.log_prior is not None:
        b += float(
            adjustment.log_prior(profile.theta_tilde.values)
            - adjustment.log_prior(fit.theta_hat.values)
        )
    return float(b)


def beta1(
    adjustment: AdjustmentSpec,
    tensors: CumulantTensors,
    derived: DerivedTensors,
    model: Optional[Model] = None,
    theta=None,
    n: Optional[int] = None,
    mode: str = "analytic",
    reps: int = 2000,
    seed: int = 0,
) -> AdjustmentInfo:
    """beta_1 = E B_1(psi) for an adjustment function.

    ``mode='analytic'`` evaluates the Tierney-Kadane contraction
    beta_1 = eta lam^1r (nu^st lam_rst / 2 - d_r log pi); ``mode='rho'``
    returns the generic profile-score-centering value rho; ``mode='mc'``
    estimates E B_1 by simulation at theta with a central psi-difference
    of B.
    """
    d = tensors.dim
    if d < 2:
        raise DomainError("beta1 requires a nuisance parameter (d >= 2)")
    if mode == "analytic":
        if adjustment.kind != "tierney_kadane":
            raise DomainError("analytic beta1 is defined for the Tierney-Kadane adjustment")
        a1 = derived.lam_up[0]
        inner = 0.5 * np.einsum("st,rst->r", derived.nu, tensors.lam3)
        if adjustment.log_prior_grad is not None:
            if theta is None:
                raise DomainError("theta needed to evaluate the prior gradient")
            inner = inner - np.asarray(
                adjustment.log_prior_grad(np.asarray(theta, dtype=float)), dtype=float
            )
        return AdjustmentInfo(
            beta1=float(derived.eta * (a1 @ inner)), source="analytic_tk"
        )
    if mode == "rho":
        from .tensors import rho as _rho

        return AdjustmentInfo(beta1=_rho(tensors, derived), source="analytic_rho")
    if mode == "mc":
        if model is None or theta is None or n is None:
            raise DomainError("mc mode needs model, theta and n")
        theta_pt = model.param_point(theta)
        psi = float(theta_pt.psi[0])
        se = float(np.sqrt(-derived.lam_up[0, 0]))
        h = 0.1 * se
        seeds = replicate_seeds(seed, f"beta1-{model.name}-n{n}", reps)
        vals = _b1_mc_batch(adjustment, model, theta_pt.values, n, psi, h, seeds)
        return AdjustmentInfo(
            beta1=float(np.mean(vals)),
            source="mc_estimate",
            mc_se=float(np.std(vals, ddof=1) / np.sqrt(vals.size)),
        )
    raise DomainError(f"unknown beta1 mode '{mode}'")


def _b1_mc_batch(adjustment, model, theta_values, n, psi, h, seeds):
    """Central-difference B_1(psi) on simulated datasets (batch path)."""
    ys = model.simulate_batch(theta_values, n, seeds)
    bp = _adjustment_value_batch(adjustment, model, ys, psi + h)
    bm = _adjustment_value_batch(adjustment, model, ys, psi - h)
    return (bp - bm) / (2.0 * h)


def _adjustment_value_batch(adjustment, model, ys, psi):
    """Vectorized B(psi) over replicate datasets.

    Falls back to the scalar path replicate-by-replicate when the model
    has no closed-form fits.
    """
    q = model.interest_dim
    theta_t = model.constrained_mle_batch(np.atleast_1d(psi), ys)
    theta_h = model.mle_batch(ys)
    if theta_t is None or theta_h is None:
        out = np.empty(ys.shape[0])
        for i in range(ys.shape[0]):
            data = Dataset(ys[i])
            f = fit_global(model, data)
            prof = fit_constrained(model, data, psi)
            out[i] = adjustment_value(adjustment, model, data, psi, prof, f)
        return out
    _, _, h_t, _ = model.derivs_batch(theta_t, ys, order=2)
    _, _, h_h, _ = model.derivs_batch(theta_h, ys, order=2)
    sign_t, logdet_t = np.linalg.slogdet(-h_t[:, q:, q:])
    sign_h, logdet_h = np.linalg.slogdet(-h_h[:, q:, q:])
    if np.any(sign_t <= 0) or np.any(sign_h <= 0):
        raise FitError("nuisance information block not positive definite")
    b = -0.5 * (logdet_t - logdet_h)
    if adjustment.log_prior is not None:
        lp = np.array([adjustment.log_prior(t) for t in theta_t])
        lh = np.array([adjustment.log_prior(t) for t in theta_h])
        b = b + lp - lh
    return b


# --------------------------------------------------------------------- #
# Expansion coefficients
# --------------------------------------------------------------------- #


def _xi3_r(dv: DerivedTensors) -> np.ndarray:
    # lam^1r lam^st + lam^1r tau^st / 2
    a1 = dv.lam_up[0]
    return np.einsum("r,st->rst", a1, dv.lam_up + 0.5 * dv.tau)


def _xi2_like(dv: DerivedTensors, lam3: np.ndarray, left: np.ndarray, right: np.ndarray,
              weight: float) -> np.ndarray:
    # weight * lam^1t left^ru right^sv lam_tuv
    a1 = dv.lam_up[0]
    return weight * np.einsum("t,ru,sv,tuv->rs", a1, left, right, lam3)


def _xi2_cross(dv: DerivedTensors, lam21: np.ndarray, left: np.ndarray, right: np.ndarray,
               weight: float) -> np.ndarray:
    # weight * lam^1t left^ru right^sv lam_tu,v
    a1 = dv.lam_up[0]
    return weight * np.einsum("t,ru,sv,tuv->rs", a1, left, right, lam21)


def expansion_coefficients(
    kind: PivotKind,
    tensors: CumulantTensors,
    derived: DerivedTensors,
    adj_info: Optional[AdjustmentInfo] = None,
    wec_variant: str = "derived",
) -> ExpansionCoefficients:
    """Coefficient arrays of the pivot's second-order expansion.

    ``wec_variant`` selects the WEC xi^rs formula: ``'derived'``
    (re-derived from the constrained-MLE expansion; satisfies the
    WE/WEC p-value equivalence and is the default), ``'printed'`` (the
    published form, which carries an apparent duplicated term), or
    ``'printed-dedup'`` (the published form with the duplicate dropped).
    The verification harness reports which variant actually satisfies
    the WE/WEC equivalence relation.
    """
    kind = PivotKind(kind)
    dv = derived
    lam3, lam21 = tensors.lam3, tensors.lam21
    lam_up, tau, nu = dv.lam_up, dv.tau, dv.nu
    a1 = lam_up[0]
    sigma_const = 0.0
    if kind.adjusted:
        if adj_info is None:
            raise DomainError(f"pivot {kind.value} needs adjustment info (beta1)")
        sigma_const = adj_info.beta1 / dv.eta

    xi2_wo = _xi2_like(dv, lam3, lam_up, nu, 0.5)
    if kind in (PivotKind.R, PivotKind.RBAR):
        xi3 = _xi3_r(dv)
        xi2 = xi2_wo + _xi2_like(dv, lam3, tau, tau, 1.0 / 6.0)
    elif kind in (PivotKind.WO, PivotKind.SOC, PivotKind.AWO):
        xi3 = _xi3_r(dv)
        xi2 = xi2_wo
    elif kind in (PivotKind.SO, PivotKind.WOC, PivotKind.ASO):
        xi3 = _xi3_r(dv)
        xi2 = xi2_wo + _xi2_like(dv, lam3, tau, tau, 0.5)
    elif kind == PivotKind.WE:
        xi3 = np.einsum("r,st->rst", a1, lam_up)
        xi2 = xi2_wo + _xi2_cross(dv, lam21, tau, lam_up, 0.5)
    elif kind == PivotKind.WEC:
        xi3 = np.einsum("r,st->rst", a1, lam_up)
        if wec_variant == "derived":
            # xi2_WE + (tau^ru tau^sv)(lam_tuv + lam_tu,v) lam^1t / 2
            xi2 = (
                xi2_wo
                + _xi2_cross(dv, lam21, tau, lam_up, 0.5)
                + _xi2_like(dv, lam3, tau, tau, 0.5)
                + _xi2_cross(dv, lam21, tau, tau, 0.5)
            )
        elif wec_variant == "printed":
            xi2 = 2.0 * xi2_wo + _xi2_cross(dv, lam21, tau, tau, 0.5)
        elif wec_variant == "printed-dedup":
            xi2 = xi2_wo + _xi2_cross(dv, lam21, tau, tau, 0.5)
        else:
            raise DomainError(f"unknown wec_variant '{wec_variant}'")
    elif kind == PivotKind.SE:
        xi3 = np.einsum("r,st->rst", a1, nu)
        xi2 = (
            xi2_wo
            + _xi2_like(dv, lam3, tau, tau, 0.5)
            - _xi2_cross(dv, lam21, tau, lam_up, 0.5)
        )
    elif kind == PivotKind.SEC:
        xi3 = np.einsum("r,st->rst", a1, nu)
        xi2 = xi2_wo - _xi2_cross(dv, lam21, tau, nu, 0.5)
    else:  # pragma: no cover
        raise DomainError(f"unhandled pivot kind {kind}")
    return ExpansionCoefficients(xi3=xi3, xi2=xi2, sigma_const=float(sigma_const))


def expansion_coefficients_naive(
    kind: PivotKind,
    tensors: CumulantTensors,
    derived: DerivedTensors,
    adj_info: Optional[AdjustmentInfo] = None,
    wec_variant: str = "derived",
) -> ExpansionCoefficients:
    """All-indices-loop twin of :func:`expansion_coefficients`."""
    d = tensors.dim
    dv = derived
    lam_up, tau, nu = dv.lam_up, dv.tau, dv.nu
    lam3, lam21 = tensors.lam3, tensors.lam21
    kind = PivotKind(kind)

    def contract3(left, right, weight, arr):
        out = np.zeros((d, d))
        for r in range(d):
            for s in range(d):
                acc = 0.0
                for t in range(d):
                    for u in range(d):
                        for v in range(d):
                            acc += lam_up[0, t] * left[r, u] * right[s, v] * arr[t, u, v]
                out[r, s] = weight * acc
        return out

    fast = expansion_coefficients(kind, tensors, derived, adj_info, wec_variant)
    xi2_wo = contract3(lam_up, nu, 0.5, lam3)
    if kind in (PivotKind.R, PivotKind.RBAR):
        xi2 = xi2_wo + contract3(tau, tau, 1.0 / 6.0, lam3)
    elif kind in (PivotKind.WO, PivotKind.SOC, PivotKind.AWO):
        xi2 = xi2_wo
    elif kind in (PivotKind.SO, PivotKind.WOC, PivotKind.ASO):
        xi2 = xi2_wo + contract3(tau, tau, 0.5, lam3)
    elif kind == PivotKind.WE:
        xi2 = xi2_wo + contract3(tau, lam_up, 0.5, lam21)
    elif kind == PivotKind.WEC:
        if wec_variant == "derived":
            xi2 = (
                xi2_wo
                + contract3(tau, lam_up, 0.5, lam21)
                + contract3(tau, tau, 0.5, lam3)
                + contract3(tau, tau, 0.5, lam21)
            )
        elif wec_variant == "printed":
            xi2 = 2.0 * xi2_wo + contract3(tau, tau, 0.5, lam21)
        else:
            xi2 = xi2_wo + contract3(tau, tau, 0.5, lam21)
    elif kind == PivotKind.SE:
        xi2 = xi2_wo + contract3(tau, tau, 0.5, lam3) - contract3(tau, lam_up, 0.5, lam21)
    else:  # SEC
        xi2 = xi2_wo - contract3(tau, nu, 0.5, lam21)
    xi3 = np.zeros((d, d, d))
    for r in range(d):
        for s in range(d):
            for t in range(d):
                if kind in (PivotKind.WE, PivotKind.WEC):
                    xi3[r, s, t] = lam_up[0, r] * lam_up[s, t]
                elif kind in (PivotKind.SE, PivotKind.SEC):
                    xi3[r, s, t] = lam_up[0, r] * nu[s, t]
                else:
                    xi3[r, s, t] = lam_up[0, r] * (lam_up[s, t] + 0.5 * tau[s, t])
    return ExpansionCoefficients(xi3=xi3, xi2=xi2, sigma_const=fast.sigma_const)
