"""Second-order distribution theory for the pivot catalog.

Cumulants of a pivot from its expansion coefficients, the
Cornish-Fisher one-sided p-value, the second-order stability condition
on the xi^rs1 slice, and the two-part p-value equivalence condition for
a pair of pivots.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm

from .models import DomainError
from .pivots import ExpansionCoefficients, PivotValue
from .tensors import CumulantTensors, DerivedTensors

__all__ = [
    "CumulantTriple",
    "ConditionReport",
    "cumulants",
    "cumulants_naive",
    "cf_pvalue",
    "cf_argument",
    "cf_argument_parts",
    "stability_check",
    "equivalence_check",
    "reconstruct_t1",
    "reconstruct_t2",
]

#: the Cornish-Fisher quadratic correction is frozen once |eta^1/2 T1|
#: exceeds this, keeping the adjusted argument monotone in the pivot
CF_FREEZE = 3.0

REL_TOL = 1e-8


@dataclass
class CumulantTriple:
    """First three cumulants of an asymptotically N(0,1) pivot.

    k2 is pinned at 1: the theory supplies no O(1/n) variance
    correction for the general pivot.
    """

    k1: float
    k3: float
    k2: float = 1.0


@dataclass
class ConditionReport:
    condition: str  # stability | equiv1 | equiv2
    residual: float  # scaled (relative) residual
    scale: float
    passed: bool


# --------------------------------------------------------------------- #
# Cumulants
# --------------------------------------------------------------------- #


def cumulants(
    coeffs: ExpansionCoefficients,
    tensors: CumulantTensors,
    derived: DerivedTensors,
) -> CumulantTriple:
    """kappa_1 and kappa_3 from the coefficient contractions.

    kappa_1 = eta^(1/2) (xi^rst lam_rs,t + xi^rs lam_rs) plus the
    eta^(1/2) * const shift for adjusted pivots; kappa_3 is the printed
    skewness contraction.
    """
    eta = derived.eta
    a1 = derived.lam_up[0]
    lam21, lam2, lam3 = tensors.lam21, tensors.lam2, tensors.lam3
    k1 = np.sqrt(eta) * (
        np.einsum("rst,rst->", coeffs.xi3, lam21)
        + np.einsum("rs,rs->", coeffs.xi2, lam2)
        + coeffs.sigma_const
    )
    q3 = np.einsum("r,s,t,rst->", a1, a1, a1, lam3)
    q21 = np.einsum("r,s,t,rst->", a1, a1, a1, lam21)
    slice_term = np.einsum("rs,t,rst->", coeffs.xi_rs1, a1, lam21)
    k3 = eta**1.5 * (q3 + 3.0 * q21 - 6.0 * slice_term - 6.0 * coeffs.xi2[0, 0])
    return CumulantTriple(k1=float(k1), k3=float(k3))


def cumulants_naive(
    coeffs: ExpansionCoefficients,
    tensors: CumulantTensors,
    derived: DerivedTensors,
) -> CumulantTriple:
    """All-indices-loop twin of :func:`cumulants`."""
    d = tensors.dim
    eta = derived.eta
    a1 = derived.lam_up[0]
    k1 = coeffs.sigma_const
    for r in range(d):
        for s in range(d):
            k1 += coeffs.xi2[r, s] * tensors.lam2[r, s]
            for t in range(d):
                k1 += coeffs.xi3[r, s, t] * tensors.lam21[r, s, t]
    k1 *= np.sqrt(eta)
    k3 = -6.0 * coeffs.xi2[0, 0]
    for r in range(d):
        for s in range(d):
            for t in range(d):
                k3 += a1[r] * a1[s] * a1[t] * (
                    tensors.lam3[r, s, t] + 3.0 * tensors.lam21[r, s, t]
                )
                k3 -= 6.0 * coeffs.xi3[r, s, 0] * a1[t] * tensors.lam21[r, s, t]
    k3 *= eta**1.5
    return CumulantTriple(k1=float(k1), k3=float(k3))


# --------------------------------------------------------------------- #
# Cornish-Fisher p-value
# --------------------------------------------------------------------- #


def reconstruct_t1(profile_m1: float, derived: DerivedTensors) -> float:
    """T1 = -lam^1r l_r with the score taken at the constrained MLE.

    At theta_tilde(psi0) the score is (M1, 0, ..., 0), so only the
    lam^11 component survives.
    """
    return -derived.lam_up[0, 0] * float(profile_m1)


def reconstruct_t2(
    coeffs: ExpansionCoefficients,
    l_grad: np.ndarray,
    l_hess_centered: np.ndarray,
) -> float:
    """T2 = xi^rst l_rs l_t - xi^rs l_r l_s + const."""
    return float(
        np.einsum("rst,rs,t->", coeffs.xi3, l_hess_centered, l_grad)
        - np.einsum("rs,r,s->", coeffs.xi2, l_grad, l_grad)
        + coeffs.sigma_const
    )


def cf_argument_parts(
    value: float,
    m1: float,
    coeffs: ExpansionCoefficients,
    tensors: CumulantTensors,
    derived: DerivedTensors,
    hess_tilde: Optional[np.ndarray] = None,
    use_expansion: bool = False,
) -> float:
    """Cornish-Fisher argument from the raw ingredients.

    ``value`` is the evaluated pivot and ``m1`` the profile score at
    psi0; tensors must be evaluated at theta_tilde(psi0), where the full
    score reduces to (m1, 0, ..., 0).  With ``use_expansion`` the
    leading term is rebuilt from the l-arrays instead of the observed
    value (``hess_tilde`` then required).
    """
    kap = cumulants(coeffs, tensors, derived)
    eta = derived.eta
    t1 = reconstruct_t1(m1, derived)
    if use_expansion:
        if hess_tilde is None:
            raise DomainError("use_expansion requires the hessian at theta_tilde")
        l_grad = np.zeros(tensors.dim)
        l_grad[0] = m1
        l_hess_c = hess_tilde - tensors.lam2
        lead = np.sqrt(eta) * (t1 + reconstruct_t2(coeffs, l_grad, l_hess_c))
    else:
        lead = value
    quad = min(eta * t1 * t1, CF_FREEZE**2)
    return float(lead - kap.k3 * quad / 6.0 - kap.k1 + kap.k3 / 6.0)


def cf_argument(
    pivot: PivotValue,
    coeffs: ExpansionCoefficients,
    tensors: CumulantTensors,
    derived: DerivedTensors,
    use_expansion: bool = False,
) -> float:
    """The normalized Cornish-Fisher argument for one evaluated pivot.

    The leading term is the observed pivot value (its own expansion,
    when ``use_expansion`` is set); the corrections subtract kappa_1 and
    the kappa_3 skewness adjustment built from the reconstructed T1.
    """
    return cf_argument_parts(
        pivot.value,
        float(pivot.profile.M1[0]),
        coeffs,
        tensors,
        derived,
        hess_tilde=pivot.profile.hess_tilde,
        use_expansion=use_expansion,
    )


def cf_pvalue(
    pivot: PivotValue,
    coeffs: ExpansionCoefficients,
    tensors: CumulantTensors,
    derived: DerivedTensors,
    alternative: str = "greater",
    use_expansion: bool = False,
) -> float:
    """One-sided second-order p-value via the Cornish-Fisher argument.

    ``alternative='greater'`` tests against alternatives above psi0 (the
    right tail of the pivot); ``'less'`` is one minus it.  The result is
    clamped to [0, 1].
    """
    arg = cf_argument(pivot, coeffs, tensors, derived, use_expansion=use_expansion)
    p = 1.0 - norm.cdf(arg)
    if alternative == "less":
        p = 1.0 - p
    elif alternative != "greater":
        raise DomainError("alternative must be 'greater' or 'less'")
    return float(min(max(p, 0.0), 1.0))


# --------------------------------------------------------------------- #
# Stability and equivalence conditions
# --------------------------------------------------------------------- #


def stability_check(
    coeffs: ExpansionCoefficients, derived: DerivedTensors
) -> ConditionReport:
    """Second-order stability: xi^rs1 = lam^1r lam^1s / 2.

    The residual is scaled by the larger of max|xi^rs1| and the target
    slice so that an identically zero slice still registers as a clean
    failure.
    """
    a1 = derived.lam_up[0]
    target = 0.5 * np.outer(a1, a1)
    raw = float(np.abs(coeffs.xi_rs1 - target).max())
    scale = float(max(np.abs(coeffs.xi_rs1).max(), np.abs(target).max(), 1e-300))
    residual = raw / scale
    return ConditionReport(
        condition="stability", residual=residual, scale=scale,
        passed=residual <= REL_TOL,
    )


def _sym2(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def equivalence_check(
    coeffs_a: ExpansionCoefficients,
    coeffs_b: ExpansionCoefficients,
    tensors: CumulantTensors,
    derived: DerivedTensors,
) -> tuple[ConditionReport, ConditionReport]:
    """The two p-value agreement conditions for a pivot pair.

    Condition 1 compares the xi^rst arrays; condition 2 compares
    xi^rs + xi^tu lam_tu tau^rs.  Only the symmetric part of xi^rs is
    identified by the expansion, so condition 2 works on symmetrized
    arrays.  The order-1/n constants of adjusted pivots cancel from the
    comparison and are ignored.
    """
    d1 = coeffs_a.xi3 - coeffs_b.xi3
    scale1 = float(max(np.abs(coeffs_a.xi3).max(), np.abs(coeffs_b.xi3).max(), 1e-300))
    res1 = float(np.abs(d1).max()) / scale1
    rep1 = ConditionReport(
        condition="equiv1", residual=res1, scale=scale1, passed=res1 <= REL_TOL
    )

    def combo(c: ExpansionCoefficients) -> np.ndarray:
        trace = np.einsum("tu,tu->", c.xi2, tensors.lam2)
        return _sym2(c.xi2) + trace * derived.tau

    ca, cb = combo(coeffs_a), combo(coeffs_b)
    scale2 = float(max(np.abs(ca).max(), np.abs(cb).max(), 1e-300))
    res2 = float(np.abs(ca - cb).max()) / scale2
    rep2 = ConditionReport(
        condition="equiv2", residual=res2, scale=scale2, passed=res2 <= REL_TOL
    )
    return rep1, rep2
