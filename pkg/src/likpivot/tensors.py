"""Cumulant tensors of log-likelihood derivatives and their algebra.

Notation (index range 1..d, summation over repeated indices):

* ``lam2``  : lambda_rs   = E L_rs
* ``lam3``  : lambda_rst  = E L_rst            (fully symmetric)
* ``lam21`` : lambda_rs,t = E(l_rs l_t)        (symmetric in r, s)
* ``lam111``: lambda_r,s,t = E(l_r l_s l_t)    (fully symmetric)

where l_r = L_r, l_rs = L_rs - lambda_rs.  Derived quantities:
lam_up = (lambda_rs)^-1, eta = -1/lambda^11, tau^rs = eta lam^1r lam^1s,
nu^rs = lam^rs + tau^rs.  A superscript 1 always refers to the scalar
interest component, which sits first in the parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .models import Model, ParamPoint
from .rng import replicate_seeds

__all__ = [
    "CumulantTensors",
    "DerivedTensors",
    "IdentityReport",
    "derive",
    "estimate_tensors_mc",
    "check_bartlett_identities",
    "check_moment_identities_mc",
    "bartlett_residuals",
    "rho",
    "rho_naive",
    "random_tensors",
]

_CHUNK = 4096


def _sym3(a: np.ndarray) -> np.ndarray:
    """Average over all 6 permutations of a (d,d,d) array."""
    return (
        a
        + np.transpose(a, (0, 2, 1))
        + np.transpose(a, (1, 0, 2))
        + np.transpose(a, (1, 2, 0))
        + np.transpose(a, (2, 0, 1))
        + np.transpose(a, (2, 1, 0))
    ) / 6.0


def _sym_first2(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.transpose(a, (1, 0, 2)))


@dataclass
class CumulantTensors:
    """The lambda arrays at one (theta, n)."""

    lam2: np.ndarray
    lam3: np.ndarray
    lam21: np.ndarray
    lam111: np.ndarray
    n: int
    mc_se: Optional[dict] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.lam2.shape[0]

    @property
    def lam_cross(self) -> np.ndarray:
        """lambda_r,s = E(l_r l_s) = -lambda_rs (first Bartlett identity)."""
        return -self.lam2

    @property
    def lam2_deriv(self) -> np.ndarray:
        """lambda_rs/t = lambda_rst + lambda_rs,t."""
        return self.lam3 + self.lam21


@dataclass
class DerivedTensors:
    lam_up: np.ndarray
    eta: float
    tau: np.ndarray
    nu: np.ndarray


def derive(tensors: CumulantTensors) -> DerivedTensors:
    """Inverse-information quantities (lam^rs, eta, tau^rs, nu^rs)."""
    lam2 = tensors.lam2
    try:
        lam_up = np.linalg.inv(lam2)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"lambda_rs is singular: {exc}") from exc
    eta = -1.0 / lam_up[0, 0]
    if eta <= 0:
        raise ValueError("eta = -1/lambda^11 must be positive")
    tau = eta * np.outer(lam_up[0], lam_up[0])
    nu = lam_up + tau
    return DerivedTensors(lam_up=lam_up, eta=float(eta), tau=tau, nu=nu)


@dataclass
class IdentityReport:
    """Residuals of one batch of identity checks.

    ``residuals`` maps identity label -> max absolute residual;
    ``se_units`` maps label -> that residual in MC-standard-error units
    (None for purely algebraic checks); ``slopes`` maps label -> fitted
    log-log slope of the n-scaled residual where the identity only
    holds to an asymptotic order.  ``passed`` ANDs the per-identity
    flags.
    """

    residuals: dict
    se_units: dict
    slopes: dict
    passed: bool
    details: dict = field(default_factory=dict)


# --------------------------------------------------------------------- #
# Monte Carlo estimation
# --------------------------------------------------------------------- #


def _accumulate_moments(model: Model, theta: ParamPoint, n: int, reps: int, seed: int,
                        label: str):
    """First pass: accumulate means of G, H, T3 and raw products."""
    d = model.dim
    seeds = replicate_seeds(seed, label, reps)
    sums = {
        "G": np.zeros(d),
        "H": np.zeros((d, d)),
        "T3": np.zeros((d, d, d)),
        "HG": np.zeros((d, d, d)),
        "GGG": np.zeros((d, d, d)),
    }
    for start in range(0, reps, _CHUNK):
        idx = slice(start, min(start + _CHUNK, reps))
        ys = model.simulate_batch(theta.values, n, seeds[idx])
        _, G, H, T3 = model.derivs_batch(theta.values, ys, order=3)
        sums["G"] += G.sum(axis=0)
        sums["H"] += H.sum(axis=0)
        sums["T3"] += T3.sum(axis=0)
        sums["HG"] += np.einsum("mrs,mt->rst", H, G)
        sums["GGG"] += np.einsum("mr,ms,mt->rst", G, G, G)
    return seeds, {k: v / reps for k, v in sums.items()}


def estimate_tensors_mc(
    model: Model, theta: ParamPoint, n: int, reps: int, seed: int
) -> CumulantTensors:
    """Monte Carlo estimates of the lambda arrays with standard errors.

    l_rs is centered at the empirical mean of L_rs so the estimator
    works for families without closed-form tensors; the induced bias is
    O(1/reps), below the Monte Carlo standard error at default reps.
    The second pass re-simulates the identical replicate streams to get
    exact standard errors of the centered products.
    """
    if reps < 100:
        raise ValueError("reps must be >= 100")
    model.check_theta(theta)
    d = model.dim
    label = f"tensors-{model.name}-n{n}"
    seeds, mean1 = _accumulate_moments(model, theta, n, reps, seed, label)
    lam2 = mean1["H"]
    lam3 = _sym3(mean1["T3"])
    lam21_raw = mean1["HG"] - np.einsum("rs,t->rst", lam2, mean1["G"])
    lam21 = _sym_first2(lam21_raw)
    lam111 = _sym3(mean1["GGG"])

    # second pass: exact SEs of the centered per-replicate statistics
    sq = {
        "H": np.zeros((d, d)),
        "T3": np.zeros((d, d, d)),
        "HG": np.zeros((d, d, d)),
        "GGG": np.zeros((d, d, d)),
    }
    for start in range(0, reps, _CHUNK):
        idx = slice(start, min(start + _CHUNK, reps))
        ys = model.simulate_batch(theta.values, n, seeds[idx])
        _, G, H, T3 = model.derivs_batch(theta.values, ys, order=3)
        sq["H"] += ((H - lam2) ** 2).sum(axis=0)
        sq["T3"] += ((T3 - mean1["T3"]) ** 2).sum(axis=0)
        hg = np.einsum("mrs,mt->mrst", H - lam2, G)
        sq["HG"] += ((hg - lam21_raw) ** 2).sum(axis=0)
        ggg = np.einsum("mr,ms,mt->mrst", G, G, G)
        sq["GGG"] += ((ggg - mean1["GGG"]) ** 2).sum(axis=0)
    denom = reps * max(reps - 1, 1)
    mc_se = {
        "lam2": np.sqrt(sq["H"] / denom),
        "lam3": np.sqrt(sq["T3"] / denom),
        "lam21": np.sqrt(sq["HG"] / denom),
        "lam111": np.sqrt(sq["GGG"] / denom),
    }
    return CumulantTensors(
        lam2=lam2, lam3=lam3, lam21=lam21, lam111=lam111, n=n, mc_se=mc_se
    )


# --------------------------------------------------------------------- #
# Identity checks
# --------------------------------------------------------------------- #


def bartlett_residuals(tensors: CumulantTensors, lam_cross: Optional[np.ndarray] = None):
    """Algebraic residual arrays of the two Bartlett identities.

    ``lam_cross`` is an independent estimate of lambda_r,s; by default
    the first identity is evaluated with the tensor set's implied value
    (residual 0 by construction, useful only for degenerate inputs).
    """
    if lam_cross is None:
        lam_cross = tensors.lam_cross
    first = tensors.lam2 + lam_cross
    lam3, lam21, lam111 = tensors.lam3, tensors.lam21, tensors.lam111
    # lam_rs,t + lam_rt,s + lam_st,r: [r,s,t], [r,t,s], [s,t,r]
    second = (
        lam3
        + lam21
        + np.transpose(lam21, (0, 2, 1))
        + np.transpose(lam21, (2, 0, 1))
        + lam111
    )
    return first, second


def check_bartlett_identities(
    model: Model, theta: ParamPoint, n: int, reps: int, seed: int
) -> IdentityReport:
    """Monte Carlo check of the two Bartlett identities.

    Each identity is evaluated replicate-by-replicate (uncentered
    second-derivative products are valid because E L_t = 0), giving
    honest standard errors for the residual means.  Pass thresholds:
    4 MC standard errors, or 1e-10 absolute for analytically zero
    residuals.
    """
    if reps < 100:
        raise ValueError("reps must be >= 100")
    model.check_theta(theta)
    d = model.dim
    seeds = replicate_seeds(seed, f"bartlett-{model.name}-n{n}", reps)
    s1 = np.zeros((d, d))
    s1_sq = np.zeros((d, d))
    s2 = np.zeros((d, d, d))
    s2_sq = np.zeros((d, d, d))
    for start in range(0, reps, _CHUNK):
        idx = slice(start, min(start + _CHUNK, reps))
        ys = model.simulate_batch(theta.values, n, seeds[idx])
        _, G, H, T3 = model.derivs_batch(theta.values, ys, order=3)
        x1 = H + np.einsum("mr,ms->mrs", G, G)
        # H_rs G_t + H_rt G_s + H_st G_r, indices (m, r, s, t)
        hg = np.einsum("mrs,mt->mrst", H, G)
        x2 = (
            T3
            + hg
            + np.transpose(hg, (0, 1, 3, 2))
            + np.transpose(hg, (0, 3, 1, 2))
            + np.einsum("mr,ms,mt->mrst", G, G, G)
        )
        s1 += x1.sum(axis=0)
        s1_sq += (x1**2).sum(axis=0)
        s2 += x2.sum(axis=0)
        s2_sq += (x2**2).sum(axis=0)
    mean1, mean2 = s1 / reps, s2 / reps
    se1 = np.sqrt(np.maximum(s1_sq / reps - mean1**2, 0.0) / reps)
    se2 = np.sqrt(np.maximum(s2_sq / reps - mean2**2, 0.0) / reps)
    floor1 = 1e-10 * max(1.0, float(np.abs(mean1).max()))
    units1 = np.abs(mean1) / np.maximum(se1, 1e-300)
    units2 = np.abs(mean2) / np.maximum(se2, 1e-300)
    pass1 = bool(np.all((units1 <= 4.0) | (np.abs(mean1) <= 1e-10)))
    pass2 = bool(np.all((units2 <= 4.0) | (np.abs(mean2) <= 1e-10)))
    return IdentityReport(
        residuals={
            "bartlett1": float(np.abs(mean1).max()),
            "bartlett2": float(np.abs(mean2).max()),
        },
        se_units={
            "bartlett1": float(units1.max()),
            "bartlett2": float(units2.max()),
        },
        slopes={},
        passed=pass1 and pass2,
        details={"floor": floor1},
    )


def check_moment_identities_mc(
    model: Model,
    theta: ParamPoint,
    n: int,
    reps: int,
    seed: int,
    n_grid: Optional[list[int]] = None,
) -> IdentityReport:
    """Monte Carlo check of the three appendix moment identities.

    The third-moment identity is exact, so it must sit within 4 MC
    standard errors.  The two fourth-moment identities hold only to the
    order of the leading pairwise products; their residual (the joint
    fourth cumulant) is checked by scaling with n^-2 across an n-grid
    and fitting a log-log slope, which must be <= -0.2.
    """
    if reps < 100:
        raise ValueError("reps must be >= 100")
    model.check_theta(theta)
    if n_grid is None:
        n_grid = [n, 2 * n, 4 * n]
    d = model.dim

    res_a_units = []
    res_b_scaled = []
    res_c_scaled = []
    details = {"n_grid": list(n_grid)}
    for ni in n_grid:
        seeds = replicate_seeds(seed, f"moments-{model.name}-n{ni}", reps)
        sG = np.zeros(d)
        sH = np.zeros((d, d))
        sT3 = np.zeros((d, d, d))
        sHG = np.zeros((d, d, d))
        sGGG = np.zeros((d, d, d))
        sGGHG = np.zeros((d, d, d, d, d))
        sGGGG = np.zeros((d, d, d, d))
        sA = np.zeros((d, d, d))
        sA_sq = np.zeros((d, d, d))
        for start in range(0, reps, _CHUNK):
            idx = slice(start, min(start + _CHUNK, reps))
            ys = model.simulate_batch(theta.values, ni, seeds[idx])
            _, G, H, T3 = model.derivs_batch(theta.values, ys, order=3)
            sG += G.sum(axis=0)
            sH += H.sum(axis=0)
            sT3 += T3.sum(axis=0)
            sHG += np.einsum("mrs,mt->rst", H, G)
            sGGG += np.einsum("mr,ms,mt->rst", G, G, G)
            sGGHG += np.einsum("mr,ms,mtu,mv->rstuv", G, G, H, G)
            sGGGG += np.einsum("mr,ms,mt,mu->rstu", G, G, G, G)
            # identity A is exact: per-replicate residual stream
            hg = np.einsum("mrs,mt->mrst", H, G)
            xa = (
                np.einsum("mr,ms,mt->mrst", G, G, G)
                + T3
                + hg
                + np.transpose(hg, (0, 1, 3, 2))
                + np.transpose(hg, (0, 3, 1, 2))
            )
            sA += xa.sum(axis=0)
            sA_sq += (xa**2).sum(axis=0)
        meanA = sA / reps
        seA = np.sqrt(np.maximum(sA_sq / reps - meanA**2, 0.0) / reps)
        unitsA = np.abs(meanA) / np.maximum(seA, 1e-300)
        unitsA = np.where(np.abs(meanA) <= 1e-10, 0.0, unitsA)
        res_a_units.append(float(unitsA.max()))

        lam2 = sH / reps
        g_bar = sG / reps
        lam21_raw = sHG / reps - np.einsum("rs,t->rst", lam2, g_bar)
        # identity B: E(l_r l_s l_tu l_v) = -lam_rs lam_tu,v - lam_rv lam_tu,s
        #                                   - lam_sv lam_tu,r + O(n)
        lhsB = sGGHG / reps - np.einsum("tu,rsv->rstuv", lam2, sGGG / reps)
        rhsB = -(
            np.einsum("rs,tuv->rstuv", lam2, lam21_raw)
            + np.einsum("rv,tus->rstuv", lam2, lam21_raw)
            + np.einsum("sv,tur->rstuv", lam2, lam21_raw)
        )
        res_b_scaled.append(float(np.abs(lhsB - rhsB).max()) / ni**2)
        # identity C: E(l_r l_s l_t l_u) = lam_rs lam_tu + lam_rt lam_su
        #                                   + lam_ru lam_st + O(n)
        lhsC = sGGGG / reps
        rhsC = (
            np.einsum("rs,tu->rstu", lam2, lam2)
            + np.einsum("rt,su->rstu", lam2, lam2)
            + np.einsum("ru,st->rstu", lam2, lam2)
        )
        res_c_scaled.append(float(np.abs(lhsC - rhsC).max()) / ni**2)

    pass_a = all(u <= 4.0 for u in res_a_units)
    # families with non-random Hessian satisfy the mixed identity exactly;
    # a slope fit on float noise is meaningless there
    def slope_or_exact(vals):
        if max(vals) <= 1e-12:
            return -np.inf, True
        s = _loglog_slope(n_grid, vals)
        return s, s <= -0.2

    slope_b, pass_b = slope_or_exact(res_b_scaled)
    slope_c, pass_c = slope_or_exact(res_c_scaled)
    details["res_b_scaled"] = res_b_scaled
    details["res_c_scaled"] = res_c_scaled
    return IdentityReport(
        residuals={
            "third_moment": max(res_a_units),
            "fourth_mixed": res_b_scaled[0],
            "fourth_pure": res_c_scaled[0],
        },
        se_units={"third_moment": max(res_a_units)},
        slopes={"fourth_mixed": slope_b, "fourth_pure": slope_c},
        passed=pass_a and pass_b and pass_c,
        details=details,
    )


def _loglog_slope(ns, vals) -> float:
    ns = np.asarray(ns, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if np.any(vals <= 0):
        return -np.inf
    x = np.log(ns)
    y = np.log(vals)
    return float(np.polyfit(x, y, 1)[0])


# --------------------------------------------------------------------- #
# rho and invariance helpers
# --------------------------------------------------------------------- #


def rho(tensors: CumulantTensors, derived: DerivedTensors) -> float:
    """rho = -eta lam^1r nu^st (lam_rst / 2 + lam_rs,t)."""
    a1 = derived.lam_up[0]
    inner = 0.5 * tensors.lam3 + tensors.lam21
    return float(-derived.eta * np.einsum("r,st,rst->", a1, derived.nu, inner))


def rho_naive(tensors: CumulantTensors, derived: DerivedTensors) -> float:
    """All-indices loop twin of :func:`rho` for the dual-route check."""
    d = tensors.dim
    a1 = derived.lam_up[0]
    total = 0.0
    for r in range(d):
        for s in range(d):
            for t in range(d):
                total += (
                    a1[r]
                    * derived.nu[s, t]
                    * (0.5 * tensors.lam3[r, s, t] + tensors.lam21[r, s, t])
                )
    return float(-derived.eta * total)


def random_tensors(d: int, n: float, rng: np.random.Generator) -> CumulantTensors:
    """A well-conditioned random tensor set at nominal sample size n.

    lam2 is random negative definite; the third-order arrays are random
    with the declared symmetries, all on the O(n) scale.
    """
    a = rng.standard_normal((d, d))
    lam2 = -(a @ a.T + d * np.eye(d)) * n / d
    lam3 = _sym3(rng.standard_normal((d, d, d))) * n
    lam21 = _sym_first2(rng.standard_normal((d, d, d))) * n
    lam111 = _sym3(rng.standard_normal((d, d, d))) * n
    return CumulantTensors(lam2=lam2, lam3=lam3, lam21=lam21, lam111=lam111, n=int(n))
