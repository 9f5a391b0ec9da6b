"""Parametric model families with log-likelihood derivatives to third order.

Each family knows how to simulate data, evaluate the log-likelihood and
its first three derivative arrays (vectorized over batches of datasets,
and over batches of parameter points where the hot loops need it), and,
for families where they exist in closed form, the expected-value tensors
of those derivatives.

Built-in registry:

========================  ===  ==================  ================
family                      d  interest               exact tensors
========================  ===  ==================  ================
``exponential``             1  rate                 yes
``normal-mv``               2  mean (var nuisance)  yes
``gamma``                   2  shape (rate nuis.)   yes (polygamma)
``ls-normal``               2  location             no (MC fallback)
``ls-logistic``             2  location             no (MC fallback)
``ls-t``                    2  location             no (MC fallback)
``mvn-mean``                q  full mean vector     yes
========================  ===  ==================  ================

Location-scale families do expose their expected information matrix
(it reduces to a base-density constant by the scale identity, computed
once by numerical quadrature); the full third-order tensor set for
them is left to Monte Carlo estimation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

__all__ = [
    "DomainError",
    "ParamPoint",
    "Dataset",
    "LogLikDerivs",
    "Model",
    "make_model",
    "available_families",
    "read_csv_dataset",
    "finite_difference_derivs",
]

_EPS = np.finfo(float).eps


class DomainError(ValueError):
    """Parameter or data outside the model's declared open domain."""


@dataclass(frozen=True)
class ParamPoint:
    """Parameter vector with its interest/nuisance partition.

    The first ``interest_dim`` components are the interest parameter,
    the rest the nuisance parameter.
    """

    values: np.ndarray
    interest_dim: int = 1

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", v)
        if not (1 <= self.interest_dim <= v.size):
            raise DomainError(
                f"interest_dim {self.interest_dim} invalid for dimension {v.size}"
            )
        if not np.all(np.isfinite(v)):
            raise DomainError("non-finite parameter value")

    @property
    def dim(self) -> int:
        return self.values.size

    @property
    def psi(self) -> np.ndarray:
        return self.values[: self.interest_dim]

    @property
    def phi(self) -> np.ndarray:
        return self.values[self.interest_dim:]


@dataclass(frozen=True)
class Dataset:
    """n observations, each a p-vector (p=1 for the scalar families)."""

    observations: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        object.__setattr__(self, "observations", obs)
        if not np.all(np.isfinite(obs)):
            raise DomainError("non-finite observation")

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def p(self) -> int:
        return self.observations.shape[1]


@dataclass
class LogLikDerivs:
    """Log-likelihood value and derivative arrays at one parameter point.

    ``grad`` is L_r, ``hess`` L_rs, ``third`` the fully symmetric L_rst;
    entries beyond the requested order are None.
    """

    value: float
    grad: Optional[np.ndarray] = None
    hess: Optional[np.ndarray] = None
    third: Optional[np.ndarray] = None


def read_csv_dataset(path) -> Dataset:
    """Load a dataset from CSV with a single header line."""
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Dataset(arr)


def _per_replicate_psi(psi, m: int) -> np.ndarray:
    """Broadcast a scalar interest value (or per-replicate vector) to (m,)."""
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    if psi.size == 1:
        return np.full(m, psi[0])
    if psi.size != m:
        raise DomainError(f"psi batch of size {psi.size} does not match {m} replicates")
    return psi.astype(float)


# --------------------------------------------------------------------- #
# Base class
# --------------------------------------------------------------------- #


class Model:
    """A parametric family.

    Subclasses implement ``_derivs_batch`` (vectorized over a leading
    replicate axis in both ``theta`` and the data) plus simulation and,
    where available, closed-form fits and exact tensors.  All methods
    are pure; RNG state enters only through integer seeds.
    """

    name: str = ""
    dim: int = 0
    obs_dim: int = 1
    interest_dim: int = 1
    analytic_tensors: bool = False

    @property
    def min_n(self) -> int:
        return self.dim + 1

    # -- domain ------------------------------------------------------- #

    def in_domain(self, values: np.ndarray) -> bool:
        raise NotImplementedError

    def check_theta(self, theta: ParamPoint) -> None:
        if theta.dim != self.dim:
            raise DomainError(
                f"{self.name}: expected {self.dim} parameters, got {theta.dim}"
            )
        if theta.interest_dim != self.interest_dim:
            raise DomainError(
                f"{self.name}: interest_dim must be {self.interest_dim}"
            )
        if not self.in_domain(theta.values):
            raise DomainError(f"{self.name}: parameter {theta.values} out of domain")

    def param_point(self, values) -> ParamPoint:
        return ParamPoint(np.asarray(values, dtype=float), self.interest_dim)

    def check_data(self, data: Dataset) -> None:
        if data.p != self.obs_dim:
            raise DomainError(
                f"{self.name}: expected {self.obs_dim}-variate observations"
            )
        if data.n < self.min_n:
            raise DomainError(
                f"{self.name}: need at least n={self.min_n} observations"
            )
        bad = self._invalid_rows(data.observations)
        if bad is not None:
            raise DomainError(
                f"{self.name}: observation outside support at row {bad}"
            )

    def _invalid_rows(self, obs: np.ndarray) -> Optional[int]:
        """Index of the first unsupported observation row, or None."""
        return None

    # -- simulation ---------------------------------------------------- #

    def simulate(self, theta: ParamPoint, n: int, seed: int) -> Dataset:
        """n i.i.d. draws; bit-identical for identical (theta, n, seed)."""
        self.check_theta(theta)
        if n < self.min_n:
            raise DomainError(f"{self.name}: n={n} below minimum {self.min_n}")
        rng = np.random.default_rng(int(seed))
        return Dataset(self._draw(theta.values, n, rng))

    def simulate_batch(self, theta_values: np.ndarray, n: int, seeds) -> np.ndarray:
        """(m, n, p) array of datasets, one independent stream per seed."""
        seeds = np.asarray(seeds)
        m = seeds.size
        out = np.empty((m, n, self.obs_dim))
        for i in range(m):
            rng = np.random.default_rng(int(seeds[i]))
            out[i] = self._draw(theta_values, n, rng)
        return out

    def _draw(self, values: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    # -- derivatives ---------------------------------------------------- #

    def loglik_derivs(self, theta: ParamPoint, data: Dataset, order: int = 2) -> LogLikDerivs:
        """Analytic derivatives up to ``order`` (0..3)."""
        self.check_theta(theta)
        self.check_data(data)
        if not 0 <= order <= 3:
            raise DomainError(f"order must be 0..3, got {order}")
        v, g, h, t = self._derivs_batch(
            theta.values[None, :], data.observations[None, :, :], order
        )
        return LogLikDerivs(
            value=float(v[0]),
            grad=None if g is None else g[0],
            hess=None if h is None else h[0],
            third=None if t is None else t[0],
        )

    def derivs_batch(self, theta_values: np.ndarray, ys: np.ndarray, order: int = 2):
        """Vectorized derivatives.

        ``theta_values``: (d,) shared across replicates or (m, d);
        ``ys``: (m, n, p).  Returns (value (m,), grad (m,d), hess
        (m,d,d), third (m,d,d,d)) with Nones beyond ``order``.
        """
        theta_values = np.asarray(theta_values, dtype=float)
        if theta_values.ndim == 1:
            theta_values = np.broadcast_to(
                theta_values, (ys.shape[0], theta_values.size)
            )
        return self._derivs_batch(theta_values, ys, order)

    def _derivs_batch(self, thetas: np.ndarray, ys: np.ndarray, order: int):
        raise NotImplementedError

    # -- tensors and fits ------------------------------------------------ #

    def exact_tensors(self, theta: ParamPoint, n: int):
        """Closed-form CumulantTensors, or None when unavailable."""
        return None

    def expected_info(self, theta_values: np.ndarray, n: int) -> np.ndarray:
        """lambda_rs = E L_rs at theta; supports (d,) or (m, d) input.

        Available for every built-in family (for the location-scale
        families via the base-density quadrature constant), unlike the
        full third-order tensor set.
        """
        raise NotImplementedError

    def moment_init(self, ys: np.ndarray) -> np.ndarray:
        """Method-of-moments starting values; ys is (n, p) or (m, n, p)."""
        raise NotImplementedError

    # Closed-form fits: return None when the family has no closed form.
    def mle_batch(self, ys: np.ndarray) -> Optional[np.ndarray]:
        return None

    def constrained_mle_batch(self, psi, ys: np.ndarray) -> Optional[np.ndarray]:
        return None


# --------------------------------------------------------------------- #
# Exponential, rate parameterization
# --------------------------------------------------------------------- #


class ExponentialRate(Model):
    """y ~ Exp(rate theta); L = n log(theta) - theta * sum(y)."""

    name = "exponential"
    dim = 1
    interest_dim = 1
    analytic_tensors = True

    @property
    def min_n(self) -> int:
        return 2

    def in_domain(self, values):
        return values[0] > 0

    def _invalid_rows(self, obs):
        bad = np.nonzero(obs[:, 0] <= 0)[0]
        return int(bad[0]) if bad.size else None

    def _draw(self, values, n, rng):
        return rng.exponential(scale=1.0 / values[0], size=(n, 1))

    def _derivs_batch(self, thetas, ys, order):
        th = thetas[:, 0]
        n = ys.shape[1]
        s = ys[:, :, 0].sum(axis=1)
        value = n * np.log(th) - th * s
        grad = hess = third = None
        if order >= 1:
            grad = (n / th - s)[:, None]
        if order >= 2:
            hess = (-n / th**2)[:, None, None]
        if order >= 3:
            third = (2.0 * n / th**3)[:, None, None, None]
        return value, grad, hess, third

    def exact_tensors(self, theta, n):
        from .tensors import CumulantTensors

        th = theta.values[0]
        lam2 = np.array([[-n / th**2]])
        lam3 = np.array([[[2.0 * n / th**3]]])
        lam21 = np.zeros((1, 1, 1))  # L_11 is non-random here
        lam111 = np.array([[[-2.0 * n / th**3]]])
        return CumulantTensors(lam2=lam2, lam3=lam3, lam21=lam21, lam111=lam111, n=n)

    def expected_info(self, theta_values, n):
        theta_values = np.asarray(theta_values, dtype=float)
        th = theta_values[..., 0]
        out = -n / th**2
        return out[..., None, None]

    def moment_init(self, ys):
        mean = np.asarray(ys)[..., 0].mean(axis=-1)
        if np.ndim(mean) == 0:
            return np.array([1.0 / mean])
        return (1.0 / mean)[:, None]

    def mle_batch(self, ys):
        return 1.0 / ys[:, :, 0].mean(axis=1)[:, None]

    def constrained_mle_batch(self, psi, ys):
        # No nuisance parameter: the constrained fit is psi itself.
        return _per_replicate_psi(psi, ys.shape[0])[:, None]


# --------------------------------------------------------------------- #
# Normal, (mean, variance)
# --------------------------------------------------------------------- #


class NormalMeanVariance(Model):
    """y ~ N(psi, phi) with variance phi as the nuisance parameter."""

    name = "normal-mv"
    dim = 2
    interest_dim = 1
    analytic_tensors = True

    def in_domain(self, values):
        return values[1] > 0

    def _draw(self, values, n, rng):
        return rng.normal(values[0], np.sqrt(values[1]), size=(n, 1))

    def _derivs_batch(self, thetas, ys, order):
        psi = thetas[:, 0]
        phi = thetas[:, 1]
        n = ys.shape[1]
        dev = ys[:, :, 0] - psi[:, None]
        s1 = dev.sum(axis=1)
        s2 = (dev**2).sum(axis=1)
        value = -0.5 * n * np.log(2.0 * np.pi * phi) - s2 / (2.0 * phi)
        grad = hess = third = None
        if order >= 1:
            grad = np.stack(
                [s1 / phi, -0.5 * n / phi + s2 / (2.0 * phi**2)], axis=1
            )
        if order >= 2:
            m = thetas.shape[0]
            hess = np.empty((m, 2, 2))
            hess[:, 0, 0] = -n / phi
            hess[:, 0, 1] = hess[:, 1, 0] = -s1 / phi**2
            hess[:, 1, 1] = 0.5 * n / phi**2 - s2 / phi**3
        if order >= 3:
            m = thetas.shape[0]
            third = np.empty((m, 2, 2, 2))
            l_ppw = n / phi**2                       # psi psi phi
            l_pww = 2.0 * s1 / phi**3                # psi phi phi
            l_www = -n / phi**3 + 3.0 * s2 / phi**4  # phi phi phi
            third[:, 0, 0, 0] = 0.0
            third[:, 0, 0, 1] = third[:, 0, 1, 0] = third[:, 1, 0, 0] = l_ppw
            third[:, 0, 1, 1] = third[:, 1, 0, 1] = third[:, 1, 1, 0] = l_pww
            third[:, 1, 1, 1] = l_www
        return value, grad, hess, third

    def exact_tensors(self, theta, n):
        from .tensors import CumulantTensors

        phi = theta.values[1]
        lam2 = np.diag([-n / phi, -0.5 * n / phi**2])
        lam3 = np.zeros((2, 2, 2))
        lam3[0, 0, 1] = lam3[0, 1, 0] = lam3[1, 0, 0] = n / phi**2
        lam3[1, 1, 1] = 2.0 * n / phi**3
        lam21 = np.zeros((2, 2, 2))
        lam21[0, 1, 0] = lam21[1, 0, 0] = -n / phi**2   # (psi phi, psi)
        lam21[1, 1, 1] = -n / phi**3                    # (phi phi, phi)
        lam111 = np.zeros((2, 2, 2))
        lam111[0, 0, 1] = lam111[0, 1, 0] = lam111[1, 0, 0] = n / phi**2
        lam111[1, 1, 1] = n / phi**3
        return CumulantTensors(lam2=lam2, lam3=lam3, lam21=lam21, lam111=lam111, n=n)

    def expected_info(self, theta_values, n):
        theta_values = np.asarray(theta_values, dtype=float)
        phi = theta_values[..., 1]
        out = np.zeros(theta_values.shape[:-1] + (2, 2))
        out[..., 0, 0] = -n / phi
        out[..., 1, 1] = -0.5 * n / phi**2
        return out

    def moment_init(self, ys):
        y = np.asarray(ys)[..., 0]
        return np.stack([y.mean(axis=-1), y.var(axis=-1)], axis=-1)

    def mle_batch(self, ys):
        y = ys[:, :, 0]
        mean = y.mean(axis=1)
        var = ((y - mean[:, None]) ** 2).mean(axis=1)
        return np.stack([mean, var], axis=1)

    def constrained_mle_batch(self, psi, ys):
        psi0 = _per_replicate_psi(psi, ys.shape[0])
        y = ys[:, :, 0]
        var = ((y - psi0[:, None]) ** 2).mean(axis=1)
        return np.stack([psi0, var], axis=1)


# --------------------------------------------------------------------- #
# Gamma, (shape, rate)
# --------------------------------------------------------------------- #


class GammaShapeRate(Model):
    """y ~ Gamma(shape psi, rate phi); shape is the interest parameter."""

    name = "gamma"
    dim = 2
    interest_dim = 1
    analytic_tensors = True

    def in_domain(self, values):
        return values[0] > 0 and values[1] > 0

    def _invalid_rows(self, obs):
        bad = np.nonzero(obs[:, 0] <= 0)[0]
        return int(bad[0]) if bad.size else None

    def _draw(self, values, n, rng):
        return rng.gamma(shape=values[0], scale=1.0 / values[1], size=(n, 1))

    def _derivs_batch(self, thetas, ys, order):
        a = thetas[:, 0]
        b = thetas[:, 1]
        n = ys.shape[1]
        y = ys[:, :, 0]
        s = y.sum(axis=1)
        slog = np.log(y).sum(axis=1)
        value = n * (a * np.log(b) - special.gammaln(a)) + (a - 1.0) * slog - b * s
        grad = hess = third = None
        if order >= 1:
            grad = np.stack(
                [n * (np.log(b) - special.digamma(a)) + slog, n * a / b - s], axis=1
            )
        if order >= 2:
            m = thetas.shape[0]
            hess = np.empty((m, 2, 2))
            hess[:, 0, 0] = -n * special.polygamma(1, a)
            hess[:, 0, 1] = hess[:, 1, 0] = n / b
            hess[:, 1, 1] = -n * a / b**2
        if order >= 3:
            m = thetas.shape[0]
            third = np.zeros((m, 2, 2, 2))
            third[:, 0, 0, 0] = -n * special.polygamma(2, a)
            l_abb = -n / b**2
            third[:, 0, 1, 1] = third[:, 1, 0, 1] = third[:, 1, 1, 0] = l_abb
            third[:, 1, 1, 1] = 2.0 * n * a / b**3
        return value, grad, hess, third

    def exact_tensors(self, theta, n):
        from .tensors import CumulantTensors

        a, b = theta.values
        lam2 = np.array([[-n * special.polygamma(1, a), n / b], [n / b, -n * a / b**2]])
        lam3 = np.zeros((2, 2, 2))
        lam3[0, 0, 0] = -n * special.polygamma(2, a)
        lam3[0, 1, 1] = lam3[1, 0, 1] = lam3[1, 1, 0] = -n / b**2
        lam3[1, 1, 1] = 2.0 * n * a / b**3
        # All second derivatives are non-random, so lambda_{rs,t} = 0 and
        # the second Bartlett identity forces lambda_{r,s,t} = -lambda_{rst}.
        lam21 = np.zeros((2, 2, 2))
        lam111 = -lam3
        return CumulantTensors(lam2=lam2, lam3=lam3, lam21=lam21, lam111=lam111, n=n)

    def expected_info(self, theta_values, n):
        theta_values = np.asarray(theta_values, dtype=float)
        a = theta_values[..., 0]
        b = theta_values[..., 1]
        out = np.empty(theta_values.shape[:-1] + (2, 2))
        out[..., 0, 0] = -n * special.polygamma(1, a)
        out[..., 0, 1] = out[..., 1, 0] = n / b
        out[..., 1, 1] = -n * a / b**2
        return out

    def moment_init(self, ys):
        y = np.asarray(ys)[..., 0]
        mean = y.mean(axis=-1)
        var = y.var(axis=-1)
        var = np.maximum(var, 1e-12)
        return np.stack([mean**2 / var, mean / var], axis=-1)

    def mle_batch(self, ys):
        # Profile out the rate: alpha solves log(a) - digamma(a) = s.
        y = ys[:, :, 0]
        mean = y.mean(axis=1)
        s = np.log(mean) - np.log(y).mean(axis=1)
        a = (3.0 - s + np.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
        for _ in range(40):
            f = np.log(a) - special.digamma(a) - s
            fp = 1.0 / a - special.polygamma(1, a)
            step = f / fp
            a_new = a - step
            a = np.where(a_new > 0, a_new, a / 2.0)
            if np.max(np.abs(step)) < 1e-12 * np.max(a):
                break
        return np.stack([a, a / mean], axis=1)

    def constrained_mle_batch(self, psi, ys):
        a0 = _per_replicate_psi(psi, ys.shape[0])
        y = ys[:, :, 0]
        b = a0 / y.mean(axis=1)
        return np.stack([a0, b], axis=1)


# --------------------------------------------------------------------- #
# Location-scale with pluggable base density
# --------------------------------------------------------------------- #


@dataclass(frozen=True)
class BaseDensity:
    """Standardized base density f for the location-scale family.

    ``g*`` are log-density derivatives: g(z) = log f(z).
    """

    label: str
    g: Callable[[np.ndarray], np.ndarray]
    g1: Callable[[np.ndarray], np.ndarray]
    g2: Callable[[np.ndarray], np.ndarray]
    g3: Callable[[np.ndarray], np.ndarray]
    draw: Callable[[np.random.Generator, tuple], np.ndarray]
    init_scale_factor: float = 1.0


def _normal_base() -> BaseDensity:
    c = -0.5 * np.log(2.0 * np.pi)
    return BaseDensity(
        label="normal",
        g=lambda z: c - 0.5 * z**2,
        g1=lambda z: -z,
        g2=lambda z: -np.ones_like(z),
        g3=lambda z: np.zeros_like(z),
        draw=lambda rng, size: rng.standard_normal(size),
        init_scale_factor=1.0,
    )


def _logistic_base() -> BaseDensity:
    def g(z):
        return -z - 2.0 * np.logaddexp(0.0, -z)

    def sig(z):
        return special.expit(z)

    return BaseDensity(
        label="logistic",
        g=g,
        g1=lambda z: 1.0 - 2.0 * sig(z),
        g2=lambda z: -2.0 * sig(z) * (1.0 - sig(z)),
        g3=lambda z: -2.0 * sig(z) * (1.0 - sig(z)) * (1.0 - 2.0 * sig(z)),
        draw=lambda rng, size: rng.logistic(size=size),
        init_scale_factor=np.sqrt(3.0) / np.pi,
    )


def _student_t_base(df: float) -> BaseDensity:
    if df <= 2:
        raise DomainError("Student-t base needs df > 2 for finite variance")
    c = special.gammaln((df + 1.0) / 2.0) - special.gammaln(df / 2.0) - 0.5 * np.log(
        df * np.pi
    )

    def g(z):
        return c - 0.5 * (df + 1.0) * np.log1p(z**2 / df)

    return BaseDensity(
        label=f"t{df:g}",
        g=g,
        g1=lambda z: -(df + 1.0) * z / (df + z**2),
        g2=lambda z: -(df + 1.0) * (df - z**2) / (df + z**2) ** 2,
        g3=lambda z: 2.0 * z * (df + 1.0) * (3.0 * df - z**2) / (df + z**2) ** 3,
        draw=lambda rng, size: rng.standard_t(df, size=size),
        init_scale_factor=np.sqrt((df - 2.0) / df),
    )


class LocationScale(Model):
    """y = mu + sigma * eps with eps from a fixed base density.

    Interest parameter is the location mu; scale sigma is the nuisance.
    Full cumulant tensors are not provided in closed form (callers fall
    back to Monte Carlo estimation); the expected information is exposed
    through the scale identity lambda_rs(mu, sigma) = (n / sigma^2) C0
    with C0 computed once per base density by quadrature.
    """

    dim = 2
    interest_dim = 1
    analytic_tensors = False

    def __init__(self, base: BaseDensity):
        self.base = base
        self.name = f"ls-{base.label}"
        self._info_constant: Optional[np.ndarray] = None

    def in_domain(self, values):
        return values[1] > 0

    def _draw(self, values, n, rng):
        eps = self.base.draw(rng, (n, 1))
        return values[0] + values[1] * eps

    def _derivs_batch(self, thetas, ys, order):
        mu = thetas[:, 0][:, None]
        sig = thetas[:, 1][:, None]
        n = ys.shape[1]
        z = (ys[:, :, 0] - mu) / sig
        b = self.base
        g1 = b.g1(z)
        sig1 = sig[:, 0]
        value = -n * np.log(sig1) + b.g(z).sum(axis=1)
        grad = hess = third = None
        if order >= 1:
            zg1 = (z * g1).sum(axis=1)
            grad = np.stack(
                [-g1.sum(axis=1) / sig1, (-n - zg1) / sig1], axis=1
            )
        if order >= 2:
            g2 = b.g2(z)
            m = thetas.shape[0]
            hess = np.empty((m, 2, 2))
            s2 = sig1**2
            hess[:, 0, 0] = g2.sum(axis=1) / s2
            hess[:, 0, 1] = hess[:, 1, 0] = (g1 + z * g2).sum(axis=1) / s2
            hess[:, 1, 1] = (n + (2.0 * z * g1 + z**2 * g2).sum(axis=1)) / s2
        if order >= 3:
            g2 = b.g2(z)
            g3 = b.g3(z)
            m = thetas.shape[0]
            third = np.empty((m, 2, 2, 2))
            s3 = sig1**3
            l_mmm = -g3.sum(axis=1) / s3
            l_mms = -(2.0 * g2 + z * g3).sum(axis=1) / s3
            l_mss = -(2.0 * g1 + 4.0 * z * g2 + z**2 * g3).sum(axis=1) / s3
            l_sss = (-2.0 * n - (6.0 * z * g1 + 6.0 * z**2 * g2 + z**3 * g3).sum(axis=1)) / s3
            third[:, 0, 0, 0] = l_mmm
            third[:, 0, 0, 1] = third[:, 0, 1, 0] = third[:, 1, 0, 0] = l_mms
            third[:, 0, 1, 1] = third[:, 1, 0, 1] = third[:, 1, 1, 0] = l_mss
            third[:, 1, 1, 1] = l_sss
        return value, grad, hess, third

    def info_constant(self) -> np.ndarray:
        """Per-observation expected information at (mu, sigma) = (0, 1)."""
        if self._info_constant is None:
            b = self.base

            def expect(h):
                val, _ = integrate.quad(
                    lambda z: h(np.array([z]))[0] * np.exp(b.g(np.array([z]))[0]),
                    -np.inf,
                    np.inf,
                    limit=200,
                )
                return val

            c_mm = expect(b.g2)
            c_ms = expect(lambda z: b.g1(z) + z * b.g2(z))
            c_ss = 1.0 + expect(lambda z: 2.0 * z * b.g1(z) + z**2 * b.g2(z))
            self._info_constant = np.array([[c_mm, c_ms], [c_ms, c_ss]])
        return self._info_constant

    def expected_info(self, theta_values, n):
        theta_values = np.asarray(theta_values, dtype=float)
        sig = theta_values[..., 1]
        c0 = self.info_constant()
        return (n / sig**2)[..., None, None] * c0

    def moment_init(self, ys):
        y = np.asarray(ys)[..., 0]
        loc = np.median(y, axis=-1)
        scale = y.std(axis=-1) * self.base.init_scale_factor
        scale = np.maximum(scale, 1e-8)
        return np.stack([loc, scale], axis=-1)

    def mle_batch(self, ys):
        if self.base.label == "normal":
            y = ys[:, :, 0]
            mean = y.mean(axis=1)
            sd = np.sqrt(((y - mean[:, None]) ** 2).mean(axis=1))
            return np.stack([mean, sd], axis=1)
        return self._newton_mle(ys)

    def constrained_mle_batch(self, psi, ys):
        mu0 = _per_replicate_psi(psi, ys.shape[0])
        if self.base.label == "normal":
            y = ys[:, :, 0]
            sd = np.sqrt(((y - mu0[:, None]) ** 2).mean(axis=1))
            return np.stack([mu0, sd], axis=1)
        return self._newton_scale(mu0, ys)

    # Newton in (mu, log sigma); the log chart keeps sigma positive and
    # the Hessian well conditioned at heavy-tailed draws.
    def _newton_mle(self, ys: np.ndarray, max_iter: int = 60) -> np.ndarray:
        theta = self.moment_init(ys)
        m = ys.shape[0]
        for _ in range(max_iter):
            _, grad, hess, _ = self._derivs_batch(theta, ys, 2)
            sig = theta[:, 1]
            # chain rule to (mu, log sigma)
            g = np.stack([grad[:, 0], grad[:, 1] * sig], axis=1)
            h = np.empty((m, 2, 2))
            h[:, 0, 0] = hess[:, 0, 0]
            h[:, 0, 1] = h[:, 1, 0] = hess[:, 0, 1] * sig
            h[:, 1, 1] = hess[:, 1, 1] * sig**2 + grad[:, 1] * sig
            # damp non-concave replicates toward gradient ascent
            tr = -(h[:, 0, 0] + h[:, 1, 1])
            lam = np.maximum(1e-3, tr * 1e-10)
            h[:, 0, 0] -= lam
            h[:, 1, 1] -= lam
            try:
                step = np.linalg.solve(h, g[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = g / np.abs(h[:, [0, 1], [0, 1]]).sum(axis=1)[:, None]
            step = -step
            norm = np.abs(step).max(axis=1)
            step *= np.minimum(1.0, 1.0 / np.maximum(norm, 1e-300))[:, None]
            theta = np.stack(
                [theta[:, 0] + step[:, 0], theta[:, 1] * np.exp(step[:, 1])], axis=1
            )
            if np.max(np.abs(g)) < 1e-10 * max(1.0, float(ys.shape[1])):
                break
        return theta

    def _newton_scale(self, mu0, ys: np.ndarray, max_iter: int = 60) -> np.ndarray:
        m = ys.shape[0]
        mu0 = _per_replicate_psi(mu0, m)
        ini = self.moment_init(ys)
        sig = np.sqrt(ini[:, 1] ** 2 + (ini[:, 0] - mu0) ** 2)
        theta = np.stack([mu0, sig], axis=1)
        for _ in range(max_iter):
            _, grad, hess, _ = self._derivs_batch(theta, ys, 2)
            sig = theta[:, 1]
            g = grad[:, 1] * sig
            h = hess[:, 1, 1] * sig**2 + grad[:, 1] * sig
            h = np.where(h < 0, h, -np.abs(h) - 1e-3)
            step = np.clip(-g / h, -1.0, 1.0)
            theta = np.stack([theta[:, 0], sig * np.exp(step)], axis=1)
            if np.max(np.abs(g)) < 1e-10 * max(1.0, float(ys.shape[1])):
                break
        return theta


# --------------------------------------------------------------------- #
# q-variate normal mean with known covariance
# --------------------------------------------------------------------- #


class MvnMeanKnownCov(Model):
    """y ~ N_q(theta, Sigma0) with Sigma0 known; the whole mean is interest."""

    name = "mvn-mean"
    analytic_tensors = True

    def __init__(self, q: int = 3, cov: Optional[np.ndarray] = None):
        if q < 1:
            raise DomainError("q must be >= 1")
        self.dim = q
        self.obs_dim = q
        self.interest_dim = q
        if cov is None:
            cov = np.eye(q)
        cov = np.asarray(cov, dtype=float)
        if cov.shape != (q, q) or not np.allclose(cov, cov.T):
            raise DomainError("cov must be a symmetric q x q matrix")
        self.cov = cov
        self._prec = np.linalg.inv(cov)
        self._chol = np.linalg.cholesky(cov)
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0:
            raise DomainError("cov must be positive definite")
        self._logdet = logdet

    def in_domain(self, values):
        return values.size == self.dim

    def _draw(self, values, n, rng):
        z = rng.standard_normal((n, self.dim))
        return values + z @ self._chol.T

    def _derivs_batch(self, thetas, ys, order):
        n = ys.shape[1]
        q = self.dim
        dev = ys - thetas[:, None, :]
        quad = np.einsum("mni,ij,mnj->m", dev, self._prec, dev)
        value = -0.5 * n * (q * np.log(2.0 * np.pi) + self._logdet) - 0.5 * quad
        grad = hess = third = None
        if order >= 1:
            grad = np.einsum("ij,mj->mi", self._prec, dev.sum(axis=1))
        if order >= 2:
            hess = np.broadcast_to(
                -n * self._prec, (thetas.shape[0], q, q)
            ).copy()
        if order >= 3:
            third = np.zeros((thetas.shape[0], q, q, q))
        return value, grad, hess, third

    def exact_tensors(self, theta, n):
        from .tensors import CumulantTensors

        q = self.dim
        return CumulantTensors(
            lam2=-n * self._prec,
            lam3=np.zeros((q, q, q)),
            lam21=np.zeros((q, q, q)),
            lam111=np.zeros((q, q, q)),
            n=n,
        )

    def expected_info(self, theta_values, n):
        theta_values = np.asarray(theta_values, dtype=float)
        base = -n * self._prec
        if theta_values.ndim == 1:
            return base
        return np.broadcast_to(base, theta_values.shape[:-1] + base.shape).copy()

    def moment_init(self, ys):
        return np.asarray(ys).mean(axis=-2)

    def mle_batch(self, ys):
        return ys.mean(axis=1)

    def constrained_mle_batch(self, psi, ys):
        psi = np.asarray(psi, dtype=float)
        return np.broadcast_to(psi, (ys.shape[0], self.dim)).copy()


# --------------------------------------------------------------------- #
# Registry
# --------------------------------------------------------------------- #

_FAMILIES = {
    "exponential": lambda **kw: ExponentialRate(),
    "normal-mv": lambda **kw: NormalMeanVariance(),
    "gamma": lambda **kw: GammaShapeRate(),
    "ls-normal": lambda **kw: LocationScale(_normal_base()),
    "ls-logistic": lambda **kw: LocationScale(_logistic_base()),
    "ls-t": lambda df=5.0, **kw: LocationScale(_student_t_base(float(df))),
    "mvn-mean": lambda q=3, cov=None, **kw: MvnMeanKnownCov(int(q), cov),
}


def available_families() -> list[str]:
    return sorted(_FAMILIES)


def make_model(family: str, **hyper) -> Model:
    """Instantiate a built-in family by name."""
    key = family.lower()
    if key == "ls-t5":  # convenience alias
        key, hyper = "ls-t", {**hyper, "df": 5.0}
    if key not in _FAMILIES:
        raise DomainError(
            f"unknown family '{family}'; available: {', '.join(available_families())}"
        )
    return _FAMILIES[key](**hyper)


# --------------------------------------------------------------------- #
# Finite-difference oracle
# --------------------------------------------------------------------- #


def finite_difference_derivs(
    model: Model, theta: ParamPoint, data: Dataset, order: int = 2
) -> LogLikDerivs:
    """Central finite differences of the log-likelihood value.

    Step sizes follow the usual truncation/round-off balance:
    eps^(1/3)-scaled for first and second order, eps^(1/5)-scaled for
    third order.
    """
    x0 = theta.values.copy()
    d = x0.size

    def val(x):
        return model.loglik_derivs(model.param_point(x), data, order=0).value

    h2 = _EPS ** (1.0 / 3.0) * np.maximum(1.0, np.abs(x0))
    grad = np.zeros(d)
    hess = np.zeros((d, d))
    for r in range(d):
        e = np.zeros(d)
        e[r] = h2[r]
        fp, fm = val(x0 + e), val(x0 - e)
        grad[r] = (fp - fm) / (2.0 * h2[r])
        hess[r, r] = (fp - 2.0 * val(x0) + fm) / h2[r] ** 2
    for r in range(d):
        for s in range(r + 1, d):
            er = np.zeros(d)
            es = np.zeros(d)
            er[r] = h2[r]
            es[s] = h2[s]
            cross = (
                val(x0 + er + es) - val(x0 + er - es) - val(x0 - er + es) + val(x0 - er - es)
            ) / (4.0 * h2[r] * h2[s])
            hess[r, s] = hess[s, r] = cross
    third = None
    if order >= 3:
        h3 = _EPS ** (1.0 / 5.0) * np.maximum(1.0, np.abs(x0))

        def hess_at(x):
            return model.loglik_derivs(model.param_point(x), data, order=2).hess

        third = np.zeros((d, d, d))
        for t in range(d):
            e = np.zeros(d)
            e[t] = h3[t]
            third[:, :, t] = (hess_at(x0 + e) - hess_at(x0 - e)) / (2.0 * h3[t])
        third = (
            third
            + np.transpose(third, (0, 2, 1))
            + np.transpose(third, (1, 0, 2))
            + np.transpose(third, (1, 2, 0))
            + np.transpose(third, (2, 0, 1))
            + np.transpose(third, (2, 1, 0))
        ) / 6.0
    return LogLikDerivs(value=val(x0), grad=grad, hess=hess, third=third)
