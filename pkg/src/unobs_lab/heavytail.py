"""Weibull-gamma hierarchy and its exponential-constraint reductions.

Integrating a Weibull outcome (rate scale phi = lam*exp(mu), shape rho) over
an exponential frailty with rate delta gives the Weibull-exponential family

    f(y) = phi * rho * y^(rho-1) * delta / (delta + phi*y^rho)^2
    F(y) = 1 - delta / (delta + phi*y^rho)
    E(Y^k) = (k/rho) * (delta/phi)^(k/rho) * Gamma(1 - k/rho) * Gamma(k/rho)

The k-th moment integral is finite iff k < rho; the moment formula itself is
additionally undefined when k/rho is a positive integer (Gamma pole). At
rho = 1 (exponential-exponential) no moment is finite: a Cauchy-type family.
MomentResult keeps the two facts separate instead of collapsing them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln, gammasgn, ndtr

from unobs_lab.model_core import DomainError
from unobs_lab.rng import substream

__all__ = [
    "WeibullGammaSpec",
    "WeibullExpSpec",
    "MomentResult",
    "QuadratureError",
    "wg_sample",
    "wg_moment_defined",
    "we_pdf",
    "we_cdf",
    "we_quantile",
    "we_sample",
    "we_moment",
    "truncated_moment",
    "running_mean_trace",
    "pit_sample",
]

POLE_TOL = 1e-9

CONSTRAINT_MODES = ("frailty", "bayarri", "free")


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeibullGammaSpec:
    """Weibull outcomes with independent gamma frailties per component.

    Component j has frailty theta_j ~ Gamma(shape alpha_g[j], scale beta_g[j])
    and conditional survival exp(-lam * y^rho * theta_j * exp(x_j' xi)).

    constraint_mode:
      * "frailty": alpha_g[j] * beta_g[j] = 1 (unit-mean frailty),
      * "bayarri": alpha_g[j] = 1, beta_g[j] = 1/delta_j (exponential frailty),
      * "free": both parameters unconstrained. In free mode alpha_g and
        beta_g are not jointly identifiable with an intercept in xi; this is
        surfaced via aliasing_warning, not rejected.
    """

    lam: float
    rho: float
    xi: np.ndarray
    x: np.ndarray  # (m, p): covariate row per component
    alpha_g: np.ndarray
    beta_g: np.ndarray
    constraint_mode: str = "frailty"

    def __post_init__(self):
        if not (self.lam > 0 and self.rho > 0):
            raise DomainError("lam and rho must be strictly positive")
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        a = np.atleast_1d(np.asarray(self.alpha_g, dtype=float))
        b = np.atleast_1d(np.asarray(self.beta_g, dtype=float))
        if x.shape[1] != len(xi):
            raise ValueError("covariate rows must match the length of xi")
        m = x.shape[0]
        if len(a) != m or len(b) != m:
            raise ValueError("alpha_g and beta_g must have one entry per component")
        if not (np.all(a > 0) and np.all(b > 0)):
            raise DomainError("gamma parameters must be strictly positive")
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ValueError(f"constraint_mode must be one of {CONSTRAINT_MODES}")
        if self.constraint_mode == "frailty" and not np.all(a * b == 1.0):
            raise DomainError("frailty mode requires alpha_g * beta_g = 1 exactly")
        if self.constraint_mode == "bayarri" and not np.all(a == 1.0):
            raise DomainError("bayarri mode requires alpha_g = 1")
        for name, val in (("xi", xi), ("x", x), ("alpha_g", a), ("beta_g", b)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @property
    def n_components(self) -> int:
        return self.x.shape[0]

    @property
    def aliasing_warning(self) -> bool:
        """True when alpha_g/beta_g can trade off against an intercept in xi."""
        return self.constraint_mode == "free" and len(self.xi) > 0


@dataclass(frozen=True)
class WeibullExpSpec:
    """Single-outcome Weibull-exponential parameters (phi, rho, delta)."""

    phi: float
    rho: float
    delta: float

    def __post_init__(self):
        if not (self.phi > 0 and self.rho > 0 and self.delta > 0):
            raise DomainError("phi, rho, delta must all be strictly positive")

    @classmethod
    def from_weibull(cls, lam: float, rho: float, delta: float, mu: float = 0.0):
        """Build from Weibull scale lam and linear predictor mu: phi = lam*e^mu."""
        return cls(phi=lam * math.exp(mu), rho=rho, delta=delta)


@dataclass(frozen=True)
class MomentResult:
    """Tri-state outcome of evaluating E(Y^k).

    formula_defined: the Gamma arguments avoid non-positive integers.
    integral_finite: the defining integral converges (k < rho).
    value: present iff integral_finite.
    """

    k: int
    formula_defined: bool
    integral_finite: bool
    value: Optional[float] = None

    def __post_init__(self):
        if self.integral_finite and not self.formula_defined:
            raise ValueError("finite integral implies a defined formula")
        if (self.value is not None) != self.integral_finite:
            raise ValueError("value must be present exactly when the integral is finite")
        if self.value is not None and not self.value > 0:
            raise ValueError("moments of a positive variable must be positive")


# ---------------------------------------------------------------------------
# Pole detection
# ---------------------------------------------------------------------------


def _near_nonpositive_integer(x: float, tol: float = POLE_TOL) -> bool:
    return x < 0.5 and abs(x - round(x)) <= tol


def wg_moment_defined(alpha_g: float, rho: float, k: int) -> bool:
    """Whether Gamma(alpha_g - k/rho) in the general moment avoids a pole."""
    if not (alpha_g > 0 and rho > 0 and k > 0):
        raise DomainError("alpha_g, rho, k must be positive")
    return not _near_nonpositive_integer(alpha_g - k / rho)


# ---------------------------------------------------------------------------
# Weibull-exponential distribution
# ---------------------------------------------------------------------------


def we_pdf(spec: WeibullExpSpec, y):
    """Density phi*rho*y^(rho-1)*delta / (delta + phi*y^rho)^2 for y >= 0.

    At y = 0 with rho < 1 the density diverges; +inf is returned as a
    documented sentinel.
    """
    phi, rho, delta = spec.phi, spec.rho, spec.delta
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise DomainError("support is y >= 0")
    with np.errstate(divide="ignore"):
        out = phi * rho * y ** (rho - 1.0) * delta / (delta + phi * y**rho) ** 2
    return float(out) if out.ndim == 0 else out


def we_cdf(spec: WeibullExpSpec, y):
    """CDF 1 - delta / (delta + phi*y^rho) for y >= 0."""
    phi, rho, delta = spec.phi, spec.rho, spec.delta
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise DomainError("support is y >= 0")
    out = 1.0 - delta / (delta + phi * y**rho)
    return float(out) if out.ndim == 0 else out


def we_quantile(spec: WeibullExpSpec, u):
    """Quantile (delta*u / (phi*(1-u)))^(1/rho), u in (0,1) exclusive."""
    phi, rho, delta = spec.phi, spec.rho, spec.delta
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or np.any(u >= 1):
        raise DomainError("u must lie strictly inside (0, 1)")
    out = (delta * u / (phi * (1.0 - u))) ** (1.0 / rho)
    return float(out) if out.ndim == 0 else out


def we_sample(spec: WeibullExpSpec, n_draws: int, seed: int) -> np.ndarray:
    """Inverse-CDF sampler; deterministic per seed."""
    rng = substream(seed, 0)
    u = rng.random(n_draws)
    # map endpoints into the open interval; probability-zero event
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    return we_quantile(spec, u)


def we_moment(spec: WeibullExpSpec, k: int) -> MomentResult:
    """Analytic k-th moment with pole and divergence detection.

    value = (k/rho)*(delta/phi)^(k/rho)*Gamma(1-k/rho)*Gamma(k/rho), computed
    in log space with sign tracking, and reported only when the integral is
    actually finite (k < rho).
    """
    if k < 1:
        raise DomainError("moment order k must be a positive integer")
    phi, rho, delta = spec.phi, spec.rho, spec.delta
    r = k / rho
    formula_defined = not _near_nonpositive_integer(1.0 - r)
    integral_finite = k < rho and formula_defined
    value = None
    if integral_finite:
        sign = gammasgn(1.0 - r) * gammasgn(r)
        logval = (
            math.log(k / rho)
            + r * (math.log(delta) - math.log(phi))
            + gammaln(1.0 - r)
            + gammaln(r)
        )
        value = float(sign * math.exp(logval))
    return MomentResult(
        k=k,
        formula_defined=formula_defined,
        integral_finite=integral_finite,
        value=value,
    )


def truncated_moment(spec: WeibullExpSpec, k: int, T: float) -> float:
    """Quadrature of the truncated moment integral over [0, T], abs tol 1e-10.

    Substituting u = phi*y^rho/delta turns y^k f(y) dy into
    (delta*u/phi)^(k/rho) (1+u)^-2 du, which removes the y = 0 singularity
    for rho < 1. The range is split into geometric panels so huge T (slowly
    decaying integrands) stays accurate.
    """
    if not T > 0:
        raise DomainError("T must be strictly positive")
    if k < 1:
        raise DomainError("moment order k must be a positive integer")
    phi, rho, delta = spec.phi, spec.rho, spec.delta
    r = k / rho
    c = (delta / phi) ** r

    def g(u: float) -> float:
        return c * u**r / (1.0 + u) ** 2

    upper = phi * T**rho / delta
    cuts = [0.0]
    edge = 1.0
    while edge < upper:
        cuts.append(edge)
        edge *= 10.0
    cuts.append(upper)

    total = 0.0
    err = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        val, abserr = quad(g, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
        total += val
        err += abserr
    if err > 1e-10:
        raise QuadratureError(
            f"quadrature reached absolute tolerance {err:.3e} > 1e-10"
        )
    return total


def running_mean_trace(
    spec: WeibullExpSpec, N: int, stride: int, seed: int
) -> list[tuple[int, float]]:
    """Running sample mean at n = stride, 2*stride, ..., N; plot-ready.

    No convergence is implied for rho <= 1: the trace exists to show the
    heavy-tail jumps of a mean that does not exist.
    """
    if not 1 <= stride <= N:
        raise DomainError("need N >= stride >= 1")
    draws = we_sample(spec, N, seed)
    csum = np.cumsum(draws)
    idx = np.arange(stride, N + 1, stride)
    return [(int(n), float(csum[n - 1] / n)) for n in idx]


# ---------------------------------------------------------------------------
# Samplers for the hierarchy and the probability integral transform
# ---------------------------------------------------------------------------


def wg_sample(spec: WeibullGammaSpec, n_draws: int, seed: int) -> list[np.ndarray]:
    """Sample each component of the Weibull-gamma model; one array per component.

    Per draw: theta_j ~ Gamma(alpha_j, beta_j), then Y_j from the conditional
    survival S(y) = exp(-lam * y^rho * theta_j * e^(x_j' xi)) by inverse
    survival: y = (-log u / (lam * theta_j * e^(x_j' xi)))^(1/rho).
    """
    out = []
    for j in range(spec.n_components):
        rng = substream(seed, j)
        theta = rng.gamma(shape=spec.alpha_g[j], scale=spec.beta_g[j], size=n_draws)
        u = np.clip(rng.random(n_draws), 1e-300, 1.0 - 1e-16)
        rate = spec.lam * theta * math.exp(float(spec.x[j] @ spec.xi))
        out.append((-np.log(u) / rate) ** (1.0 / spec.rho))
    return out


def pit_sample(
    quantile: Callable[[float], float], n_draws: int, seed: int
) -> np.ndarray:
    """Probability-integral-transform sampler: F^-1(ndtr(a)), a standard normal."""
    rng = substream(seed, 0)
    a = rng.standard_normal(n_draws)
    u = ndtr(a)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    try:
        vals = np.asarray(quantile(u), dtype=float)
        if vals.shape != u.shape:
            raise TypeError
    except (TypeError, ValueError, DomainError):
        vals = np.array([float(quantile(ui)) for ui in u])
    bad = ~np.isfinite(vals)
    if np.any(bad):
        raise ArithmeticError(
            f"quantile returned a non-finite value at u = {u[bad][0]!r}"
        )
    return vals
