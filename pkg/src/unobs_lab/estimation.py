"""ML fitting of the compound-symmetry marginal model and seeded simulation.

The likelihood never clamps lam at zero: negative between-component values
are legitimate as long as phi + n*lam > 0 for every cluster size. Fitting
profiles xi out via GLS and runs a derivative-free simplex search over
(lam, log phi) with a rejection penalty outside the PD region. A closed-form
one-way ANOVA estimator serves as the oracle on balanced intercept-only data.

Simulation draws each cluster from its own counter-based substream, so
replicates are deterministic and order/thread independent.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import minimize

from unobs_lab.equivalence import ExtendedSpec, joint_cov
from unobs_lab.model_core import (
    ClusterData,
    CSParams,
    Dataset,
    DomainError,
    gls_mean,
    validate_cs,
)
from unobs_lab.rng import substream

__all__ = [
    "FitResult",
    "SimLayout",
    "UnsupportedLayoutError",
    "loglik_cs",
    "fit_ml",
    "fit_balanced_closed_form",
    "simulate_cs",
    "simulate_extended",
]

LOG_2PI = math.log(2.0 * math.pi)
BOUNDARY_TOL = 1e-6


class UnsupportedLayoutError(ValueError):
    """Closed-form estimation requested on a layout it does not cover."""


@dataclass(frozen=True)
class FitResult:
    params: CSParams
    loglik: float
    converged: bool
    iterations: int
    constraint_active: bool


@dataclass(frozen=True)
class SimLayout:
    """Cluster layout for simulation: N clusters, balanced size or explicit list.

    design is None for intercept-only, a single (n, p) matrix shared by all
    clusters (balanced only), or one matrix per cluster.
    """

    n_clusters: int
    cluster_size: Union[int, Sequence[int]]
    design: Optional[Union[np.ndarray, Sequence[np.ndarray]]] = None

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        for n in self.sizes():
            if n < 1:
                raise ValueError("cluster sizes must be >= 1")

    def sizes(self) -> list[int]:
        if isinstance(self.cluster_size, int):
            return [self.cluster_size] * self.n_clusters
        sizes = [int(n) for n in self.cluster_size]
        if len(sizes) != self.n_clusters:
            raise ValueError("explicit size list must have n_clusters entries")
        return sizes

    def design_for(self, i: int, n: int) -> np.ndarray:
        if self.design is None:
            return np.ones((n, 1))
        if isinstance(self.design, np.ndarray):
            x = np.asarray(self.design, dtype=float)
        else:
            x = np.asarray(self.design[i], dtype=float)
        if x.shape[0] != n:
            raise ValueError(f"design for cluster {i} has {x.shape[0]} rows, need {n}")
        return x

    def covariate_names(self) -> list[str]:
        p = 1 if self.design is None else self.design_for(0, self.sizes()[0]).shape[1]
        return [f"x{j + 1}" for j in range(p)]


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------


def loglik_cs(data: Dataset, params: CSParams) -> float:
    """Exact Gaussian log-likelihood of the compound-symmetry marginal model.

    Per cluster: log det V = (n-1) log phi + log(phi + n*lam) and
    r' V^-1 r = r'r/phi - lam*(1'r)^2 / (phi*(phi + n*lam)).
    """
    lam, phi = params.lam, params.phi
    check = validate_cs(data.cluster_sizes(), lam, phi)
    if not check:
        raise DomainError(check.message)
    ll = 0.0
    for c in data.clusters:
        n = c.n
        r = c.y - c.X @ params.xi
        rs = r.sum()
        quad = r @ r / phi - lam * rs * rs / (phi * (phi + n * lam))
        logdet = (n - 1) * math.log(phi) + math.log(phi + n * lam)
        ll -= 0.5 * (n * LOG_2PI + logdet + quad)
    return ll


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _SizeStats:
    """Cross-products for all clusters of one size, reused per optimizer step."""

    n: int
    count: int
    sxx: np.ndarray  # sum of X_k' X_k, (p, p)
    sxy: np.ndarray  # sum of X_k' y_k, (p,)
    syy: float  # sum of y_k' y_k
    xs: np.ndarray  # column sums of X_k, (count, p)
    ys: np.ndarray  # sums of y_k, (count,)


def _size_stats(data: Dataset) -> list[_SizeStats]:
    groups: dict[int, list] = {}
    for c in data.clusters:
        groups.setdefault(c.n, []).append(c)
    out = []
    for n, cs in sorted(groups.items()):
        out.append(
            _SizeStats(
                n=n,
                count=len(cs),
                sxx=sum(c.X.T @ c.X for c in cs),
                sxy=sum(c.X.T @ c.y for c in cs),
                syy=sum(float(c.y @ c.y) for c in cs),
                xs=np.array([c.X.sum(axis=0) for c in cs]),
                ys=np.array([c.y.sum() for c in cs]),
            )
        )
    return out


def _gls_from_stats(stats: list[_SizeStats], lam: float, phi: float) -> np.ndarray:
    p = stats[0].sxx.shape[0]
    A = np.zeros((p, p))
    b = np.zeros(p)
    for st in stats:
        w = lam / (phi * (phi + st.n * lam))
        A += st.sxx / phi - w * (st.xs.T @ st.xs)
        b += st.sxy / phi - w * (st.xs.T @ st.ys)
    return np.linalg.solve(A, b)


def _loglik_from_stats(stats: list[_SizeStats], xi: np.ndarray, lam: float, phi: float) -> float:
    ll = 0.0
    for st in stats:
        rr = st.syy - 2.0 * xi @ st.sxy + xi @ st.sxx @ xi
        ones_r = st.ys - st.xs @ xi
        quad = rr / phi - lam * float(ones_r @ ones_r) / (phi * (phi + st.n * lam))
        logdet = (st.n - 1) * math.log(phi) + math.log(phi + st.n * lam)
        ll -= 0.5 * (st.count * (st.n * LOG_2PI + logdet) + quad)
    return ll


def _moment_start(data: Dataset) -> tuple[float, float]:
    """Method-of-moments starting values for (lam, phi), clipped feasible."""
    X = np.vstack([c.X for c in data.clusters])
    y = np.concatenate([c.y for c in data.clusters])
    xi0, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = [c.y - c.X @ xi0 for c in data.clusters]

    ssw = sum(float(np.sum((r - r.mean()) ** 2)) for r in resid)
    dfw = sum(c.n - 1 for c in data.clusters)
    phi0 = ssw / dfw if dfw > 0 and ssw > 0 else float(np.var(y)) or 1.0

    means = np.array([r.mean() for r in resid])
    nbar = np.mean([c.n for c in data.clusters])
    lam0 = float(np.var(means)) - phi0 / nbar
    n_max = max(c.n for c in data.clusters)
    if phi0 + n_max * lam0 <= 0:
        lam0 = -0.5 * phi0 / n_max
    return lam0, phi0


def fit_ml(data: Dataset, max_iter: int = 500, xtol: float = 1e-9) -> FitResult:
    """Maximize loglik_cs over {phi > 0, phi + n_i*lam > 0 for all i}.

    Nelder-Mead over (lam, log phi) with profiled xi; infeasible points get a
    large rejection penalty. Never restricts lam to be nonnegative.
    """
    if data.n_clusters < 2:
        raise DomainError("fitting requires at least two clusters")
    sizes = data.cluster_sizes()
    if all(n == 1 for n in sizes):
        raise DomainError(
            "lam is unidentified: every cluster has a single observation"
        )
    n_set = sorted(set(sizes))
    n_max = n_set[-1]
    stats = _size_stats(data)

    def neg_loglik(z: np.ndarray) -> float:
        lam, phi = z[0], math.exp(z[1])
        worst = phi + n_max * lam
        if worst <= 0 or not math.isfinite(phi):
            return 1e10 * (1.0 + abs(worst))
        xi = _gls_from_stats(stats, lam, phi)
        return -_loglik_from_stats(stats, xi, lam, phi)

    lam0, phi0 = _moment_start(data)
    res = minimize(
        neg_loglik,
        np.array([lam0, math.log(phi0)]),
        method="Nelder-Mead",
        options={
            "maxiter": max_iter,
            "xatol": xtol,
            "fatol": 1e-12,
        },
    )
    lam, phi = res.x[0], math.exp(res.x[1])
    xi = gls_mean(data, lam, phi)
    params = CSParams(xi=xi, lam=lam, phi=phi)
    active = phi < BOUNDARY_TOL or any(
        phi + n * lam < BOUNDARY_TOL for n in n_set
    )
    return FitResult(
        params=params,
        loglik=-res.fun,
        converged=bool(res.success),
        iterations=int(res.nit),
        constraint_active=active,
    )


def fit_balanced_closed_form(data: Dataset) -> FitResult:
    """One-way ANOVA ML estimators on balanced intercept-only data.

    mu = grand mean, phi = SSW / (N*(n-1)), lam = SSB/(N*n) - phi/n; lam is
    not truncated at zero. Used as the oracle for fit_ml.
    """
    sizes = data.cluster_sizes()
    n = sizes[0]
    if any(m != n for m in sizes):
        raise UnsupportedLayoutError("closed form requires balanced clusters")
    if n < 2:
        raise UnsupportedLayoutError("closed form requires cluster size >= 2")
    if data.p != 1 or any(not np.all(c.X == 1.0) for c in data.clusters):
        raise UnsupportedLayoutError("closed form requires an intercept-only design")
    N = data.n_clusters
    y = np.array([c.y for c in data.clusters])  # (N, n)
    mu = float(y.mean())
    cluster_means = y.mean(axis=1)
    ssw = float(np.sum((y - cluster_means[:, None]) ** 2))
    ssb = n * float(np.sum((cluster_means - mu) ** 2))
    if ssw <= 0:
        raise DomainError("zero within-cluster variation: phi sits on the boundary")
    phi = ssw / (N * (n - 1))
    lam = ssb / (N * n) - phi / n
    if phi + n * lam <= 0:
        raise DomainError("zero between-cluster variation: lam sits on the boundary")
    params = CSParams(xi=np.array([mu]), lam=lam, phi=phi)
    return FitResult(
        params=params,
        loglik=loglik_cs(data, params),
        converged=True,
        iterations=0,
        constraint_active=phi < BOUNDARY_TOL or phi + n * lam < BOUNDARY_TOL,
    )


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def _map_clusters(build, count: int, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(build, range(count)))
    return [build(i) for i in range(count)]


def simulate_cs(
    params: CSParams, layout: SimLayout, seed: int, threads: int = 1
) -> Dataset:
    """Simulate from the compound-symmetry marginal model, bit-reproducibly.

    For lam >= 0 a real random intercept is drawn; for lam < 0 no hierarchy
    exists, so each cluster is sampled directly from N(X xi, lam*J + phi*I)
    via a Cholesky factor. Both branches share the marginal law.
    """
    sizes = layout.sizes()
    check = validate_cs(sizes, params.lam, params.phi)
    if not check:
        raise DomainError(check.message)
    lam, phi = params.lam, params.phi
    chols = {}
    if lam < 0:
        for n in set(sizes):
            v = np.full((n, n), lam) + phi * np.eye(n)
            chols[n] = np.linalg.cholesky(v)

    def build(i: int) -> ClusterData:
        n = sizes[i]
        X = layout.design_for(i, n)
        rng = substream(seed, i)
        mean = X @ params.xi
        if lam >= 0:
            b = rng.normal(0.0, math.sqrt(lam)) if lam > 0 else 0.0
            y = mean + b + rng.normal(0.0, math.sqrt(phi), size=n)
        else:
            y = mean + chols[n] @ rng.standard_normal(n)
        return ClusterData(cluster_id=f"c{i + 1}", y=y, X=X)

    clusters = _map_clusters(build, layout.n_clusters, threads)
    return Dataset(clusters=tuple(clusters), covariate_names=tuple(layout.covariate_names()))


def simulate_extended(
    spec: ExtendedSpec,
    xi: np.ndarray,
    layout: SimLayout,
    seed: int,
    threads: int = 1,
) -> tuple[Dataset, list[tuple[float, np.ndarray]]]:
    """Simulate from the alpha-indexed hierarchy; returns data plus latents.

    (b, eps) are drawn jointly from the (n+1)-dimensional Gaussian through a
    rank-revealing eigenfactorization, so the rank-deficient boundary
    |alpha| = 1 is handled without failure. Latents are (b_i, eps_i) per
    cluster, aligned with the returned dataset.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    sizes = layout.sizes()
    factors = {}
    for n in set(sizes):
        c = joint_cov(spec, n).array
        w, u = np.linalg.eigh(c)
        scale = max(1.0, float(w.max()))
        if w.min() < -1e-9 * scale:
            raise DomainError(
                f"joint covariance for n = {n} is not PSD: eigenvalue {w.min()}"
            )
        factors[n] = u * np.sqrt(np.clip(w, 0.0, None))

    def build(i: int) -> tuple[ClusterData, float, np.ndarray]:
        n = sizes[i]
        X = layout.design_for(i, n)
        rng = substream(seed, i)
        v = factors[n] @ rng.standard_normal(n + 1)
        b, eps = float(v[0]), v[1:]
        y = X @ xi + b + eps
        return ClusterData(cluster_id=f"c{i + 1}", y=y, X=X), b, eps

    rows = _map_clusters(build, layout.n_clusters, threads)
    clusters = tuple(r[0] for r in rows)
    latents = [(r[1], r[2]) for r in rows]
    data = Dataset(clusters=clusters, covariate_names=tuple(layout.covariate_names()))
    return data, latents
