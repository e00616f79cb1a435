"""Core data model and compound-symmetry covariance algebra.

The marginal model handled throughout is Y_i ~ N(X_i xi, lam*J + phi*I) per
cluster, with a sign-unrestricted between-component lam and residual phi > 0.
All covariance work uses the rank-one structure of V = lam*J + phi*I:
eigenvalues phi (multiplicity n-1) and phi + n*lam, and the closed-form
inverse V^-1 = (1/phi) I - lam/(phi*(phi+n*lam)) J.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomainError",
    "RankDeficiencyError",
    "CsvFormatError",
    "ClusterData",
    "Dataset",
    "CSParams",
    "SymMatrix",
    "Validation",
    "cs_covariance",
    "validate_cs",
    "icc",
    "gls_mean",
    "read_dataset_csv",
    "write_dataset_csv",
    "format_float",
]


class DomainError(ValueError):
    """A parameter lies outside the admissible region of the model."""


class RankDeficiencyError(ValueError):
    """The GLS normal equations are singular."""


class CsvFormatError(ValueError):
    """A dataset CSV file violates the long-format contract."""


def format_float(x: float) -> str:
    """Render a float with 17 significant digits (reproducible output)."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# Symmetric matrices
# ---------------------------------------------------------------------------

MAX_DIM = 64


class SymMatrix:
    """Dense symmetric matrix, exact by construction (one triangle stored)."""

    __slots__ = ("_n", "_tri")

    def __init__(self, n: int, upper: np.ndarray):
        if n < 1 or n > MAX_DIM:
            raise ValueError(f"dimension {n} outside [1, {MAX_DIM}]")
        upper = np.asarray(upper, dtype=float)
        if upper.shape != (n * (n + 1) // 2,):
            raise ValueError("packed upper triangle has wrong length")
        upper = upper.copy()
        upper.flags.writeable = False
        self._n = n
        self._tri = upper

    @classmethod
    def from_array(cls, a: np.ndarray) -> "SymMatrix":
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("square matrix required")
        if not np.array_equal(a, a.T):
            raise ValueError("matrix is not exactly symmetric")
        n = a.shape[0]
        return cls(n, a[np.triu_indices(n)])

    @property
    def n(self) -> int:
        return self._n

    @property
    def array(self) -> np.ndarray:
        full = np.zeros((self._n, self._n))
        iu = np.triu_indices(self._n)
        full[iu] = self._tri
        full = full + full.T
        full[np.diag_indices(self._n)] /= 2.0
        return full

    def __getitem__(self, ij):
        i, j = ij
        if i > j:
            i, j = j, i
        # offset of row i in the packed upper triangle
        return self._tri[i * self._n - i * (i - 1) // 2 + (j - i)]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.array)

    def __repr__(self) -> str:
        return f"SymMatrix(n={self._n})"


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


def _frozen_array(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ClusterData:
    """One cluster: response vector y and design matrix X (n rows, p columns)."""

    cluster_id: str
    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        y = _frozen_array(self.y)
        X = _frozen_array(self.X)
        if y.ndim != 1 or len(y) < 1:
            raise ValueError(f"cluster {self.cluster_id}: y must be a nonempty vector")
        if X.ndim != 2 or X.shape[0] != len(y):
            raise ValueError(
                f"cluster {self.cluster_id}: X must have one row per observation"
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of dimensionally consistent clusters."""

    clusters: tuple[ClusterData, ...]
    covariate_names: tuple[str, ...]

    def __post_init__(self):
        clusters = tuple(self.clusters)
        names = tuple(self.covariate_names)
        if not clusters:
            raise ValueError("dataset must contain at least one cluster")
        p = clusters[0].p
        for c in clusters:
            if c.p != p:
                raise ValueError(
                    f"cluster {c.cluster_id} has {c.p} covariates, expected {p}"
                )
        if len(names) != p:
            raise ValueError("covariate_names length must match design columns")
        object.__setattr__(self, "clusters", clusters)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def p(self) -> int:
        return self.clusters[0].p

    def cluster_sizes(self) -> list[int]:
        return [c.n for c in self.clusters]


@dataclass(frozen=True)
class CSParams:
    """Marginal compound-symmetry parameters (xi, lam, phi); lam may be negative."""

    xi: np.ndarray
    lam: float
    phi: float

    def __post_init__(self):
        xi = _frozen_array(np.atleast_1d(self.xi))
        if xi.ndim != 1:
            raise ValueError("xi must be a vector")
        if not self.phi > 0:
            raise DomainError(f"phi must be strictly positive, got {self.phi}")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "phi", float(self.phi))

    @property
    def p(self) -> int:
        return len(self.xi)


# ---------------------------------------------------------------------------
# Covariance algebra
# ---------------------------------------------------------------------------


def cs_covariance(n: int, lam: float, phi: float) -> SymMatrix:
    """Compound-symmetry covariance lam*J_n + phi*I_n (no PD check here)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    v = np.full((n, n), lam) + phi * np.eye(n)
    return SymMatrix(n, v[np.triu_indices(n)])


@dataclass(frozen=True)
class Validation:
    ok: bool
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok


def validate_cs(n_set, lam: float, phi: float) -> Validation:
    """Exact positive-definiteness check of lam*J_n + phi*I_n over cluster sizes.

    V is PD iff phi > 0 and phi + n*lam > 0 (its two distinct eigenvalues),
    with strict inequalities; boundary points are rejected.
    """
    sizes = sorted(set(int(n) for n in n_set))
    if not sizes:
        raise ValueError("n_set must be nonempty")
    if not phi > 0:
        return Validation(False, f"phi = {phi} is not strictly positive")
    for n in sizes:
        if not phi + n * lam > 0:
            return Validation(
                False,
                f"phi + n*lam = {phi + n * lam} <= 0 for cluster size n = {n}",
            )
    return Validation(True, "positive definite for all cluster sizes")


def icc(lam: float, phi: float) -> float:
    """Within-cluster correlation lam / (lam + phi) of the marginal model."""
    if not lam + phi > 0:
        raise DomainError(f"lam + phi = {lam + phi} must be strictly positive")
    return lam / (lam + phi)


def gls_mean(data: Dataset, lam: float, phi: float) -> np.ndarray:
    """GLS estimate of xi at fixed (lam, phi), via the rank-one inverse of V.

    Uses V^-1 = (1/phi) I - lam/(phi*(phi+n*lam)) J per cluster, so no dense
    matrix inversion is performed.
    """
    check = validate_cs(data.cluster_sizes(), lam, phi)
    if not check:
        raise DomainError(check.message)
    p = data.p
    A = np.zeros((p, p))
    b = np.zeros(p)
    for c in data.clusters:
        n = c.n
        w = lam / (phi * (phi + n * lam))
        xs = c.X.sum(axis=0)
        A += c.X.T @ c.X / phi - w * np.outer(xs, xs)
        b += c.X.T @ c.y / phi - w * xs * c.y.sum()
    try:
        xi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"singular GLS normal equations: {exc}") from exc
    if not np.all(np.isfinite(xi)) or np.linalg.cond(A) > 1e12:
        raise RankDeficiencyError("GLS normal equations are rank deficient")
    return xi


# ---------------------------------------------------------------------------
# CSV long format: cluster,unit,y,x1,...,xp
# ---------------------------------------------------------------------------


def read_dataset_csv(path) -> Dataset:
    """Parse a long-format dataset CSV (header ``cluster,unit,y,x1,...,xp``).

    Clusters keep first-appearance order; rows within a cluster are sorted by
    the integer ``unit`` column. Raises CsvFormatError with the offending line
    number on malformed input.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("line 1: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0] != "cluster" or header[1] != "unit" or header[2] != "y":
            raise CsvFormatError(
                "line 1: header must start with 'cluster,unit,y'"
            )
        covariate_names = header[3:]
        p = len(covariate_names)
        rows: dict[str, list[tuple[int, float, list[float]]]] = {}
        order: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 + p:
                raise CsvFormatError(
                    f"line {lineno}: expected {3 + p} columns, got {len(row)}"
                )
            key = row[0].strip()
            try:
                unit = int(row[1])
                y = float(row[2])
                x = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise CsvFormatError(f"line {lineno}: {exc}") from None
            if key not in rows:
                rows[key] = []
                order.append(key)
            rows[key].append((unit, y, x))
    if not order:
        raise CsvFormatError("line 2: no data rows")
    clusters = []
    for key in order:
        recs = sorted(rows[key], key=lambda r: r[0])
        clusters.append(
            ClusterData(
                cluster_id=key,
                y=np.array([r[1] for r in recs]),
                X=np.array([r[2] for r in recs]).reshape(len(recs), p),
            )
        )
    return Dataset(clusters=tuple(clusters), covariate_names=tuple(covariate_names))


def write_dataset_csv(data: Dataset, path) -> None:
    """Emit the long format consumed by read_dataset_csv (17 sig. digits)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("cluster,unit,y," + ",".join(data.covariate_names) + "\n")
        for c in data.clusters:
            for j in range(c.n):
                cells = [c.cluster_id, str(j + 1), format_float(c.y[j])]
                cells += [format_float(v) for v in c.X[j]]
                fh.write(",".join(cells) + "\n")
