"""Kirchhoff matrices and the measure-constrained discrete eigenproblem.

The eigenproblem asks for f with sum(f * nu) = 0 and
``sum(Q f * g) = lam * sum(f * g)`` for every g with sum(g * nu) = 0.  We
restrict Q to the hyperplane orthogonal to the mass vector with one
Householder reflector and solve the resulting symmetric problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from .errors import ModelMismatchError, NumericalError
from .graph import CpaFunction, DiscreteMeasure, Model, _same_model

__all__ = [
    "DENSE_LIMIT",
    "CLUSTER_RTOL",
    "KirchhoffMatrix",
    "Cluster",
    "SpectralResult",
    "kirchhoff_matrix",
    "apply_Q",
    "dirichlet_energy",
    "dirichlet_inner",
    "eigen_mu",
    "verify_equivalent_laplacian",
    "deflate",
    "rayleigh_quotient",
    "rayleigh_min_check",
    "cluster_values",
    "orient",
    "Reflector",
]

DENSE_LIMIT = 2048
CLUSTER_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class KirchhoffMatrix:
    model: Model
    matrix: np.ndarray | sparse.csr_matrix

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    @property
    def norm(self) -> float:
        # Gershgorin: the largest eigenvalue is at most twice the largest degree.
        return float(2.0 * np.max(np.abs(self.matrix.diagonal())))


@dataclass(frozen=True, eq=False)
class Cluster:
    value: float
    multiplicity: int
    functions: tuple[CpaFunction, ...]


@dataclass(frozen=True, eq=False)
class SpectralResult:
    """Distinct eigenvalues with multiplicities and orthonormal eigenfunctions.

    ``operator`` is ``"q"`` for Laplacian eigenvalues (increasing) or ``"phi"``
    for integral-operator eigenvalues (decreasing, so that index i refers to
    the same eigenspace in both).
    """

    model: Model
    clusters: tuple[Cluster, ...]
    operator: str = "q"

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def values(self) -> np.ndarray:
        return np.array([c.value for c in self.clusters])

    @property
    def multiplicities(self) -> list[int]:
        return [c.multiplicity for c in self.clusters]

    @property
    def scaled(self) -> np.ndarray:
        """N * lambda for the Laplacian; 1 / alpha for the integral operator."""
        if self.operator == "phi":
            return 1.0 / self.values
        return self.n * self.values

    def functions_upto(self, m: int) -> list[CpaFunction]:
        """Eigenfunctions of clusters 1..m-1 (1-based m)."""
        return [f for c in self.clusters[: m - 1] for f in c.functions]

    def to_dict(self, include_functions: bool = True) -> dict:
        out = {"n": self.n, "operator": self.operator, "clusters": []}
        for c, s in zip(self.clusters, self.scaled):
            entry = {
                "lambda" if self.operator == "q" else "alpha": c.value,
                "scaled": float(s),
                "multiplicity": c.multiplicity,
            }
            if include_functions:
                entry["eigenfunctions"] = [f.values.tolist() for f in c.functions]
            out["clusters"].append(entry)
        return out


def kirchhoff_matrix(model: Model, dense_limit: int = DENSE_LIMIT) -> KirchhoffMatrix:
    i, j = model.edges[:, 0], model.edges[:, 1]
    w = model.weights
    n = model.n
    deg = np.zeros(n)
    np.add.at(deg, i, w)
    np.add.at(deg, j, w)
    rows = np.concatenate([i, j, np.arange(n)])
    cols = np.concatenate([j, i, np.arange(n)])
    data = np.concatenate([-w, -w, deg])
    mat = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    if n < dense_limit:
        mat = mat.toarray()
    return KirchhoffMatrix(model, mat)


def apply_Q(Q: KirchhoffMatrix, f: CpaFunction) -> CpaFunction:
    """Vertex weights of the Laplacian measure of a CPA function."""
    _same_model(Q.model, f.model)
    return CpaFunction(f.model, Q @ f.values)


def dirichlet_energy(f: CpaFunction) -> float:
    m = f.model
    d = f.values[m.edges[:, 0]] - f.values[m.edges[:, 1]]
    return float(np.sum(m.weights * d * d))


def dirichlet_inner(f: CpaFunction, g: CpaFunction) -> float:
    _same_model(f.model, g.model)
    m = f.model
    df = f.values[m.edges[:, 0]] - f.values[m.edges[:, 1]]
    dg = g.values[m.edges[:, 0]] - g.values[m.edges[:, 1]]
    return float(np.sum(m.weights * df * dg))


# ---------------------------------------------------------------------------
# constrained eigenproblem


class Reflector:
    """Householder reflector H with H m proportional to e_0.

    Columns 1..n-1 of H are an orthonormal basis of the hyperplane m . u = 0.
    """

    def __init__(self, masses: np.ndarray):
        m = np.asarray(masses, dtype=float)
        norm = np.linalg.norm(m)
        if norm == 0.0:
            raise ValueError("mass vector is zero")
        v = m / norm
        v = v.copy()
        v[0] += 1.0 if v[0] >= 0 else -1.0
        self.u = v * (math.sqrt(2.0) / np.linalg.norm(v))  # H = I - u u^T

    def compress(self, A: np.ndarray) -> np.ndarray:
        """(H A H)[1:, 1:] for symmetric dense A, in O(n^2)."""
        u = self.u
        w = A @ u
        c = u @ w
        B = A - np.outer(w, u) - np.outer(u, w) + c * np.outer(u, u)
        B = B[1:, 1:]
        return 0.5 * (B + B.T)

    def lift(self, V: np.ndarray) -> np.ndarray:
        """Map reduced coordinates back to vertex values: H [0; V]."""
        V = np.atleast_2d(V.T).T
        full = np.vstack([np.zeros((1, V.shape[1])), V])
        return full - np.outer(self.u, self.u @ full)


def cluster_values(values: Sequence[float], rtol: float = CLUSTER_RTOL) -> list[list[int]]:
    """Group sorted values; consecutive values within rtol*max(|b|, 1) join a cluster."""
    groups: list[list[int]] = []
    for k, v in enumerate(values):
        if groups and abs(v - values[groups[-1][-1]]) <= rtol * max(abs(v), 1.0):
            groups[-1].append(k)
        else:
            groups.append([k])
    return groups


def orient(vec: np.ndarray) -> np.ndarray:
    """Flip sign so the largest-magnitude entry (lowest index on ties) is positive."""
    mag = np.abs(vec)
    top = mag.max()
    idx = int(np.argmax(mag >= top * (1.0 - 1e-9)))
    return -vec if vec[idx] < 0 else vec


def _check_measure(model: Model, mu_N: DiscreteMeasure) -> np.ndarray:
    if mu_N.model is not model:
        raise ModelMismatchError("measure and matrix live on different models")
    m = mu_N.masses
    if not np.any(m):
        raise ValueError("mass vector is zero")
    if abs(math.fsum(m) - 1.0) > 1e-10:
        raise ValueError(f"measure has total mass {math.fsum(m)!r}, expected 1")
    return m


def _package(
    model: Model,
    values: np.ndarray,
    vectors: np.ndarray,
    k: int,
    operator: str,
    rtol: float,
) -> SpectralResult:
    n = model.n
    groups = cluster_values(list(values), rtol)[:k]
    clusters = []
    for grp in groups:
        funcs = []
        for idx in grp:
            vec = vectors[:, idx]
            vec = vec * (math.sqrt(n) / np.linalg.norm(vec))
            funcs.append(CpaFunction(model, orient(vec)))
        clusters.append(Cluster(float(np.mean(values[grp])), len(grp), tuple(funcs)))
    return SpectralResult(model, tuple(clusters), operator)


def _dense_smallest(A: np.ndarray, k: int, rtol: float) -> tuple[np.ndarray, np.ndarray]:
    dim = A.shape[0]
    count = min(dim, max(2 * k + 4, 8))
    while True:
        vals, vecs = linalg.eigh(A, subset_by_index=[0, count - 1], driver="evr")
        if count == dim or len(cluster_values(list(vals), rtol)) > k:
            return vals, vecs
        count = min(dim, 2 * count)


def _sparse_smallest(
    Q: KirchhoffMatrix, m: np.ndarray, k: int, rtol: float
) -> tuple[np.ndarray, np.ndarray]:
    # Inverse of Q restricted to m-perp via the bordered (KKT) system.
    n = Q.model.n
    Qs = sparse.csc_matrix(Q.matrix)
    col = sparse.csc_matrix(m.reshape(-1, 1))
    kkt = sparse.bmat([[Qs, col], [col.T, None]], format="csc")
    lu = splinalg.splu(kkt)
    mhat = m / np.linalg.norm(m)

    def solve(b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float).ravel()
        b = b - mhat * (mhat @ b)
        x = lu.solve(np.append(b, 0.0))[:n]
        return x - mhat * (mhat @ x)

    op = splinalg.LinearOperator((n, n), matvec=solve, dtype=float)
    v0 = np.cos(np.arange(n) * 0.7 + 0.3)
    count = min(n - 2, max(2 * k + 4, 8))
    while True:
        inv_vals, vecs = splinalg.eigsh(op, k=count, which="LA", v0=v0, tol=1e-14)
        order = np.argsort(-inv_vals)
        vals = 1.0 / inv_vals[order]
        vecs = vecs[:, order]
        if count >= n - 2 or len(cluster_values(list(vals), rtol)) > k:
            return vals, vecs
        count = min(n - 2, 2 * count)


def eigen_mu(
    Q: KirchhoffMatrix,
    mu_N: DiscreteMeasure,
    k: int,
    *,
    rtol: float = CLUSTER_RTOL,
    dense_limit: int = DENSE_LIMIT,
) -> SpectralResult:
    """The k smallest distinct eigenvalues of Q with respect to mu_N.

    Eigenfunctions are orthonormal for the dx_N inner product
    (mean of f*g over vertices) and deterministically oriented.
    """
    model = Q.model
    m = _check_measure(model, mu_N)
    n = model.n
    if k < 1 or k > n - 1:
        raise ValueError(f"k={k} must lie in [1, N-1] = [1, {n - 1}]")
    if n >= dense_limit:
        vals, full = _sparse_smallest(Q, m, k, rtol)
    else:
        refl = Reflector(m)
        vals, vecs = _dense_smallest(refl.compress(Q.dense()), k, rtol)
        full = refl.lift(vecs)
    if vals[0] <= 0.0:
        raise NumericalError(f"nonpositive eigenvalue {vals[0]!r}; is the model connected?")
    return _package(model, vals, full, k, "q", rtol)


def verify_equivalent_laplacian(
    result: SpectralResult, Q: KirchhoffMatrix, mu_N: DiscreteMeasure
) -> float:
    """Largest residual of ``Q f = lam (f - N mean(f) mu_N)`` over all eigenpairs.

    For mu_N = dx_N the residual of the ordinary eigen-equation ``Q f = lam f``
    is folded into the maximum as well.
    """
    _same_model(result.model, Q.model, mu_N.model)
    m = mu_N.masses
    n = Q.model.n
    uniform = np.allclose(m, 1.0 / n, rtol=0, atol=1e-15)
    worst = 0.0
    for c in result.clusters:
        for f in c.functions:
            v = f.values
            if abs(v @ m) > 1e-8 * max(1.0, np.abs(v).max()):
                raise ValueError("function is not orthogonal to the measure")
            Qf = Q @ v
            res = Qf - c.value * (v - n * v.mean() * m)
            worst = max(worst, float(np.abs(res).max()))
            if uniform:
                worst = max(worst, float(np.abs(Qf - c.value * v).max()))
    return worst


def deflate(
    f: CpaFunction, basis: Sequence[CpaFunction], mu_N: DiscreteMeasure
) -> CpaFunction:
    """Project f onto {mu_N-orthogonal} and away from ``basis``; normalize in dx_N.

    The mu_N correction is along the function q -> mu_N(q), which is
    dx_N-orthogonal to every mu_N-orthogonal function; for mu_N = dx_N this is
    the constant shift by the integral of f against mu_N.
    """
    _same_model(f.model, mu_N.model, *(h.model for h in basis))
    n = f.model.n
    m = mu_N.masses
    g = f.values - (f.values @ m) * m / (m @ m)
    for h in basis:
        g = g - (g @ h.values / n) * h.values
    norm = math.sqrt(g @ g / n)
    if norm <= 1e-12 * max(1.0, math.sqrt(f.values @ f.values / n)):
        raise ValueError("zero denominator: f lies in the span of the basis and the measure direction")
    return CpaFunction(f.model, g / norm)


def rayleigh_quotient(g: CpaFunction) -> float:
    """Dirichlet energy over squared dx_N norm."""
    l2 = g.values @ g.values / g.model.n
    return dirichlet_energy(g) / l2


def rayleigh_min_check(
    result: SpectralResult,
    Q: KirchhoffMatrix,
    mu_N: DiscreteMeasure,
    m_index: int,
    trials: int,
    rng: np.random.Generator | int | None = 0,
    rtol: float = 1e-8,
) -> bool:
    """Random functions orthogonal to clusters < m never beat N * lambda_m."""
    _same_model(result.model, Q.model, mu_N.model)
    if not 1 <= m_index <= len(result.clusters):
        raise ValueError(f"result has no cluster {m_index}")
    basis = result.functions_upto(m_index)
    if len(basis) >= Q.model.n - 1:
        raise ValueError("empty orthocomplement")
    rng = np.random.default_rng(rng)
    target = result.n * result.clusters[m_index - 1].value
    for _ in range(trials):
        f = CpaFunction(Q.model, rng.standard_normal(Q.model.n))
        if rayleigh_quotient(deflate(f, basis, mu_N)) < target * (1.0 - rtol):
            return False
    for h in result.clusters[m_index - 1].functions:
        if abs(rayleigh_quotient(h) - target) > rtol * target:
            return False
    return True
