"""Green's kernels on models and the discrete integral operator.

``j_z(x, y)`` is the potential at x for unit current entering at y and
leaving at z, grounded at z.  On a model it is the four-point combination
of the Kirchhoff pseudo-inverse; ``j_function`` computes the same thing by a
grounded linear solve so the two routes can be checked against each other.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from .errors import ModelMismatchError, NumericalError
from .graph import CpaFunction, DiscreteMeasure, Model, _same_model
from .laplacian import (
    CLUSTER_RTOL,
    KirchhoffMatrix,
    Reflector,
    SpectralResult,
    _package,
    cluster_values,
    kirchhoff_matrix,
)

__all__ = [
    "KernelTable",
    "j_function",
    "j_from_pinv",
    "pseudoinverse_kernel",
    "kernel_table",
    "phi_N",
    "verify_laplacian_inverse",
    "eigen_phi",
    "compressed_phi",
]

PINV_RTOL = 1e-12
ANCHOR_TOL = 1e-9


def _vertex(model: Model, v) -> int:
    if isinstance(v, (int, np.integer)):
        if not 0 <= v < model.n:
            raise ValueError(f"vertex index {v} out of range")
        return int(v)
    try:
        return model.index_of(v)
    except KeyError as exc:
        raise ValueError(str(exc)) from None


def j_function(model: Model, z, y, Q: KirchhoffMatrix | None = None) -> CpaFunction:
    """Solve Q u = e_y - e_z with u(z) = 0."""
    Q = Q or kirchhoff_matrix(model)
    _same_model(model, Q.model)
    iz, iy = _vertex(model, z), _vertex(model, y)
    n = model.n
    rhs = np.zeros(n)
    rhs[iy] += 1.0
    rhs[iz] -= 1.0
    keep = np.r_[0:iz, iz + 1 : n]
    u = np.zeros(n)
    if Q.is_sparse:
        A = sparse.csc_matrix(Q.matrix)[keep][:, keep]
        u[keep] = splinalg.spsolve(A, rhs[keep])
    else:
        A = Q.matrix[np.ix_(keep, keep)]
        try:
            u[keep] = linalg.solve(A, rhs[keep], assume_a="pos")
        except linalg.LinAlgError:
            raise NumericalError("grounded Kirchhoff system is singular; disconnected model?") from None
    return CpaFunction(model, u)


def pseudoinverse_kernel(Q: KirchhoffMatrix) -> np.ndarray:
    """Moore-Penrose inverse of Q by eigendecomposition, cutting eigenvalues below 1e-12 ||Q||."""
    vals, vecs = linalg.eigh(Q.dense())
    cutoff = PINV_RTOL * max(abs(vals[-1]), 1.0)
    keep = vals > cutoff
    if np.count_nonzero(~keep) != 1:
        raise NumericalError(
            f"expected one zero mode, found {np.count_nonzero(~keep)}; disconnected model?"
        )
    V = vecs[:, keep]
    return (V / vals[keep]) @ V.T


def j_from_pinv(Lp: np.ndarray, z: int, y: int) -> np.ndarray:
    """j_z(., y) at every vertex: L+[x,y] - L+[x,z] - L+[z,y] + L+[z,z]."""
    return Lp[:, y] - Lp[:, z] - Lp[z, y] + Lp[z, z]


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Vertex values of g_nu(x, y) = j_nu(x, y) - C_nu."""

    model: Model
    nu: DiscreteMeasure
    table: np.ndarray
    constant: float
    anchor_spread: float

    def value(self, x, y) -> float:
        return float(self.table[_vertex(self.model, x), _vertex(self.model, y)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# C_nu={self.constant!r} nu={self.nu.name}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", *self.model.labels])
        for label, row in zip(self.model.labels, self.table):
            w.writerow([label, *(repr(float(x)) for x in row)])
        return buf.getvalue()


def kernel_table(
    model: Model,
    nu: DiscreteMeasure,
    Lp: np.ndarray | None = None,
) -> KernelTable:
    """Assemble g_nu from the pseudo-inverse.

    With a = L+ nu and D = sum_z nu(z) L+[z,z], averaging the four-point
    formula over z gives j_nu(x,y) = L+[x,y] - a[x] - a[y] + D.  The constant
    C_nu is the nu-average of j_nu(., y); it is evaluated for every y and the
    spread across y is checked.
    """
    _same_model(model, nu.model)
    total = math.fsum(nu.masses)
    if abs(total - 1.0) > 1e-10:
        raise ValueError(f"nu has total mass {total!r}, expected 1")
    if Lp is None:
        Lp = pseudoinverse_kernel(kirchhoff_matrix(model))
    w = nu.masses
    a = Lp @ w
    D = float(np.diag(Lp) @ w)
    j_nu = Lp - a[:, None] - a[None, :] + D
    consts = w @ j_nu
    spread = float(consts.max() - consts.min())
    scale = max(1.0, float(np.abs(j_nu).max()))
    if spread > ANCHOR_TOL * scale:
        raise NumericalError(f"C_nu depends on the anchor (spread {spread:.3g})")
    C = float(consts[0])
    G = j_nu - C
    G.setflags(write=False)
    return KernelTable(model, nu, G, C, spread)


def _check_table(table: KernelTable, mu_N: DiscreteMeasure) -> None:
    if table.model is not mu_N.model:
        raise ModelMismatchError("kernel table and measure live on different models")
    if table.nu is not mu_N and not np.array_equal(table.nu.masses, mu_N.masses):
        raise ModelMismatchError("kernel table was built for a different measure")


def phi_N(table: KernelTable, mu_N: DiscreteMeasure, h: CpaFunction) -> CpaFunction:
    """(1/N) sum_j g(q_i, q_j) h(q_j) at every vertex."""
    _check_table(table, mu_N)
    _same_model(table.model, h.model)
    return CpaFunction(h.model, table.table @ h.values / table.model.n)


def verify_laplacian_inverse(
    Q: KirchhoffMatrix, table: KernelTable, mu_N: DiscreteMeasure, f: CpaFunction
) -> float:
    """max_q |Q phi(f)(q) - f(q)/N + mean(f) mu_N(q)|."""
    _same_model(Q.model, f.model)
    n = Q.model.n
    lhs = Q @ phi_N(table, mu_N, f).values
    rhs = f.values / n - f.values.mean() * mu_N.masses
    return float(np.abs(lhs - rhs).max())


def compressed_phi(table: KernelTable, mu_N: DiscreteMeasure) -> tuple[Reflector, np.ndarray]:
    """The integral operator restricted to mu_N-orthogonal functions."""
    _check_table(table, mu_N)
    refl = Reflector(mu_N.masses)
    return refl, refl.compress(table.table / table.model.n)


def eigen_phi(
    table: KernelTable, mu_N: DiscreteMeasure, k: int, *, rtol: float = CLUSTER_RTOL
) -> SpectralResult:
    """The k largest distinct eigenvalues alpha of the integral operator."""
    n = table.model.n
    if k < 1 or k > n - 1:
        raise ValueError(f"k={k} must lie in [1, N-1] = [1, {n - 1}]")
    refl, A = compressed_phi(table, mu_N)
    vals, vecs = linalg.eigh(A)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    top = max(abs(vals[0]), 1e-300)
    # Cluster on alpha relative to the largest alpha: eigh errors scale with ||A||.
    groups = cluster_values(list(vals / top), rtol)
    if vals[groups[min(k, len(groups)) - 1][-1]] <= 0.0:
        raise NumericalError("nonpositive eigenvalue of the integral operator")
    full = refl.lift(vecs)
    res = _package(table.model, vals / top, full, k, "phi", rtol)
    clusters = [
        type(c)(float(c.value * top), c.multiplicity, c.functions) for c in res.clusters
    ]
    return SpectralResult(table.model, tuple(clusters), "phi")
