"""Randomized checks of the exact identities between Q, the kernel and phi.

Every identity here holds in exact arithmetic, so the residuals only measure
floating-point error.  ``run_identity_suites`` draws seeded random models,
measures and functions and reports the worst residual per suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .graph import (
    BUILTIN_GRAPHS,
    CpaFunction,
    DensityPiece,
    DiscreteMeasure,
    MeasureSpec,
    Model,
    build_model,
    builtin_graph,
    derivative_inner,
    dx_model_measure,
    voronoi_discretize,
)
from .kernel import (
    eigen_phi,
    j_function,
    kernel_table,
    pseudoinverse_kernel,
    verify_laplacian_inverse,
)
from .laplacian import (
    KirchhoffMatrix,
    deflate,
    dirichlet_inner,
    eigen_mu,
    kirchhoff_matrix,
    rayleigh_quotient,
)

__all__ = [
    "SUITES",
    "DEFAULT_TOLERANCES",
    "SuiteResult",
    "random_cpa",
    "random_measure",
    "perturbed",
    "run_identity_suites",
    "first_failure",
    "format_table",
]

# Order matters: the first failing suite is the one reported.
SUITES = (
    "laplacian_inverse",
    "reciprocity",
    "kernel_symmetry",
    "kernel_orthogonality",
    "dirichlet_identity",
    "rayleigh_min",
)

DEFAULT_TOLERANCES: Mapping[str, float] = {
    "laplacian_inverse": 1e-9,
    "reciprocity": 1e-8,
    "kernel_symmetry": 1e-9,
    "kernel_orthogonality": 1e-9,
    "dirichlet_identity": 1e-10,
    "rayleigh_min": 1e-8,
}

MEASURE_KINDS = ("dxN", "voronoi_dx", "voronoi_density", "signed")
MIN_TARGET = 8
RAYLEIGH_SAMPLES = 5


@dataclass(frozen=True)
class SuiteResult:
    name: str
    worst: float
    tolerance: float
    trials: int

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def random_cpa(model: Model, rng: np.random.Generator) -> CpaFunction:
    """Random vertex values at branch points plus a sine bump along each segment.

    Smooth on each segment so the Dirichlet sums stay O(1) and absolute
    rounding error stays far below the identity tolerances.
    """
    values = np.zeros(model.n)
    graph = model.graph
    branch = {v: rng.uniform(-1.0, 1.0) for v in graph.vertices}
    for s, seg in enumerate(graph.segments):
        nodes = model.segment_nodes[s]
        t = np.asarray(model.segment_offsets[s]) / seg.length
        a, b = branch[seg.u], branch[seg.v]
        bump = rng.uniform(-1.0, 1.0) * np.sin(math.pi * t * rng.integers(1, 4))
        values[list(nodes)] = a + (b - a) * t + bump
    return CpaFunction(model, values)


def random_measure(
    model: Model, rng: np.random.Generator, kind: str
) -> DiscreteMeasure:
    """A unit-mass measure on the model vertices of the requested kind."""
    if kind == "dxN":
        return dx_model_measure(model)
    graph = model.graph
    if kind == "voronoi_dx":
        return voronoi_discretize(MeasureSpec.lebesgue(graph), model)
    if kind == "voronoi_density":
        # Positive affine density on each segment plus one atom at a branch vertex.
        raw = []
        for s, seg in enumerate(graph.segments):
            c0, c1 = rng.uniform(0.5, 1.5), rng.uniform(-0.4, 0.4)
            raw.append((s, seg.length, c0, c1 / seg.length))
        density_mass = sum(L * (c0 + 0.5 * c1 * L) for _, L, c0, c1 in raw)
        atom = float(rng.uniform(0.0, 0.3))
        scale = (1.0 - atom) / density_mass
        pieces = tuple(
            DensityPiece(s, 0.0, L, (c0 * scale, c1 * scale)) for s, L, c0, c1 in raw
        )
        spec = MeasureSpec(graph, pieces, ((graph.vertices[0], atom),), name="random")
        return voronoi_discretize(spec, model)
    if kind == "signed":
        m = rng.standard_normal(model.n)
        m += (1.0 - m.sum()) / model.n
        return DiscreteMeasure(model, m, name="signed")
    raise ValueError(f"unknown measure kind {kind!r}")


def perturbed(Q: KirchhoffMatrix, relative: float) -> KirchhoffMatrix:
    """Q with the weight of the first model edge scaled by (1 + relative)."""
    A = Q.dense().copy()
    i, j = Q.model.edges[0]
    dw = relative * Q.model.weights[0]
    A[i, i] += dw
    A[j, j] += dw
    A[i, j] -= dw
    A[j, i] -= dw
    return KirchhoffMatrix(Q.model, A)


def _rayleigh_residual(Q: KirchhoffMatrix, mu_N: DiscreteMeasure, rng) -> float:
    """Worst relative shortfall of the Rayleigh quotient below N lambda_m."""
    res = eigen_mu(Q, mu_N, min(3, Q.model.n - 2))
    m_index = int(rng.integers(1, len(res.clusters) + 1))
    cluster = res.clusters[m_index - 1]
    below = res.functions_upto(m_index)
    target = res.n * cluster.value
    worst = 0.0
    for _ in range(RAYLEIGH_SAMPLES):
        f = CpaFunction(Q.model, rng.standard_normal(Q.model.n))
        worst = max(worst, (target - rayleigh_quotient(deflate(f, below, mu_N))) / target)
    for h in cluster.functions:
        worst = max(worst, abs(rayleigh_quotient(h) - target) / target)
    return worst


def _trial(graph_name: str, n_target: int, kind: str, rng, perturb: float) -> dict[str, float]:
    model = build_model(builtin_graph(graph_name), n_target)
    mu_N = random_measure(model, rng, kind)
    Q = kirchhoff_matrix(model)
    Lp = pseudoinverse_kernel(Q)
    table = kernel_table(model, mu_N, Lp)
    out: dict[str, float] = {}

    Q_check = perturbed(Q, perturb) if perturb else Q
    f = CpaFunction(model, rng.standard_normal(model.n))
    out["laplacian_inverse"] = verify_laplacian_inverse(Q_check, table, mu_N, f)

    k = min(4, model.n - 1)
    lam = eigen_mu(Q, mu_N, k)
    alpha = eigen_phi(table, mu_N, k)
    m = min(len(lam.clusters), len(alpha.clusters))
    out["reciprocity"] = max(
        abs(alpha.clusters[i].value * model.n * lam.clusters[i].value - 1.0) for i in range(m)
    )

    G = table.table
    z, x, y = (int(v) for v in rng.integers(0, model.n, size=3))
    jy = j_function(model, z, y, Q).values[x]
    jx = j_function(model, z, x, Q).values[y]
    out["kernel_symmetry"] = max(float(np.abs(G - G.T).max()), abs(jy - jx))
    out["kernel_orthogonality"] = float(np.abs(G @ mu_N.masses).max())

    f, g = random_cpa(model, rng), random_cpa(model, rng)
    exact = derivative_inner(f, g)
    out["dirichlet_identity"] = max(
        abs(dirichlet_inner(f, g) - exact),
        abs(float(g.values @ (Q @ f.values)) - exact),
    )

    out["rayleigh_min"] = _rayleigh_residual(Q, mu_N, rng)
    return out


def run_identity_suites(
    graphs: Iterable[str] = BUILTIN_GRAPHS,
    trials: int = 200,
    max_n: int = 200,
    seed: int = 0,
    tol: float | Mapping[str, float] | None = None,
    perturb_weights: float = 0.0,
) -> list[SuiteResult]:
    """Run every suite over ``trials`` random (graph, N, measure) draws.

    Args:
        graphs: built-in graph names, used round-robin.
        trials: number of random draws; each draw feeds every suite.
        max_n: upper bound on model size.
        seed: RNG seed; the whole run is a function of it.
        tol: one tolerance for all suites, or a per-suite mapping of overrides.
        perturb_weights: if nonzero, the Kirchhoff matrix used by the
            Laplacian-inverse check has one edge weight scaled by
            (1 + perturb_weights).  Used to confirm the suite can fail.
    """
    graphs = list(graphs)
    if not graphs or trials < 1:
        raise ValueError("need at least one graph and one trial")
    if max_n < MIN_TARGET + 4:
        raise ValueError(f"max_n must be at least {MIN_TARGET + 4}")
    tols = dict(DEFAULT_TOLERANCES)
    if isinstance(tol, Mapping):
        unknown = set(tol) - set(SUITES)
        if unknown:
            raise ValueError(f"unknown suites {sorted(unknown)}")
        tols.update(tol)
    elif tol is not None:
        tols = {name: float(tol) for name in SUITES}
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(SUITES, 0.0)
    for t in range(trials):
        name = graphs[t % len(graphs)]
        kind = MEASURE_KINDS[(t // len(graphs)) % len(MEASURE_KINDS)]
        # build_model may add a few vertices for minimum subdivisions.
        n_target = int(rng.integers(MIN_TARGET, max_n - 3))
        for suite, r in _trial(name, n_target, kind, rng, perturb_weights).items():
            if not r <= worst[suite]:  # propagates NaN
                worst[suite] = r
    return [SuiteResult(s, worst[s], tols[s], trials) for s in SUITES]


def first_failure(results: Iterable[SuiteResult]) -> str | None:
    for r in results:
        if not r.passed:
            return r.name
    return None


def format_table(results: Iterable[SuiteResult]) -> str:
    lines = [f"{'suite':<22}{'worst':>12}{'tol':>10}  status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<22}{r.worst:>12.3e}{r.tolerance:>10.1e}  {status}")
    return "\n".join(lines)
