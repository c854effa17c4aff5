"""Continuous Laplacian spectra used as ground truth.

For mu = dx an eigenfunction is ``a_e cos(k t) + b_e sin(k t)`` on each
segment with lambda = k^2, continuous at vertices with outgoing derivatives
summing to zero.  ``secular_spectrum`` finds the k where that linear system
is singular; the interval and circle have closed forms.  For other measures
only an extrapolated estimate is available.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .errors import NumericalError
from .graph import CpaFunction, MetrizedGraph, Model, builtin_graph

__all__ = [
    "TrigEigenfunction",
    "ContinuousEigen",
    "ContinuousSpectrum",
    "Extrapolation",
    "interval_spectrum",
    "circle_spectrum",
    "secular_matrix",
    "secular_spectrum",
    "dx_reference",
    "extrapolate_reference",
]

log = logging.getLogger(__name__)

ROOT_TOL = 1e-8
MULT_TOL = 1e-6
SUSPECT_TOL = 1e-3


def _cos_integral(w: np.ndarray | float, L: float):
    """Integral of cos(w t) over [0, L], stable as w -> 0."""
    return L * np.sinc(np.asarray(w) * L / np.pi)


def _sin_integral(w: np.ndarray | float, L: float):
    """Integral of sin(w t) over [0, L], stable as w -> 0."""
    w = np.asarray(w)
    return 0.5 * w * L * L * np.sinc(w * L / (2 * np.pi)) ** 2


@dataclass(frozen=True, eq=False)
class TrigEigenfunction:
    """``coeffs[e] = (a_e, b_e)``: value a cos(k t) + b sin(k t) on segment e."""

    graph: MetrizedGraph
    k: float
    coeffs: np.ndarray

    def evaluate(self, segment: int, t):
        a, b = self.coeffs[segment]
        return a * np.cos(self.k * np.asarray(t)) + b * np.sin(self.k * np.asarray(t))

    def end_value(self, segment: int, end: int) -> float:
        t = 0.0 if end == 0 else self.graph.segments[segment].length
        return float(self.evaluate(segment, t))

    def outward_derivative(self, segment: int, end: int) -> float:
        a, b = self.coeffs[segment]
        k = self.k
        if end == 0:
            return float(b * k)
        L = self.graph.segments[segment].length
        return float(-(-a * k * math.sin(k * L) + b * k * math.cos(k * L)))

    def continuity_residual(self) -> float:
        worst = 0.0
        for v in self.graph.vertices:
            vals = [self.end_value(e, end) for e, end in self.graph.incident(v)]
            worst = max(worst, max(vals) - min(vals))
        return worst

    def kirchhoff_residual(self) -> float:
        return max(
            abs(math.fsum(self.outward_derivative(e, end) for e, end in self.graph.incident(v)))
            for v in self.graph.vertices
        )

    def mean(self) -> float:
        total = 0.0
        for (a, b), seg in zip(self.coeffs, self.graph.segments):
            total += a * _cos_integral(self.k, seg.length) + b * _sin_integral(self.k, seg.length)
        return float(total)

    def l2_inner(self, other: TrigEigenfunction) -> float:
        """Exact L2(dx) inner product via product-to-sum identities."""
        k1, k2 = self.k, other.k
        total = 0.0
        for (a1, b1), (a2, b2), seg in zip(self.coeffs, other.coeffs, self.graph.segments):
            L = seg.length
            cm, cp = _cos_integral(k1 - k2, L), _cos_integral(k1 + k2, L)
            sm, sp = _sin_integral(k1 - k2, L), _sin_integral(k1 + k2, L)
            cc = 0.5 * (cm + cp)
            ss = 0.5 * (cm - cp)
            sc = 0.5 * (sp + sm)  # sin(k1 t) cos(k2 t)
            cs = 0.5 * (sp - sm)  # cos(k1 t) sin(k2 t)
            total += a1 * a2 * cc + b1 * b2 * ss + b1 * a2 * sc + a1 * b2 * cs
        return float(total)

    def sample(self, model: Model) -> CpaFunction:
        """Vertex values on ``model``, extended affinely."""
        vals = np.array([float(self.evaluate(p.segment, p.t)) for p in model.points])
        return CpaFunction(model, vals)

    def to_dict(self) -> dict:
        return {"k": self.k, "coeffs": self.coeffs.tolist()}


@dataclass(frozen=True, eq=False)
class ContinuousEigen:
    value: float
    multiplicity: int
    functions: tuple[TrigEigenfunction, ...] = ()

    @property
    def alpha(self) -> float:
        return 1.0 / self.value


@dataclass(frozen=True, eq=False)
class ContinuousSpectrum:
    graph: MetrizedGraph | None
    entries: tuple[ContinuousEigen, ...]
    provenance: str
    notes: tuple[str, ...] = field(default=())

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])

    def to_dict(self, include_functions: bool = True) -> dict:
        out = {"provenance": self.provenance, "clusters": [], "notes": list(self.notes)}
        for e in self.entries:
            item = {"lambda": e.value, "alpha": e.alpha, "multiplicity": e.multiplicity}
            if include_functions:
                item["eigenfunctions"] = [f.to_dict() for f in e.functions]
            out["clusters"].append(item)
        return out


def _single_segment(graph: MetrizedGraph | None, default: str, loop: bool) -> MetrizedGraph:
    graph = graph or builtin_graph(default)
    if len(graph.segments) != 1 or graph.segments[0].is_loop != loop:
        kind = "loop" if loop else "non-loop segment"
        raise ValueError(f"expected a graph with a single {kind}")
    return graph


def interval_spectrum(count: int, graph: MetrizedGraph | None = None) -> ContinuousSpectrum:
    """lambda_n = (n pi / L)^2, eigenfunction sqrt(2/L) cos(n pi t / L)."""
    graph = _single_segment(graph, "interval", loop=False)
    L = graph.segments[0].length
    amp = math.sqrt(2.0 / L)
    entries = []
    for n in range(1, count + 1):
        k = n * math.pi / L
        f = TrigEigenfunction(graph, k, np.array([[amp, 0.0]]))
        entries.append(ContinuousEigen(k * k, 1, (f,)))
    return ContinuousSpectrum(graph, tuple(entries), "closed-form")


def circle_spectrum(count: int, graph: MetrizedGraph | None = None) -> ContinuousSpectrum:
    """lambda_n = (2 pi n / L)^2 with the cosine/sine pair as eigenfunctions."""
    graph = _single_segment(graph, "circle", loop=True)
    L = graph.segments[0].length
    amp = math.sqrt(2.0 / L)
    entries = []
    for n in range(1, count + 1):
        k = 2 * math.pi * n / L
        fc = TrigEigenfunction(graph, k, np.array([[amp, 0.0]]))
        fs = TrigEigenfunction(graph, k, np.array([[0.0, amp]]))
        entries.append(ContinuousEigen(k * k, 2, (fc, fs)))
    return ContinuousSpectrum(graph, tuple(entries), "closed-form")


def secular_matrix(graph: MetrizedGraph, k: float) -> np.ndarray:
    """Vertex conditions on the stacked (a_e, b_e); derivative rows divided by k."""
    n_seg = len(graph.segments)
    rows = []
    for v in graph.vertices:
        ends = graph.incident(v)
        val_rows, der_rows = [], []
        for e, end in ends:
            L = graph.segments[e].length
            val = np.zeros(2 * n_seg)
            der = np.zeros(2 * n_seg)
            if end == 0:
                val[2 * e] = 1.0
                der[2 * e + 1] = 1.0
            else:
                c, s = math.cos(k * L), math.sin(k * L)
                val[2 * e : 2 * e + 2] = (c, s)
                der[2 * e : 2 * e + 2] = (s, -c)
            val_rows.append(val)
            der_rows.append(der)
        for r in val_rows[1:]:
            rows.append(val_rows[0] - r)
        rows.append(np.sum(der_rows, axis=0))
    return np.array(rows)


def _sigma(graph: MetrizedGraph, k: float) -> np.ndarray:
    return np.linalg.svd(secular_matrix(graph, k), compute_uv=False)


def _scale(graph: MetrizedGraph) -> float:
    # Entries are bounded by 1 and a vertex row sums at most max-valence of them;
    # sigma_max itself is useless as a scale (the loop matrix is a scaled rotation).
    return math.sqrt(2.0 * max(graph.valence(v) for v in graph.vertices))


def _scan(graph: MetrizedGraph, lo: float, hi: float, step: float, depth: int) -> list[float]:
    ks = np.arange(lo, hi + step, step)
    smin = np.array([_sigma(graph, k)[-1] for k in ks])
    roots = []
    for i in range(1, len(ks) - 1):
        if not (smin[i] < smin[i - 1] and smin[i] <= smin[i + 1]):
            continue
        res = optimize.minimize_scalar(
            lambda k: _sigma(graph, k)[-1],
            bracket=(ks[i - 1], ks[i], ks[i + 1]),
            method="golden",
            options={"xtol": 1e-15},
        )
        k = float(res.x)
        sig = _sigma(graph, k)
        scale = _scale(graph)
        if sig[-1] >= ROOT_TOL * scale:
            continue
        small = sig < MULT_TOL * scale
        # Entries move at rate <= max length in k, so a second root within two
        # grid steps keeps another singular value below this bound.
        near = max(SUSPECT_TOL, 2.0 * step * graph.max_length) * scale
        suspect = np.count_nonzero(sig < near) > np.count_nonzero(small)
        if suspect and depth < 3:
            log.warning(
                "near-degenerate roots around k=%.6g; refining grid (depth %d)", k, depth + 1
            )
            roots.extend(_scan(graph, ks[i - 1], ks[i + 1], step / 20, depth + 1))
            continue
        roots.append(k)
    return roots


def _orthonormalize(funcs: list[TrigEigenfunction]) -> list[TrigEigenfunction]:
    gram = np.array([[f.l2_inner(g) for g in funcs] for f in funcs])
    chol = np.linalg.cholesky(gram)
    inv = np.linalg.inv(chol).T  # columns give orthonormal combinations
    stacked = np.stack([f.coeffs for f in funcs])  # (m, E, 2)
    out = []
    for col in inv.T:
        coeffs = np.tensordot(col, stacked, axes=1)
        flat = coeffs.ravel()
        if flat[np.argmax(np.abs(flat) >= np.abs(flat).max() * (1 - 1e-9))] < 0:
            coeffs = -coeffs
        out.append(TrigEigenfunction(funcs[0].graph, funcs[0].k, coeffs))
    return out


def secular_spectrum(
    graph: MetrizedGraph,
    lambda_max: float,
    count: int | None = None,
    grid_step: float | None = None,
) -> ContinuousSpectrum:
    """Eigenvalues of the dx-Laplacian on ``graph`` up to ``lambda_max``.

    Roots are local minima of the smallest singular value of
    :func:`secular_matrix` on a grid in k, refined by golden-section search;
    multiplicities are the number of near-zero singular values at the root.
    """
    if not math.isfinite(lambda_max) or lambda_max <= 0:
        raise ValueError("lambda_max must be positive and finite")
    step = grid_step or 0.01 * math.pi / graph.max_length
    k_max = math.sqrt(lambda_max)
    roots = sorted(_scan(graph, step, k_max, step, 0))
    merged: list[float] = []
    for k in roots:
        if merged and abs(k - merged[-1]) <= 1e-9 * k:
            continue
        merged.append(k)
    merged = [k for k in merged if k * k <= lambda_max]
    if not merged:
        raise NumericalError(f"no eigenvalues below lambda_max={lambda_max}")
    if count is not None:
        merged = merged[:count]
    entries = []
    for k in merged:
        M = secular_matrix(graph, k)
        _, sig, vh = np.linalg.svd(M)
        mult = int(np.count_nonzero(sig < MULT_TOL * _scale(graph)))
        null = vh[-mult:]
        funcs = [TrigEigenfunction(graph, k, v.reshape(-1, 2)) for v in null]
        funcs = _orthonormalize(funcs)
        for f in funcs:
            if abs(f.mean()) > 1e-8:
                raise NumericalError(f"eigenfunction at k={k} has nonzero mean {f.mean():.3g}")
        entries.append(ContinuousEigen(k * k, mult, tuple(funcs)))
    return ContinuousSpectrum(graph, tuple(entries), "secular")


def dx_reference(graph: MetrizedGraph, count: int) -> ContinuousSpectrum:
    """First ``count`` dx-eigenvalues: closed form when known, else secular."""
    if len(graph.segments) == 1:
        if graph.segments[0].is_loop:
            return circle_spectrum(count, graph)
        return interval_spectrum(count, graph)
    # Weyl: lambda_n grows like (n pi / total length)^2.
    lam = (math.pi * (count + 1) / graph.total_length) ** 2
    while True:
        spec = secular_spectrum(graph, lam)
        if len(spec.entries) >= count:
            entries = spec.entries[:count]
            return ContinuousSpectrum(graph, entries, spec.provenance, spec.notes)
        lam *= 2.0


@dataclass(frozen=True)
class Extrapolation:
    limit: float
    uncertainty: float
    rate: float
    coefficient: float
    low_confidence: bool
    note: str = ""

    def __iter__(self):
        return iter((self.limit, self.uncertainty))


def _fit_fixed_rate(ns: np.ndarray, ys: np.ndarray, p: float):
    A = np.column_stack([np.ones_like(ns), -(ns ** -p)])
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = ys - A @ coef
    return coef, float(resid @ resid), A


def _fit_power_law(ns: np.ndarray, ys: np.ndarray, p_bounds: tuple[float, float]):
    grid = np.linspace(*p_bounds, 251)
    rss = [_fit_fixed_rate(ns, ys, p)[1] for p in grid]
    j = int(np.argmin(rss))
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(
        lambda p: _fit_fixed_rate(ns, ys, p)[1],
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-10},
    )
    p = float(res.x) if res.fun <= rss[j] else float(grid[j])
    coef, r, A = _fit_fixed_rate(ns, ys, p)
    return p, coef, r, A


def extrapolate_reference(
    scaled_values: Sequence[tuple[float, float]],
    p_bounds: tuple[float, float] = (0.5, 3.0),
    tail_ratio: float = 10.0,
) -> Extrapolation:
    """Fit ``y = L - c N^-p`` and return the limit L.

    Only the asymptotic tail enters the fit: points with
    ``N >= N_max / tail_ratio``, and never fewer than three.  L and c enter
    linearly, so they are profiled out and p is searched on a grid followed by
    a bounded scalar refinement.  The uncertainty adds twice the standard
    error of L to the shift of L when the last three points are fitted alone.
    """
    pts = sorted((float(n), float(y)) for n, y in scaled_values)
    if len(pts) < 3:
        raise ValueError("need at least 3 points to extrapolate")
    ns = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if np.any(np.diff(ns) <= 0):
        raise ValueError("N values must be strictly increasing")
    spread = float(np.ptp(ys))
    if spread <= 1e-12 * max(1.0, abs(ys[-1])):
        return Extrapolation(
            float(ys[-1]), 0.0, float("nan"), 0.0, True, "constant sequence; rate unidentifiable"
        )
    keep = ns >= ns[-1] / tail_ratio
    if np.count_nonzero(keep) < 3:
        keep = np.arange(len(ns)) >= len(ns) - 3
    tn, ty = ns[keep], ys[keep]
    p, coef, r, A = _fit_power_law(tn, ty, p_bounds)
    dof = max(len(tn) - 3, 1)
    cov = (r / dof) * np.linalg.pinv(A.T @ A)
    half = 2.0 * math.sqrt(max(float(cov[0, 0]), 0.0))
    if len(tn) > 3:
        half += float(abs(_fit_power_law(tn[-3:], ty[-3:], p_bounds)[1][0] - coef[0]))
    notes = []
    if min(abs(p - p_bounds[0]), abs(p - p_bounds[1])) < 1e-6:
        notes.append("rate at search bound")
    steps = np.diff(ys)
    if np.any(steps > 0) and np.any(steps < 0):
        notes.append("non-monotone input")
    tail_spread = max(float(np.ptp(ty)), 1e-300)
    rel_fit = math.sqrt(r / len(tn)) / tail_spread
    if rel_fit > 1e-2:
        notes.append(f"poor fit (relative rms {rel_fit:.2g})")
    return Extrapolation(float(coef[0]), half, p, float(coef[1]), bool(notes), "; ".join(notes))
