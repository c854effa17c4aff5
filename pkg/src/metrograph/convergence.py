"""Convergence studies of scaled discrete spectra along model schedules.

Two discretization conventions are supported:

``dxN``
    mu_N puts mass 1/N on every vertex (equivalently: ordinary eigenvectors
    of Q_N).  Requires mu = dx.
``voronoi``
    mu_N(p) is the mu-measure of the Voronoi cell of p.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg

from .graph import (
    CpaFunction,
    MeasureSpec,
    MetrizedGraph,
    Model,
    build_model,
    dx_model_measure,
    inner_L2_exact,
    l2_mass_matrix,
    voronoi_discretize,
)
from .laplacian import eigen_mu, kirchhoff_matrix
from .reference import ContinuousSpectrum, Extrapolation, dx_reference, extrapolate_reference

__all__ = [
    "CONVENTIONS",
    "MERGE_RTOL",
    "Alignment",
    "RateFit",
    "MonotoneCheck",
    "ConvergenceRecord",
    "ReferenceEntry",
    "ConvergenceReport",
    "run_schedule",
    "fit_rate",
    "check_monotone",
    "align_subspace",
    "stabilization_scan",
]

CONVENTIONS = ("dxN", "voronoi")
MERGE_RTOL = 1e-4
SAMPLES_PER_EDGE = 10


class Alignment(NamedTuple):
    sup_distance: float
    angles: tuple[float, ...]
    dimension_mismatch: bool = False


class RateFit(NamedTuple):
    p: float
    M: float
    residual_rms: float
    excluded: tuple[int, ...] = ()


class MonotoneCheck(NamedTuple):
    monotone: bool
    first_violation: int | None
    ties: bool = False


@dataclass
class ConvergenceRecord:
    n: int
    scaled: float
    multiplicity: int
    sup_distance: float | None = None
    angles: tuple[float, ...] = ()
    seconds: float = 0.0
    note: str = ""


@dataclass
class ReferenceEntry:
    value: float
    multiplicity: int | None
    provenance: str


@dataclass
class ConvergenceReport:
    graph_id: str
    measure_id: str
    convention: str
    index: int
    records: list[ConvergenceRecord]
    reference: ReferenceEntry | None
    extrapolation: Extrapolation | None = None
    rate: RateFit | None = None
    monotone: MonotoneCheck | None = None
    stabilization_n0: int | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def ns(self) -> list[int]:
        return [r.n for r in self.records]

    @property
    def scaled(self) -> list[float]:
        return [r.scaled for r in self.records]

    def to_dict(self, include_timing: bool = True) -> dict:
        recs = []
        for r in self.records:
            d = asdict(r)
            d["angles"] = list(r.angles)
            if not include_timing:
                d.pop("seconds")
            recs.append(d)
        return {
            "graph": self.graph_id,
            "measure": self.measure_id,
            "convention": self.convention,
            "index": self.index,
            "records": recs,
            "reference": asdict(self.reference) if self.reference else None,
            "extrapolation": (
                {
                    "limit": self.extrapolation.limit,
                    "uncertainty": self.extrapolation.uncertainty,
                    "rate": self.extrapolation.rate,
                    "low_confidence": self.extrapolation.low_confidence,
                    "note": self.extrapolation.note,
                }
                if self.extrapolation
                else None
            ),
            "rate": self.rate._asdict() if self.rate else None,
            "monotone": self.monotone._asdict() if self.monotone else None,
            "stabilization_n0": self.stabilization_n0,
            "notes": list(self.notes),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=2, default=_json_default)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "scaled", "multiplicity", "sup_distance", "seconds"])
        for r in self.records:
            w.writerow([
                r.n,
                f"{r.scaled:.10f}",
                r.multiplicity,
                "" if r.sup_distance is None else f"{r.sup_distance:.6e}",
                f"{r.seconds:.4f}",
            ])
        return buf.getvalue()

    def plot_data_csv(self) -> str:
        """log N against log |reference - N lambda| for external plotting."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "log_N", "error", "log_error"])
        if self.reference is None:
            return buf.getvalue()
        for r in self.records:
            err = abs(self.reference.value - r.scaled)
            w.writerow([
                r.n,
                f"{math.log(r.n):.10f}",
                f"{err:.10e}",
                f"{math.log(err):.10f}" if err > 0 else "",
            ])
        return buf.getvalue()


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# ---------------------------------------------------------------------------
# analysis helpers


def fit_rate(points: Sequence[tuple[float, float]], limit: float) -> RateFit:
    """Least squares of log|limit - y| on log N; p is minus the slope."""
    ns, logs, excluded = [], [], []
    for k, (n, y) in enumerate(points):
        err = abs(limit - y)
        if err == 0.0:
            excluded.append(k)
            continue
        ns.append(math.log(n))
        logs.append(math.log(err))
    if len(ns) < 3:
        raise ValueError("need at least 3 records with nonzero error to fit a rate")
    slope, intercept = np.polyfit(ns, logs, 1)
    resid = np.asarray(logs) - (slope * np.asarray(ns) + intercept)
    p = -float(slope)
    return RateFit(p + 0.0, math.exp(float(intercept)), float(np.sqrt(np.mean(resid**2))), tuple(excluded))


def check_monotone(values: Sequence[float], tol: float = 1e-12) -> MonotoneCheck:
    """Strict increase along the schedule; differences within ``tol`` count as ties."""
    if len(values) < 2:
        raise ValueError("need at least 2 values")
    ties = False
    for k in range(1, len(values)):
        step = values[k] - values[k - 1]
        if step < -tol:
            return MonotoneCheck(False, k, ties)
        if abs(step) <= tol:
            ties = True
    return MonotoneCheck(True, None, ties)


def _sampled(ref, model: Model) -> CpaFunction:
    if isinstance(ref, CpaFunction) and ref.model is model:
        return ref
    vals = [float(ref.evaluate(p.segment, p.t)) for p in model.points]
    return CpaFunction(model, np.array(vals))


def _dense_points(model: Model) -> list[tuple[int, np.ndarray]]:
    frac = np.linspace(0.0, 1.0, SAMPLES_PER_EDGE + 1)
    out = []
    for seg in range(len(model.graph.segments)):
        off = model.segment_offsets[seg]
        ts = (off[:-1, None] + np.diff(off)[:, None] * frac[None, :]).ravel()
        out.append((seg, ts))
    return out


def _sup_diff(f, g, dense) -> float:
    return max(float(np.max(np.abs(f.evaluate(s, ts) - g.evaluate(s, ts)))) for s, ts in dense)


def align_subspace(discrete: Sequence[CpaFunction], reference: Sequence) -> Alignment:
    """Compare a discrete eigenbasis with reference eigenfunctions.

    One dimension: fix the sign by the exact L2 product and take the sup-norm
    of the difference on a dense sample.  Higher dimension: principal angles
    between the spans (exact L2 on the model), and for each reference function
    the sup-norm residual of its L2 least-squares fit by the discrete span.
    """
    if not discrete or not reference:
        raise ValueError("both sets must be nonempty")
    model = discrete[0].model
    dense = _dense_points(model)
    samp = [_sampled(r, model) for r in reference]
    mismatch = len(discrete) != len(reference)
    if len(discrete) == 1 and len(reference) == 1:
        d, r = discrete[0], samp[0]
        ip = inner_L2_exact(d, r)
        sign = -1.0 if ip < 0 else 1.0
        cosang = abs(ip) / math.sqrt(inner_L2_exact(d, d) * inner_L2_exact(r, r))
        dist = _sup_diff(d * sign, reference[0], dense)
        return Alignment(dist, (math.acos(min(1.0, cosang)),), False)
    M = l2_mass_matrix(model)
    D = np.column_stack([f.values for f in discrete])
    R = np.column_stack([f.values for f in samp])
    Gd = D.T @ (M @ D)
    Gr = R.T @ (M @ R)
    Dq = linalg.solve_triangular(linalg.cholesky(Gd, lower=True), D.T, lower=True).T
    Rq = linalg.solve_triangular(linalg.cholesky(Gr, lower=True), R.T, lower=True).T
    cos = linalg.svdvals(Dq.T @ (M @ Rq))
    angles = tuple(sorted(float(math.acos(min(1.0, c))) for c in cos))
    coef = linalg.solve(Gd, D.T @ (M @ R), assume_a="pos")
    worst = 0.0
    for j, ref in enumerate(reference):
        fit = CpaFunction(model, D @ coef[:, j])
        worst = max(worst, _sup_diff(fit, ref, dense))
    return Alignment(worst, angles, mismatch)


def stabilization_scan(report: ConvergenceReport) -> int | None:
    """Smallest schedule N from which the multiplicity never changes again.

    When the reference multiplicity is trustworthy (closed form or secular),
    the stable value must also equal it.
    """
    recs = report.records
    if len(recs) < 2:
        raise ValueError("need at least 2 records")
    want = None
    ref = report.reference
    if ref is not None and ref.provenance in ("closed-form", "secular"):
        want = ref.multiplicity
    # A lone final point is no evidence of stability.
    for start in range(len(recs) - 1):
        tail = {r.multiplicity for r in recs[start:]}
        if len(tail) == 1 and (want is None or tail == {want}):
            return recs[start].n
    return None


# ---------------------------------------------------------------------------
# schedules


def _merge_groups(values: Sequence[float]) -> list[list[int]]:
    groups: list[list[int]] = []
    for k, v in enumerate(values):
        if groups and abs(v - values[groups[-1][-1]]) <= MERGE_RTOL * abs(v):
            groups[-1].append(k)
        else:
            groups.append([k])
    return groups


def _one_point(
    graph: MetrizedGraph,
    measure: MeasureSpec | None,
    convention: str,
    index: int,
    n_target: int,
    ref: ContinuousSpectrum | None,
    merge: bool,
) -> ConvergenceRecord | None:
    t0 = time.perf_counter()
    must = measure.breakpoints() if measure is not None else ()
    model = build_model(graph, n_target, must)
    Q = kirchhoff_matrix(model)
    if convention == "dxN":
        mu_N = dx_model_measure(model)
    else:
        mu_N = voronoi_discretize(measure or MeasureSpec.lebesgue(graph), model)
    if index > model.n - 1:
        return None
    extra = sum(e.multiplicity for e in ref.entries[:index]) if ref is not None else 0
    k = min(model.n - 1, index + extra + 1)
    res = eigen_mu(Q, mu_N, k)
    clusters = list(res.clusters)
    note = ""
    if merge:
        groups = _merge_groups([c.value for c in clusters])
        if any(len(g) > 1 for g in groups[:index]):
            note = "merged near-degenerate clusters"
        merged = []
        for g in groups:
            funcs = tuple(f for j in g for f in clusters[j].functions)
            vals = [clusters[j].value for j in g]
            merged.append((float(np.mean(vals)), len(funcs), funcs))
    else:
        merged = [(c.value, c.multiplicity, c.functions) for c in clusters]
    if index > len(merged):
        return None
    value, mult, funcs = merged[index - 1]
    sup, angles = None, ()
    if ref is not None and ref.entries[index - 1].functions:
        al = align_subspace(list(funcs), list(ref.entries[index - 1].functions))
        sup, angles = al.sup_distance, al.angles
    return ConvergenceRecord(
        n=model.n,
        scaled=model.n * value,
        multiplicity=mult,
        sup_distance=sup,
        angles=angles,
        seconds=time.perf_counter() - t0,
        note=note,
    )


def run_schedule(
    graph: MetrizedGraph,
    index: int,
    schedule: Sequence[int],
    *,
    measure: MeasureSpec | None = None,
    convention: str = "dxN",
    jobs: int = 1,
    graph_id: str | None = None,
) -> ConvergenceReport:
    """Track the ``index``-th distinct scaled eigenvalue along ``schedule``.

    The reference is a closed form or the secular solver when mu = dx, and
    otherwise an extrapolation of the schedule itself.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    if index < 1:
        raise ValueError("index must be >= 1")
    schedule = [int(n) for n in schedule]
    if not schedule:
        raise ValueError("empty schedule")
    if any(b <= a for a, b in zip(schedule[:-1], schedule[1:])):
        raise ValueError("schedule must be strictly increasing")
    is_dx = measure is None or measure.is_lebesgue
    if convention == "dxN" and not is_dx:
        raise ValueError("the dxN convention requires mu = dx")
    measure_id = "dx" if is_dx else (measure.name if measure else "dx")
    ref = dx_reference(graph, index) if is_dx else None
    merge = ref is not None and any(e.multiplicity > 1 for e in ref.entries[:index])

    def task(n):
        return _one_point(graph, measure, convention, index, n, ref, merge)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(task, schedule))
    else:
        results = [task(n) for n in schedule]
    notes = []
    records = []
    for n, rec in zip(schedule, results):
        if rec is None:
            notes.append(f"n_target={n}: cluster {index} not resolvable; skipped")
        else:
            records.append(rec)
    records.sort(key=lambda r: r.n)
    report = ConvergenceReport(
        graph_id=graph_id or graph.name,
        measure_id=measure_id,
        convention=convention,
        index=index,
        records=records,
        reference=None,
        notes=notes,
    )
    pts = [(r.n, r.scaled) for r in records]
    if len(records) >= 3:
        report.extrapolation = extrapolate_reference(pts)
    if ref is not None:
        e = ref.entries[index - 1]
        report.reference = ReferenceEntry(e.value, e.multiplicity, ref.provenance)
    elif report.extrapolation is not None:
        report.reference = ReferenceEntry(
            report.extrapolation.limit, records[-1].multiplicity, "extrapolated"
        )
    if report.reference is not None and len(records) >= 3:
        try:
            report.rate = fit_rate(pts, report.reference.value)
        except ValueError as exc:
            notes.append(f"rate fit skipped: {exc}")
    if len(records) >= 2:
        report.monotone = check_monotone([r.scaled for r in records])
        report.stabilization_n0 = stabilization_scan(report)
    return report
