"""Metrized graphs, their models, CPA functions and measures.

A metrized graph is stored as a list of branch vertices and segments with
lengths.  A :class:`Model` subdivides every segment into edges; functions on
the model's vertices are extended affinely along edges (:class:`CpaFunction`).
Measures are a piecewise polynomial density plus point masses at branch
vertices, so every integral used here is an exact closed form.
"""

from __future__ import annotations

import json
import math
import os
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import sparse

from .errors import GraphFormatError, ModelMismatchError, NumericalError

__all__ = [
    "Segment",
    "MetrizedGraph",
    "GraphPoint",
    "Model",
    "CpaFunction",
    "DensityPiece",
    "MeasureSpec",
    "DiscreteMeasure",
    "GraphDocument",
    "BUILTIN_GRAPHS",
    "builtin_graph",
    "resolve_graph",
    "load_graph",
    "load_document",
    "parse_measure",
    "build_model",
    "interval_model",
    "dx_model_measure",
    "voronoi_discretize",
    "cpa_eval",
    "inner_l2",
    "inner_L2_exact",
    "integral_dx",
    "derivative_inner",
    "l2_mass_matrix",
]

MASS_TOL = 1e-10
MAX_DENSITY_DEGREE = 6


@dataclass(frozen=True)
class Segment:
    u: str
    v: str
    length: float

    @property
    def is_loop(self) -> bool:
        return self.u == self.v


@dataclass(frozen=True)
class GraphPoint:
    """A point at arclength ``t`` from the ``u`` end of a segment."""

    segment: int
    t: float


@dataclass(frozen=True)
class MetrizedGraph:
    vertices: tuple[str, ...]
    segments: tuple[Segment, ...]
    normalized: bool = False
    name: str = "graph"

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "segments", tuple(self.segments))
        _validate_graph(self.vertices, self.segments)
        if self.normalized and abs(self.total_length - 1.0) > 1e-12:
            raise GraphFormatError(
                f"graph: normalized flag set but total length is {self.total_length!r}"
            )

    @property
    def total_length(self) -> float:
        return math.fsum(s.length for s in self.segments)

    @property
    def max_length(self) -> float:
        return max(s.length for s in self.segments)

    def incident(self, vertex: str) -> list[tuple[int, int]]:
        """(segment index, end) pairs at ``vertex``; end 0 is ``u``, end 1 is ``v``."""
        out = []
        for idx, seg in enumerate(self.segments):
            if seg.u == vertex:
                out.append((idx, 0))
            if seg.v == vertex:
                out.append((idx, 1))
        return out

    def valence(self, vertex: str) -> int:
        return len(self.incident(vertex))

    def is_parallel(self, index: int) -> bool:
        seg = self.segments[index]
        if seg.is_loop:
            return False
        key = frozenset((seg.u, seg.v))
        return any(
            j != index and frozenset((o.u, o.v)) == key
            for j, o in enumerate(self.segments)
        )

    def vertex_point(self, vertex: str) -> GraphPoint:
        for idx, end in self.incident(vertex):
            return GraphPoint(idx, 0.0 if end == 0 else self.segments[idx].length)
        raise KeyError(vertex)

    def vertex_at(self, point: GraphPoint) -> str | None:
        """Canonical vertex name when ``point`` is a segment endpoint."""
        seg = self.segments[point.segment]
        if point.t == 0.0:
            return seg.u
        if point.t == seg.length:
            return seg.v
        return None

    def normalize(self) -> MetrizedGraph:
        total = self.total_length
        segs = [Segment(s.u, s.v, s.length / total) for s in self.segments]
        return MetrizedGraph(self.vertices, tuple(segs), normalized=True, name=self.name)


def _validate_graph(vertices: Sequence[str], segments: Sequence[Segment]) -> None:
    if not vertices:
        raise GraphFormatError("vertices: empty vertex list")
    if len(set(vertices)) != len(vertices):
        raise GraphFormatError("vertices: duplicate vertex names")
    if not segments:
        raise GraphFormatError("segments: empty segment list")
    known = set(vertices)
    for i, seg in enumerate(segments):
        for attr in ("u", "v"):
            if getattr(seg, attr) not in known:
                raise GraphFormatError(
                    f"segments[{i}].{attr}: unknown vertex {getattr(seg, attr)!r}"
                )
        if not math.isfinite(seg.length):
            raise GraphFormatError(f"segments[{i}].length: non-finite length")
        if seg.length <= 0.0:
            raise GraphFormatError(f"segments[{i}].length: nonpositive length")
    adj: dict[str, set[str]] = {v: set() for v in vertices}
    for seg in segments:
        adj[seg.u].add(seg.v)
        adj[seg.v].add(seg.u)
    seen = {vertices[0]}
    queue = deque([vertices[0]])
    while queue:
        for nb in adj[queue.popleft()]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    if len(seen) != len(vertices):
        missing = sorted(set(vertices) - seen)
        raise GraphFormatError(f"graph: disconnected graph (unreachable: {missing})")


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True, eq=False)
class Model:
    """Vertex set on a metrized graph together with the induced weighted graph.

    Branch vertices come first, in the graph's order, followed by the interior
    subdivision points of each segment.  ``edges[k]`` joins model vertices that
    are consecutive along segment ``edge_segment[k]``; its weight is the
    reciprocal of its length.
    """

    graph: MetrizedGraph
    labels: tuple[str, ...]
    points: tuple[GraphPoint, ...]
    segment_nodes: tuple[np.ndarray, ...]
    segment_offsets: tuple[np.ndarray, ...]
    edges: np.ndarray
    edge_segment: np.ndarray
    edge_offsets: np.ndarray
    lengths: np.ndarray
    weights: np.ndarray
    _index: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def n_edges(self) -> int:
        return len(self.lengths)

    @property
    def mesh_size(self) -> float:
        return float(self.lengths.max())

    def index_of(self, where: str | GraphPoint) -> int:
        """Model vertex index of a branch vertex name or a GraphPoint."""
        if isinstance(where, GraphPoint):
            name = self.graph.vertex_at(where)
            if name is not None:
                where = name
            else:
                offsets = self.segment_offsets[where.segment]
                pos = int(np.searchsorted(offsets, where.t))
                if pos < len(offsets) and offsets[pos] == where.t:
                    return int(self.segment_nodes[where.segment][pos])
                raise KeyError(f"{where} is not a vertex of the model")
        try:
            return self._index[where]
        except KeyError:
            raise KeyError(f"{where!r} is not a vertex of the model") from None


def _assemble_model(graph: MetrizedGraph, offsets: Sequence[np.ndarray]) -> Model:
    labels = list(graph.vertices)
    points = [graph.vertex_point(v) for v in graph.vertices]
    vindex = {v: i for i, v in enumerate(graph.vertices)}
    seg_nodes = []
    edges, edge_seg, edge_off = [], [], []
    for idx, (seg, off) in enumerate(zip(graph.segments, offsets)):
        nodes = [vindex[seg.u]]
        for t in off[1:-1]:
            nodes.append(len(labels))
            labels.append(f"e{idx}@{float(t):.12g}")
            points.append(GraphPoint(idx, float(t)))
        nodes.append(vindex[seg.v])
        nodes = np.asarray(nodes, dtype=np.intp)
        for k in range(len(off) - 1):
            edges.append((nodes[k], nodes[k + 1]))
            edge_seg.append(idx)
            edge_off.append((off[k], off[k + 1]))
        nodes.setflags(write=False)
        seg_nodes.append(nodes)
    edge_off = np.asarray(edge_off, dtype=float)
    lengths = edge_off[:, 1] - edge_off[:, 0]
    weights = 1.0 / lengths
    edges = np.asarray(edges, dtype=np.intp)
    pairs = {frozenset(e) for e in map(tuple, edges)}
    if len(pairs) != len(edges) or any(len(p) == 1 for p in pairs):
        raise GraphFormatError("model: vertex set yields loop or multiple edges")
    for arr in (edges, edge_off, lengths, weights):
        arr.setflags(write=False)
    frozen_offsets = []
    for off in offsets:
        off = np.array(off, dtype=float)
        off.setflags(write=False)
        frozen_offsets.append(off)
    model = Model(
        graph=graph,
        labels=tuple(labels),
        points=tuple(points),
        segment_nodes=tuple(seg_nodes),
        segment_offsets=tuple(frozen_offsets),
        edges=edges,
        edge_segment=np.asarray(edge_seg, dtype=np.intp),
        edge_offsets=edge_off,
        lengths=lengths,
        weights=weights,
    )
    model._index.update({name: i for i, name in enumerate(graph.vertices)})
    return model


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _min_subdivisions(graph: MetrizedGraph, index: int) -> int:
    if graph.segments[index].is_loop:
        return 3
    if graph.is_parallel(index):
        return 2
    return 1


def build_model(
    graph: MetrizedGraph,
    n_target: int,
    must_include: Iterable[GraphPoint] = (),
) -> Model:
    """Equally subdivide every segment so the model has about ``n_target`` vertices.

    A model with ``k_e`` subdivisions on each segment has
    ``#branch - #segments + sum(k_e)`` vertices, so the subdivision budget
    ``n_target - #branch + #segments`` is split in proportion to length.
    Loops get at least 3 edges and parallel segments at least 2 so the model is
    a simple graph.  Points in ``must_include`` become vertices; the pieces
    between them are subdivided equally.
    """
    n_target = int(n_target)
    interior: dict[int, set[float]] = {i: set() for i in range(len(graph.segments))}
    for p in must_include:
        if not 0 <= p.segment < len(graph.segments):
            raise ValueError(f"must_include: no segment {p.segment}")
        length = graph.segments[p.segment].length
        if not 0.0 <= p.t <= length:
            raise ValueError(f"must_include: offset {p.t} outside [0, {length}]")
        if 0.0 < p.t < length:
            interior[p.segment].add(float(p.t))
    n_branch = len(graph.vertices)
    n_mandatory = n_branch + sum(len(s) for s in interior.values())
    if n_target < n_mandatory:
        raise ValueError(
            f"n_target={n_target} below the number of mandatory points ({n_mandatory})"
        )
    budget = n_target - n_branch + len(graph.segments)
    total = graph.total_length
    offsets = []
    for idx, seg in enumerate(graph.segments):
        cuts = sorted(interior[idx])
        k = max(
            _min_subdivisions(graph, idx),
            len(cuts) + 1,
            _round_half_up(budget * seg.length / total),
        )
        bounds = [0.0, *cuts, seg.length]
        pieces = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            kp = max(1, _round_half_up(k * (b - a) / seg.length))
            pts = np.linspace(a, b, kp + 1)
            pts[-1] = b
            pieces.append(pts if not pieces else pts[1:])
        off = np.concatenate(pieces)
        off[0], off[-1] = 0.0, seg.length
        offsets.append(off)
    return _assemble_model(graph, offsets)


def interval_model(n: int, graph: MetrizedGraph | None = None) -> Model:
    """Path model with exactly ``n`` vertices and ``n - 1`` equal edges."""
    if n < 2:
        raise ValueError("interval model needs at least 2 vertices")
    graph = graph or builtin_graph("interval")
    if len(graph.segments) != 1 or graph.segments[0].is_loop:
        raise ValueError("interval_model needs a single non-loop segment")
    off = np.linspace(0.0, graph.segments[0].length, n)
    off[-1] = graph.segments[0].length
    return _assemble_model(graph, [off])


# ---------------------------------------------------------------------------
# CPA functions


@dataclass(frozen=True, eq=False)
class CpaFunction:
    """Continuous piecewise affine function given by its model-vertex values."""

    model: Model
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.model.n,):
            raise ModelMismatchError(
                f"expected {self.model.n} values, got shape {vals.shape}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def evaluate(self, segment: int, t: np.ndarray | float) -> np.ndarray | float:
        """Value at arclength ``t`` along ``segment`` (vectorized in ``t``)."""
        nodes = self.model.segment_nodes[segment]
        return np.interp(t, self.model.segment_offsets[segment], self.values[nodes])

    def __call__(self, point: GraphPoint) -> float:
        return cpa_eval(self, point)

    def _coerce(self, other: Any) -> np.ndarray:
        if isinstance(other, CpaFunction):
            _same_model(self.model, other.model)
            return other.values
        return np.asarray(other, dtype=float)

    def __add__(self, other: Any) -> CpaFunction:
        return CpaFunction(self.model, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other: Any) -> CpaFunction:
        return CpaFunction(self.model, self.values - self._coerce(other))

    def __mul__(self, scalar: float) -> CpaFunction:
        return CpaFunction(self.model, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> CpaFunction:
        return CpaFunction(self.model, -self.values)


def _same_model(*models: Model) -> None:
    first = models[0]
    for m in models[1:]:
        if m is not first:
            raise ModelMismatchError("objects live on different models")


def cpa_eval(f: CpaFunction, x: GraphPoint) -> float:
    return float(f.evaluate(x.segment, x.t))


def inner_l2(f: CpaFunction, g: CpaFunction, nu: DiscreteMeasure) -> float:
    """Sum of f(q) g(q) nu(q) over model vertices."""
    _same_model(f.model, g.model, nu.model)
    return float(np.dot(f.values * g.values, nu.masses))


def inner_L2_exact(f: CpaFunction, g: CpaFunction) -> float:
    """Exact integral of f g dx; the integrand is quadratic on every edge."""
    _same_model(f.model, g.model)
    m = f.model
    fa, fb = f.values[m.edges[:, 0]], f.values[m.edges[:, 1]]
    ga, gb = g.values[m.edges[:, 0]], g.values[m.edges[:, 1]]
    per_edge = m.lengths / 6.0 * (2 * fa * ga + fa * gb + fb * ga + 2 * fb * gb)
    return float(per_edge.sum())


def integral_dx(f: CpaFunction) -> float:
    m = f.model
    return float(
        np.sum(m.lengths * 0.5 * (f.values[m.edges[:, 0]] + f.values[m.edges[:, 1]]))
    )


def derivative_inner(f: CpaFunction, g: CpaFunction) -> float:
    """Exact integral of f' g' dx from the per-edge slopes."""
    _same_model(f.model, g.model)
    m = f.model
    df = (f.values[m.edges[:, 1]] - f.values[m.edges[:, 0]]) / m.lengths
    dg = (g.values[m.edges[:, 1]] - g.values[m.edges[:, 0]]) / m.lengths
    return float(np.sum(df * dg * m.lengths))


def l2_mass_matrix(model: Model) -> sparse.csr_matrix:
    """Gram matrix of the hat functions in the L2(dx) inner product."""
    i, j = model.edges[:, 0], model.edges[:, 1]
    diag = model.lengths / 3.0
    off = model.lengths / 6.0
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    data = np.concatenate([diag, diag, off, off])
    return sparse.csr_matrix((data, (rows, cols)), shape=(model.n, model.n))


# ---------------------------------------------------------------------------
# measures


@dataclass(frozen=True)
class DensityPiece:
    """Polynomial density on ``[start, stop]`` of one segment; coeffs low to high."""

    segment: int
    start: float
    stop: float
    coeffs: tuple[float, ...]

    def integral(self, a: float, b: float) -> float:
        lo, hi = max(a, self.start), min(b, self.stop)
        if hi <= lo:
            return 0.0
        anti = npoly.polyint(self.coeffs)
        return float(npoly.polyval(hi, anti) - npoly.polyval(lo, anti))

    def abs_integral(self) -> float:
        anti = npoly.polyint(self.coeffs)
        cuts = [self.start, self.stop]
        trimmed = np.trim_zeros(np.asarray(self.coeffs, dtype=float), "b")
        if len(trimmed) > 1:
            for r in npoly.polyroots(trimmed):
                if abs(r.imag) < 1e-14 and self.start < r.real < self.stop:
                    cuts.append(r.real)
        cuts.sort()
        vals = npoly.polyval(np.asarray(cuts), anti)
        return float(np.abs(np.diff(vals)).sum())


@dataclass(frozen=True)
class MeasureSpec:
    """Signed unit-mass measure: piecewise polynomial density plus vertex atoms."""

    graph: MetrizedGraph
    pieces: tuple[DensityPiece, ...] = ()
    atoms: tuple[tuple[str, float], ...] = ()
    name: str = "custom"

    def __post_init__(self) -> None:
        object.__setattr__(self, "pieces", tuple(self.pieces))
        object.__setattr__(self, "atoms", tuple((str(a), float(c)) for a, c in self.atoms))
        by_seg: dict[int, list[DensityPiece]] = {}
        for k, p in enumerate(self.pieces):
            where = f"measure.density[{k}]"
            if not 0 <= p.segment < len(self.graph.segments):
                raise GraphFormatError(f"{where}.segment: no segment {p.segment}")
            length = self.graph.segments[p.segment].length
            tol = 1e-12 * length
            if not (-tol <= p.start < p.stop <= length + tol):
                raise GraphFormatError(
                    f"{where}: piece [{p.start}, {p.stop}] not inside [0, {length}]"
                )
            if len(p.coeffs) - 1 > MAX_DENSITY_DEGREE:
                raise GraphFormatError(
                    f"{where}.coeffs: degree above {MAX_DENSITY_DEGREE}"
                )
            by_seg.setdefault(p.segment, []).append(p)
        for seg, plist in by_seg.items():
            plist.sort(key=lambda p: p.start)
            for a, b in zip(plist[:-1], plist[1:]):
                if b.start < a.stop:
                    raise GraphFormatError(
                        f"measure.density: overlapping pieces on segment {seg}"
                    )
        for k, (at, _) in enumerate(self.atoms):
            if at not in self.graph.vertices:
                raise GraphFormatError(
                    f"measure.atoms[{k}].at: {at!r} is not a branch vertex"
                )
        total = self.total_mass
        if abs(total - 1.0) > MASS_TOL:
            raise GraphFormatError(f"measure: total mass {total!r} is not 1")

    @classmethod
    def lebesgue(cls, graph: MetrizedGraph) -> MeasureSpec:
        """dx, rescaled to unit mass when the graph is not normalized."""
        c = 1.0 / graph.total_length
        pieces = [DensityPiece(i, 0.0, s.length, (c,)) for i, s in enumerate(graph.segments)]
        return cls(graph, tuple(pieces), (), name="dx")

    @property
    def is_lebesgue(self) -> bool:
        if self.atoms:
            return False
        c = 1.0 / self.graph.total_length
        covered = {}
        for p in self.pieces:
            if any(abs(x) > 0 for x in p.coeffs[1:]) or abs(p.coeffs[0] - c) > 1e-12 * c:
                return False
            covered[p.segment] = covered.get(p.segment, 0.0) + (p.stop - p.start)
        return all(
            abs(covered.get(i, 0.0) - s.length) <= 1e-12 * s.length
            for i, s in enumerate(self.graph.segments)
        )

    def density_integral(self, segment: int, a: float, b: float) -> float:
        return math.fsum(p.integral(a, b) for p in self.pieces if p.segment == segment)

    @property
    def total_mass(self) -> float:
        dens = [p.integral(p.start, p.stop) for p in self.pieces]
        return math.fsum(dens + [c for _, c in self.atoms])

    @property
    def total_variation(self) -> float:
        return math.fsum([p.abs_integral() for p in self.pieces] + [abs(c) for _, c in self.atoms])

    def breakpoints(self) -> list[GraphPoint]:
        """Interior density breakpoints; models must contain them."""
        out = set()
        for p in self.pieces:
            length = self.graph.segments[p.segment].length
            for t in (p.start, p.stop):
                if 0.0 < t < length:
                    out.add(GraphPoint(p.segment, float(t)))
        return sorted(out, key=lambda q: (q.segment, q.t))

    def integrate(self, poly_on_segment: Mapping[int, Sequence[float]]) -> float:
        """Integral of a per-segment polynomial against this measure (exact)."""
        total = []
        for p in self.pieces:
            coeffs = poly_on_segment.get(p.segment)
            if coeffs is None:
                continue
            prod = DensityPiece(p.segment, p.start, p.stop, tuple(npoly.polymul(coeffs, p.coeffs)))
            total.append(prod.integral(p.start, p.stop))
        for at, c in self.atoms:
            pt = self.graph.vertex_point(at)
            coeffs = poly_on_segment.get(pt.segment)
            if coeffs is not None:
                total.append(c * float(npoly.polyval(pt.t, coeffs)))
        return math.fsum(total)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Signed measure supported on the vertices of a model."""

    model: Model
    masses: np.ndarray
    name: str = "custom"

    def __post_init__(self) -> None:
        m = np.array(self.masses, dtype=float)
        if m.shape != (self.model.n,):
            raise ModelMismatchError(f"expected {self.model.n} masses, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses)

    @property
    def total_variation(self) -> float:
        return float(np.abs(self.masses).sum())

    def integrate(self, f: CpaFunction) -> float:
        _same_model(f.model, self.model)
        return float(np.dot(f.values, self.masses))

    def as_function(self) -> CpaFunction:
        """The CPA function q -> nu(q)."""
        return CpaFunction(self.model, self.masses)


def dx_model_measure(model: Model) -> DiscreteMeasure:
    return DiscreteMeasure(model, np.full(model.n, 1.0 / model.n), name="dxN")


def voronoi_discretize(measure: MeasureSpec, model: Model) -> DiscreteMeasure:
    """Give each model vertex the measure of its Voronoi cell.

    Cells are bounded by edge midpoints; the cell boundaries are dx-null and
    atoms sit on branch vertices, so the midpoint split is exact.
    """
    if measure.graph != model.graph:
        raise ModelMismatchError("measure and model live on different graphs")
    masses = np.zeros(model.n)
    for (i, j), seg, (s0, s1) in zip(model.edges, model.edge_segment, model.edge_offsets):
        mid = 0.5 * (s0 + s1)
        masses[i] += measure.density_integral(seg, s0, mid)
        masses[j] += measure.density_integral(seg, mid, s1)
    for at, c in measure.atoms:
        try:
            masses[model.index_of(at)] += c
        except KeyError:
            raise ModelMismatchError(f"atom at {at!r} is not a model vertex") from None
    total = math.fsum(masses)
    if abs(total - 1.0) > MASS_TOL:
        raise NumericalError(f"discretized measure has total mass {total!r}")
    return DiscreteMeasure(model, masses, name=f"voronoi({measure.name})")


# ---------------------------------------------------------------------------
# documents and built-ins


@dataclass(frozen=True)
class GraphDocument:
    graph: MetrizedGraph
    measure: MeasureSpec | None


BUILTIN_GRAPHS = ("interval", "circle", "star3", "theta")


def builtin_graph(name: str) -> MetrizedGraph:
    """Named unit-length test graphs."""
    if name == "interval":
        return MetrizedGraph(("a", "b"), (Segment("a", "b", 1.0),), True, "interval")
    if name == "circle":
        return MetrizedGraph(("o",), (Segment("o", "o", 1.0),), True, "circle")
    if name == "star3":
        third = 1.0 / 3.0
        segs = (Segment("c", "a", third), Segment("c", "b", third), Segment("c", "d", 1.0 - 2 * third))
        return MetrizedGraph(("c", "a", "b", "d"), segs, True, "star3")
    if name == "theta":
        segs = (Segment("p", "q", 0.2), Segment("p", "q", 0.3), Segment("p", "q", 0.5))
        return MetrizedGraph(("p", "q"), segs, True, "theta")
    raise KeyError(f"unknown built-in graph {name!r}; choose from {BUILTIN_GRAPHS}")


def resolve_graph(spec: str | os.PathLike) -> GraphDocument:
    """A built-in name or a path to a graph document."""
    if isinstance(spec, str) and spec in BUILTIN_GRAPHS:
        return GraphDocument(builtin_graph(spec), None)
    return load_document(Path(spec))


def _read_source(source: str | os.PathLike | Mapping) -> tuple[Mapping, str]:
    if isinstance(source, Mapping):
        return source, "graph"
    if isinstance(source, str) and source.lstrip().startswith("{"):
        text, name = source, "graph"
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise GraphFormatError(f"{path}: cannot read ({exc.strerror})") from None
        name = path.stem
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"line {exc.lineno} column {exc.colno}: parse error ({exc.msg})") from None
    if not isinstance(doc, Mapping):
        raise GraphFormatError("document: top level must be an object")
    return doc, name


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise GraphFormatError(f"{where}: expected a number, got {value!r}")
    return float(value)


def load_document(source: str | os.PathLike | Mapping) -> GraphDocument:
    """Parse a graph document (JSON text, path, or already-decoded mapping)."""
    doc, default_name = _read_source(source)
    vertices = doc.get("vertices")
    if not isinstance(vertices, list) or not all(isinstance(v, str) for v in vertices):
        raise GraphFormatError("vertices: expected a list of names")
    raw_segments = doc.get("segments")
    if not isinstance(raw_segments, list):
        raise GraphFormatError("segments: expected a list")
    segments = []
    for i, s in enumerate(raw_segments):
        if not isinstance(s, Mapping):
            raise GraphFormatError(f"segments[{i}]: expected an object")
        for key in ("u", "v", "length"):
            if key not in s:
                raise GraphFormatError(f"segments[{i}].{key}: missing")
        segments.append(Segment(str(s["u"]), str(s["v"]), _number(s["length"], f"segments[{i}].length")))
    name = str(doc.get("name", default_name))
    graph = MetrizedGraph(tuple(vertices), tuple(segments), False, name)
    scale = 1.0
    if doc.get("normalize", False):
        scale = graph.total_length
        graph = graph.normalize()
    measure = None
    if doc.get("measure") is not None:
        measure = parse_measure(doc["measure"], graph, length_scale=scale)
    return GraphDocument(graph, measure)


def load_graph(source: str | os.PathLike | Mapping) -> MetrizedGraph:
    return load_document(source).graph


def parse_measure(raw: Mapping, graph: MetrizedGraph, length_scale: float = 1.0) -> MeasureSpec:
    """Decode the ``measure`` block of a graph document.

    ``length_scale`` is the factor the graph's lengths were divided by; offsets
    and densities are rescaled so every piece keeps its mass.
    """
    if not isinstance(raw, Mapping):
        raise GraphFormatError("measure: expected an object")
    pieces = []
    for k, block in enumerate(raw.get("density", [])):
        seg = block.get("segment")
        if isinstance(seg, bool) or not isinstance(seg, int):
            raise GraphFormatError(f"measure.density[{k}].segment: expected an integer")
        for m, pc in enumerate(block.get("pieces", [])):
            where = f"measure.density[{k}].pieces[{m}]"
            a = _number(pc.get("from"), f"{where}.from") / length_scale
            b = _number(pc.get("to"), f"{where}.to") / length_scale
            coeffs = pc.get("coeffs")
            if not isinstance(coeffs, list) or not coeffs:
                raise GraphFormatError(f"{where}.coeffs: expected a nonempty list")
            cs = tuple(
                _number(c, f"{where}.coeffs[{d}]") * length_scale ** (d + 1)
                for d, c in enumerate(coeffs)
            )
            pieces.append(DensityPiece(seg, a, b, cs))
    atoms = []
    for k, at in enumerate(raw.get("atoms", [])):
        atoms.append((str(at.get("at")), _number(at.get("mass"), f"measure.atoms[{k}].mass")))
    return MeasureSpec(graph, tuple(pieces), tuple(atoms), name=str(raw.get("name", "custom")))
