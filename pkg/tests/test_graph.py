from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from metrograph.errors import GraphFormatError, ModelMismatchError
from metrograph.graph import (
    BUILTIN_GRAPHS,
    CpaFunction,
    DensityPiece,
    DiscreteMeasure,
    GraphPoint,
    MeasureSpec,
    build_model,
    builtin_graph,
    cpa_eval,
    dx_model_measure,
    inner_L2_exact,
    inner_l2,
    integral_dx,
    interval_model,
    load_document,
    load_graph,
    resolve_graph,
    voronoi_discretize,
)


def test_single_segment_document():
    g = load_graph({"vertices": ["a", "b"], "segments": [{"u": "a", "v": "b", "length": 1.0}]})
    assert g.total_length == 1.0
    assert g.valence("a") == g.valence("b") == 1


def test_normalize_halves_two_segments():
    doc = {
        "normalize": True,
        "vertices": ["a", "b"],
        "segments": [{"u": "a", "v": "b", "length": 2.0}, {"u": "a", "v": "b", "length": 2.0}],
    }
    g = load_graph(doc)
    assert [s.length for s in g.segments] == [0.5, 0.5]
    assert g.normalized
    assert abs(g.total_length - 1.0) < 1e-12


@pytest.mark.parametrize(
    "doc, needle",
    [
        ({"vertices": ["a", "b"], "segments": [{"u": "a", "v": "b", "length": 0.0}]}, "nonpositive length"),
        ({"vertices": ["a", "b", "c", "d"], "segments": [{"u": "a", "v": "b", "length": 1}, {"u": "c", "v": "d", "length": 1}]}, "disconnected"),
        ({"vertices": ["a", "b"], "segments": [{"u": "a", "v": "x", "length": 1}]}, "segments[0]"),
    ],
)
def test_document_errors_carry_location(doc, needle):
    with pytest.raises(GraphFormatError, match=needle.replace("[", r"\[").replace("]", r"\]")):
        load_graph(doc)


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"vertices": ["a",\n  }')
    with pytest.raises(GraphFormatError, match="line 2"):
        load_graph(p)


def test_missing_file_is_format_error(tmp_path):
    with pytest.raises(GraphFormatError):
        resolve_graph(tmp_path / "nope.json")


def test_document_measure_round_trip():
    doc = {
        "vertices": ["a", "b"],
        "segments": [{"u": "a", "v": "b", "length": 1.0}],
        "measure": {
            "atoms": [{"at": "a", "mass": 0.25}],
            "density": [{"segment": 0, "pieces": [{"from": 0.0, "to": 1.0, "coeffs": [0.75]}]}],
        },
    }
    d = load_document(json.dumps(doc))
    assert d.measure is not None
    assert d.measure.total_mass == pytest.approx(1.0, abs=1e-12)
    assert not d.measure.is_lebesgue


def test_normalize_keeps_measure_masses():
    doc = {
        "normalize": True,
        "vertices": ["a", "b"],
        "segments": [{"u": "a", "v": "b", "length": 4.0}],
        "measure": {"density": [{"segment": 0, "pieces": [
            {"from": 0.0, "to": 2.0, "coeffs": [0.0, 0.25]},
            {"from": 2.0, "to": 4.0, "coeffs": [0.25]},
        ]}]},
    }
    m = load_document(doc).measure
    assert m.total_mass == pytest.approx(1.0, abs=1e-12)
    assert m.density_integral(0, 0.0, 0.5) == pytest.approx(0.5 * 0.25 * 4, abs=1e-12)


def test_interval_five_vertices():
    m = build_model(builtin_graph("interval"), 5)
    assert m.n == 5 and m.n_edges == 4
    np.testing.assert_allclose(m.lengths, 0.25)
    np.testing.assert_allclose(m.weights, 4.0)


def test_circle_four_vertices_is_simple_cycle():
    m = build_model(builtin_graph("circle"), 4)
    assert m.n == 4 and m.n_edges == 4
    np.testing.assert_allclose(m.lengths, 0.25)
    pairs = {tuple(sorted(e)) for e in m.edges.tolist()}
    assert len(pairs) == 4 and all(a != b for a, b in pairs)


def test_must_include_point_becomes_vertex():
    p = GraphPoint(0, 1 / 3)
    m = build_model(builtin_graph("interval"), 3, [p])
    assert m.points[m.index_of(p)].t == pytest.approx(1 / 3, abs=1e-15)


def test_too_many_mandatory_points():
    pts = [GraphPoint(0, t) for t in (0.1, 0.2, 0.3)]
    with pytest.raises(ValueError):
        build_model(builtin_graph("interval"), 3, pts)


@pytest.mark.parametrize("name", BUILTIN_GRAPHS)
@pytest.mark.parametrize("n_target", [4, 9, 30, 101])
def test_model_invariants(name, n_target):
    g = builtin_graph(name)
    m = build_model(g, n_target)
    np.testing.assert_array_equal(m.weights, 1.0 / m.lengths)
    for s, seg in enumerate(g.segments):
        assert abs(m.lengths[m.edge_segment == s].sum() - seg.length) < 1e-12
    pairs = [tuple(sorted(e)) for e in m.edges.tolist()]
    assert len(set(pairs)) == len(pairs)
    assert all(a != b for a, b in pairs)
    for v in g.vertices:
        m.index_of(v)
    assert m.mesh_size * n_target <= 2 * max(1, len(g.segments))


def test_interval_model_exact_count():
    for n in (2, 5, 17, 500):
        m = interval_model(n)
        assert m.n == n
        np.testing.assert_allclose(m.lengths, 1 / (n - 1))


def test_dx_model_measure():
    np.testing.assert_allclose(dx_model_measure(interval_model(5)).masses, 0.2)
    c = dx_model_measure(build_model(builtin_graph("circle"), 4))
    np.testing.assert_allclose(c.masses, 0.25)
    assert c.total_mass == pytest.approx(1.0)


def test_voronoi_lebesgue_half_cells():
    m = interval_model(5)
    mu = voronoi_discretize(MeasureSpec.lebesgue(m.graph), m)
    np.testing.assert_allclose(mu.masses[[m.index_of("a"), *range(2, 5), m.index_of("b")]], [1 / 8, 1 / 4, 1 / 4, 1 / 4, 1 / 8])


def test_voronoi_atom_capture():
    m = interval_model(5)
    mu = voronoi_discretize(MeasureSpec(m.graph, (), (("a", 1.0),), name="delta_a"), m)
    expected = np.zeros(5)
    expected[m.index_of("a")] = 1.0
    np.testing.assert_array_equal(mu.masses, expected)


def test_voronoi_linear_density_against_quadrature():
    g = builtin_graph("interval")
    spec = MeasureSpec(g, (DensityPiece(0, 0.0, 1.0, (0.0, 2.0)),), name="2x")
    m = interval_model(3)
    mu = voronoi_discretize(spec, m)
    quad = [integrate.quad(lambda x: 2 * x, a, b)[0] for a, b in ((0, 0.25), (0.25, 0.75), (0.75, 1))]
    by_position = [mu.masses[m.index_of(GraphPoint(0, t))] for t in (0.0, 0.5, 1.0)]
    np.testing.assert_allclose(by_position, quad, atol=1e-14)
    np.testing.assert_allclose(by_position, [1 / 16, 1 / 2, 7 / 16], atol=1e-15)


def test_voronoi_weak_convergence():
    g = builtin_graph("theta")
    pieces = tuple(DensityPiece(s, 0.0, seg.length, (1.0, 0.5)) for s, seg in enumerate(g.segments))
    scale = 1.0 / sum(p.integral(p.start, p.stop) for p in pieces)
    spec = MeasureSpec(g, tuple(DensityPiece(p.segment, p.start, p.stop, tuple(c * scale for c in p.coeffs)) for p in pieces), name="w")
    # f = t (L - t) on each segment vanishes at both branch vertices, so it is continuous.
    poly = {s: (0.0, seg.length, -1.0) for s, seg in enumerate(g.segments)}
    exact = spec.integrate(poly)
    errs = []
    for n in (20, 80, 320):
        m = build_model(g, n)
        mu = voronoi_discretize(spec, m)
        f = np.array([p.t * (g.segments[p.segment].length - p.t) for p in m.points])
        errs.append(abs(mu.masses @ f - exact))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 5.0 / 320**2 * 10


def test_voronoi_rejects_other_graph():
    with pytest.raises(ModelMismatchError):
        voronoi_discretize(MeasureSpec.lebesgue(builtin_graph("circle")), interval_model(4))


def test_cpa_eval_examples():
    m = interval_model(2)
    assert cpa_eval(CpaFunction(m, np.array([0.0, 1.0])), GraphPoint(0, 0.25)) == 0.25
    assert cpa_eval(CpaFunction(m, np.array([3.0, 3.0])), GraphPoint(0, 0.7)) == 3.0
    m3 = interval_model(3)
    f = CpaFunction(m3, np.zeros(3))
    vals = np.zeros(3)
    vals[m3.index_of(GraphPoint(0, 0.5))] = 1.0
    assert cpa_eval(CpaFunction(m3, vals), GraphPoint(0, 0.75)) == pytest.approx(0.5)
    assert cpa_eval(f, GraphPoint(0, 0.75)) == 0.0


def test_cpa_eval_at_vertex_is_stored_value():
    m = build_model(builtin_graph("star3"), 13)
    vals = np.random.default_rng(1).standard_normal(m.n)
    f = CpaFunction(m, vals)
    for i, p in enumerate(m.points):
        assert cpa_eval(f, p) == vals[i]


def test_inner_l2_examples():
    m = interval_model(5)
    one = CpaFunction(m, np.ones(5))
    assert inner_l2(one, one, dx_model_measure(m)) == pytest.approx(1.0)
    e0, e1 = np.eye(5)[0], np.eye(5)[1]
    nu = DiscreteMeasure(m, np.random.default_rng(0).random(5))
    assert inner_l2(CpaFunction(m, e0), CpaFunction(m, e1), nu) == 0.0
    m2 = interval_model(2)
    f = CpaFunction(m2, np.array([1.0, 2.0]))
    assert inner_l2(f, f, DiscreteMeasure(m2, np.array([0.5, 0.5]))) == pytest.approx(2.5)


def test_inner_l2_model_mismatch():
    with pytest.raises(ModelMismatchError):
        inner_l2(CpaFunction(interval_model(3), np.ones(3)), CpaFunction(interval_model(3), np.ones(3)),
                 dx_model_measure(interval_model(3)))


def test_inner_L2_exact_examples():
    m = interval_model(2)
    one = CpaFunction(m, np.ones(2))
    ramp = CpaFunction(m, np.array([0.0, 1.0]) if m.points[0].t == 0.0 else np.array([1.0, 0.0]))
    assert inner_L2_exact(one, one) == pytest.approx(1.0)
    assert inner_L2_exact(ramp, one) == pytest.approx(0.5)
    assert inner_L2_exact(ramp, ramp) == pytest.approx(1 / 3)
    assert integral_dx(ramp) == pytest.approx(0.5)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(BUILTIN_GRAPHS), st.integers(4, 40), st.integers(0, 2**31 - 1))
def test_inner_L2_exact_matches_quadrature(name, n, seed):
    m = build_model(builtin_graph(name), n)
    rng = np.random.default_rng(seed)
    f, g = CpaFunction(m, rng.standard_normal(m.n)), CpaFunction(m, rng.standard_normal(m.n))
    total = 0.0
    for s, seg in enumerate(m.graph.segments):
        for a, b in zip(m.segment_offsets[s][:-1], m.segment_offsets[s][1:]):
            total += integrate.quad(lambda t: f.evaluate(s, t) * g.evaluate(s, t), a, b, epsabs=1e-14)[0]
    assert abs(inner_L2_exact(f, g) - total) < 1e-10
