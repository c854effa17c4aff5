from __future__ import annotations

import math

import numpy as np
import pytest

from metrograph.errors import NumericalError
from metrograph.graph import MetrizedGraph, Segment, builtin_graph
from metrograph.reference import (
    circle_spectrum,
    dx_reference,
    extrapolate_reference,
    interval_spectrum,
    secular_spectrum,
)


def _fd_checks(f, lam, seg, L, h=1e-4):
    """Central-difference -f'' - lam f at interior sample points."""
    t = np.linspace(0.1 * L, 0.9 * L, 9)
    second = (f.evaluate(seg, t + h) - 2 * f.evaluate(seg, t) + f.evaluate(seg, t - h)) / h**2
    return np.abs(-second - lam * f.evaluate(seg, t)).max() / max(1.0, lam)


def test_interval_closed_form_values():
    spec = interval_spectrum(3)
    assert spec.entries[0].value == math.pi**2
    assert spec.entries[1].value == pytest.approx(4 * math.pi**2, rel=1e-15)
    assert spec.provenance == "closed-form"
    assert spec.entries[0].alpha == 1 / math.pi**2


def test_interval_eigenfunction_conditions():
    for e in interval_spectrum(4).entries:
        (f,) = e.functions
        assert _fd_checks(f, e.value, 0, 1.0) < 1e-5
        h = 1e-6
        left = (f.evaluate(0, h) - f.evaluate(0, 0.0)) / h
        right = (f.evaluate(0, 1.0) - f.evaluate(0, 1.0 - h)) / h
        assert abs(left) < 1e-3 * e.value and abs(right) < 1e-3 * e.value
        assert abs(f.mean()) < 1e-14
        assert f.l2_inner(f) == pytest.approx(1.0, rel=1e-13)
        assert f.kirchhoff_residual() < 1e-10


def test_circle_pairs():
    spec = circle_spectrum(3)
    for n, e in enumerate(spec.entries, 1):
        assert e.value == pytest.approx(4 * math.pi**2 * n**2, rel=1e-15)
        assert e.multiplicity == 2
        fc, fs = e.functions
        assert abs(fc.mean()) < 1e-14 and abs(fs.mean()) < 1e-14
        G = np.array([[a.l2_inner(b) for b in e.functions] for a in e.functions])
        np.testing.assert_allclose(G, np.eye(2), atol=1e-13)
        assert fc.continuity_residual() < 1e-12 and fs.kirchhoff_residual() < 1e-10


def test_secular_interval_roots():
    spec = secular_spectrum(builtin_graph("interval"), 26 * math.pi**2)
    ks = np.sqrt(spec.values[:5])
    np.testing.assert_allclose(ks, math.pi * np.arange(1, 6), rtol=1e-8)
    assert spec.provenance == "secular"


def test_secular_circle_double_roots():
    spec = secular_spectrum(builtin_graph("circle"), 4 * math.pi**2 * 9.5)
    ks = np.sqrt(spec.values[:3])
    np.testing.assert_allclose(ks, 2 * math.pi * np.arange(1, 4), rtol=1e-8)
    assert [e.multiplicity for e in spec.entries[:3]] == [2, 2, 2]
    ref = circle_spectrum(3)
    np.testing.assert_allclose(spec.values[:3], ref.values, rtol=1e-8)


def test_secular_star3_first_eigenvalue():
    spec = secular_spectrum(builtin_graph("star3"), 30.0)
    e = spec.entries[0]
    assert e.value == pytest.approx((1.5 * math.pi) ** 2, rel=1e-9)
    assert e.multiplicity == 2


@pytest.mark.parametrize("name", ["star3", "theta"])
def test_secular_eigenfunction_residuals(name):
    g = builtin_graph(name)
    spec = secular_spectrum(g, 400.0)
    funcs = [f for e in spec.entries for f in e.functions]
    assert funcs
    for e in spec.entries:
        for f in e.functions:
            assert f.continuity_residual() < 1e-8
            assert f.kirchhoff_residual() < 1e-8 * max(1.0, math.sqrt(e.value))
            assert abs(f.mean()) < 1e-8
            for s, seg in enumerate(g.segments):
                assert _fd_checks(f, e.value, s, seg.length) < 1e-4
    G = np.array([[a.l2_inner(b) for b in funcs] for a in funcs])
    np.testing.assert_allclose(G, np.eye(len(funcs)), atol=1e-8)


def test_secular_no_roots():
    with pytest.raises(NumericalError, match="no eigenvalues"):
        secular_spectrum(builtin_graph("interval"), 1.0)


def test_secular_grid_refines_close_roots():
    # Unequal legs split the double root of the equal 3-star into two roots
    # closer together than one grid step.
    d = 1e-3
    segs = (Segment("c", "a", 1 / 3), Segment("c", "b", 1 / 3 + d), Segment("c", "e", 1 / 3 - d))
    g = MetrizedGraph(("c", "a", "b", "e"), segs, False, "split-star")
    spec = secular_spectrum(g, 60.0)
    assert [e.multiplicity for e in spec.entries] == [1, 1]
    k1, k2 = np.sqrt(spec.values)
    assert 0 < k2 - k1 < 0.01 * math.pi / g.max_length
    for e in spec.entries:
        (f,) = e.functions
        assert f.continuity_residual() < 1e-8


def test_dx_reference_provenance():
    assert dx_reference(builtin_graph("interval"), 2).provenance == "closed-form"
    assert dx_reference(builtin_graph("circle"), 2).entries[0].multiplicity == 2
    theta = dx_reference(builtin_graph("theta"), 3)
    assert theta.provenance == "secular" and len(theta.entries) >= 3


def test_extrapolate_exact_first_order():
    pts = [(n, 5.0 - 3.0 / n) for n in (100, 200, 300, 400, 500)]
    ex = extrapolate_reference(pts)
    assert abs(ex.limit - 5.0) < 1e-6
    assert ex.rate == pytest.approx(1.0, abs=1e-3)
    assert not ex.low_confidence


def test_extrapolate_interval_closed_form():
    ns = [5, 10, 50, 100, 200, 500]
    pts = [(n, 4 * n * (n - 1) * math.sin(math.pi / (2 * n)) ** 2) for n in ns]
    limit, unc = extrapolate_reference(pts)
    assert abs(limit - math.pi**2) < 1e-3
    assert unc < 1e-2


def test_extrapolate_constant_sequence_is_flagged():
    ex = extrapolate_reference([(n, 2.5) for n in (10, 20, 40)])
    assert ex.limit == 2.5
    assert ex.low_confidence and math.isnan(ex.rate)


def test_extrapolate_needs_three_points():
    with pytest.raises(ValueError):
        extrapolate_reference([(10, 1.0), (20, 1.5)])
