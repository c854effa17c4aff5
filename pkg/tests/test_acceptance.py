"""Acceptance gate: one PASS/FAIL line per criterion, at the agreed tolerances."""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from metrograph.convergence import fit_rate, run_schedule
from metrograph.graph import builtin_graph
from metrograph.identities import format_table, run_identity_suites
from metrograph.reference import circle_spectrum, dx_reference, extrapolate_reference, secular_spectrum

TABLE_N = [5, 10, 50, 100, 200, 500]
TABLE_VALUES = [7.6393, 8.8098, 9.6690, 9.7701, 9.8201, 9.8498]


@pytest.fixture
def report_line(capsys):
    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    return emit


@pytest.fixture(scope="module")
def table_run():
    t0 = time.perf_counter()
    rep = run_schedule(builtin_graph("interval"), 1, TABLE_N, convention="dxN")
    return rep, time.perf_counter() - t0


def test_criterion_1_interval_table(table_run, report_line):
    rep, seconds = table_run
    worst = max(abs(a - b) for a, b in zip(rep.scaled, TABLE_VALUES))
    ok = rep.ns == TABLE_N and worst < 2e-4 and seconds < 10
    report_line(1, "interval table", ok, f"max |diff| {worst:.2e} (tol 2e-4), {seconds:.2f}s (limit 10s)")
    assert ok


def test_criterion_2_limit(table_run, report_line):
    rep, _ = table_run
    ex = rep.extrapolation
    ref = dx_reference(builtin_graph("interval"), 1).entries[0].value
    ok = abs(ex.limit - math.pi**2) < 1e-3 and ref == math.pi**2
    report_line(
        2, "limit", ok,
        f"extrapolated {ex.limit:.6f} (|diff| {abs(ex.limit - math.pi**2):.1e}, tol 1e-3); reference {ref!r} == pi^2",
    )
    assert ok


def test_criterion_3_identities(report_line):
    t0 = time.perf_counter()
    results = run_identity_suites(trials=200, max_n=200, seed=0)
    seconds = time.perf_counter() - t0
    ok = all(r.passed for r in results) and seconds < 60
    summary = ", ".join(f"{r.name} {r.worst:.1e}" for r in results)
    report_line(3, "exact identities (200 trials)", ok, f"{summary}; {seconds:.1f}s (limit 60s)")
    if not ok:
        print(format_table(results))
    assert ok


def test_criterion_4_circle_multiplicity(report_line):
    schedule = [4, 8, 16, 32, 64, 128, 256]
    rep = run_schedule(builtin_graph("circle"), 1, schedule)
    mults = [r.multiplicity for r in rep.records]
    closed = circle_spectrum(1).entries[0].multiplicity
    secular = secular_spectrum(builtin_graph("circle"), 50.0).entries[0].multiplicity
    ok = rep.ns == schedule and set(mults) == {2} and closed == 2 and secular == 2 and rep.stabilization_n0 == 4
    report_line(4, "circle multiplicity", ok, f"d_1,N={mults}, closed-form {closed}, secular {secular}, N0={rep.stabilization_n0}")
    assert ok


def test_criterion_5_eigenfunction_convergence(report_line):
    rep = run_schedule(builtin_graph("interval"), 1, [50, 100, 200, 400])
    d = [r.sup_distance for r in rep.records]
    ok = all(a > b for a, b in zip(d, d[1:])) and d[-1] < 0.02
    report_line(5, "eigenfunction sup distance", ok, ", ".join(f"{x:.5f}" for x in d) + " (N=400 tol 0.02)")
    assert ok


def test_criterion_6_rate_harness(report_line):
    schedule = [50, 100, 200, 400, 800]
    g = builtin_graph("interval")
    dxn = run_schedule(g, 1, schedule, convention="dxN")
    vor = run_schedule(g, 1, schedule, convention="voronoi")
    p = fit_rate(list(zip(dxn.ns, dxn.scaled)), math.pi**2).p
    emitted = vor.rate is not None and math.isfinite(vor.rate.p) and vor.monotone is not None
    ok = abs(p - 1.0) <= 0.05 and emitted
    report_line(
        6, "rate harness", ok,
        f"dxN p={p:.4f} (target 1.00 +/- 0.05); voronoi p={vor.rate.p:.4f}, monotone={vor.monotone.monotone} (no target)",
    )
    assert ok


def test_criterion_7_secular_cross_validation(report_line):
    t0 = time.perf_counter()
    interval = secular_spectrum(builtin_graph("interval"), 26 * math.pi**2)
    k_int = np.sqrt(interval.values[:5])
    err_int = float(np.max(np.abs(k_int / (math.pi * np.arange(1, 6)) - 1)))
    circle = secular_spectrum(builtin_graph("circle"), 4 * math.pi**2 * 9.5)
    k_circ = np.sqrt(circle.values[:3])
    err_circ = float(np.max(np.abs(k_circ / (2 * math.pi * np.arange(1, 4)) - 1)))
    doubles = [e.multiplicity for e in circle.entries[:3]] == [2, 2, 2]
    star = builtin_graph("star3")
    sec = secular_spectrum(star, 30.0).entries[0].value
    rep = run_schedule(star, 1, [100, 200, 400, 800, 1600])
    ex = extrapolate_reference(list(zip(rep.ns, rep.scaled)))
    rel = abs(ex.limit - sec) / sec
    seconds = time.perf_counter() - t0
    ok = len(k_int) == 5 and err_int < 1e-8 and err_circ < 1e-8 and doubles and rel < 1e-4 and seconds < 30
    report_line(
        7, "secular cross-validation", ok,
        f"interval rel {err_int:.1e}, circle rel {err_circ:.1e} doubles={doubles}, "
        f"star3 secular {sec:.7f} vs extrapolated {ex.limit:.7f} (rel {rel:.1e}, tol 1e-4); {seconds:.1f}s (limit 30s)",
    )
    assert ok
