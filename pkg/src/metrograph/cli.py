"""Command-line front end.

Exit codes: 0 success, 1 numerical failure (or a failing self-test), 2 usage
or validation error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .convergence import CONVENTIONS, run_schedule
from .errors import MetrographError, NumericalError
from .graph import (
    GraphDocument,
    MeasureSpec,
    build_model,
    dx_model_measure,
    parse_measure,
    resolve_graph,
    voronoi_discretize,
)
from .identities import first_failure, format_table, run_identity_suites
from .kernel import eigen_phi, kernel_table
from .laplacian import eigen_mu, kirchhoff_matrix

__all__ = ["RunConfig", "build_parser", "main"]

OUT_ENV = "METROGRAPH_OUT"
DEFAULT_SCHEDULE = (5, 10, 50, 100, 200, 500)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    graph: str
    measure: str | None = None
    convention: str | None = None
    n: int | None = None
    k: int = 1
    operator: str = "q"
    schedule: list[int] = field(default_factory=list)
    indices: list[int] = field(default_factory=lambda: [1])
    out: str = "."
    tol: float | None = None
    jobs: int = 1
    seed: int = 0
    trials: int = 200
    perturb_weights: float = 0.0
    timing: bool = True

    def header(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _parse_schedule(text: str) -> list[int]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise UsageError("empty schedule")
    try:
        sched = [int(p) for p in parts]
    except ValueError:
        raise UsageError(f"schedule entries must be integers: {text!r}") from None
    if any(n < 2 for n in sched):
        raise UsageError("schedule entries must be >= 2")
    if any(b <= a for a, b in zip(sched, sched[1:])):
        raise UsageError("schedule must be strictly increasing")
    return sched


def _parse_index(text: str) -> list[int]:
    lo, sep, hi = text.partition("..")
    try:
        a = int(lo)
        b = int(hi) if sep else a
    except ValueError:
        raise UsageError(f"bad index range {text!r}; expected i or i..j") from None
    if a < 1 or b < a:
        raise UsageError(f"index range {text!r} is empty or starts below 1")
    return list(range(a, b + 1))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--graph", default="interval", help="built-in name or path to a graph document")
    common.add_argument("--measure", default=None, help="'dx' or a path to a measure document")
    common.add_argument("--convention", choices=CONVENTIONS, default=None)
    common.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or .)")
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument(
        "--no-timing", dest="timing", action="store_false",
        help="write zero wall times so artifacts are byte-identical across runs",
    )

    p = argparse.ArgumentParser(prog="metrograph", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("spectrum", parents=[common], help="smallest distinct eigenvalues on one model")
    sp.add_argument("--n", type=int, required=True, help="target vertex count")
    sp.add_argument("-k", type=int, default=1, help="number of distinct eigenvalues")
    sp.add_argument("--operator", choices=("q", "phi"), default="q")

    cp = sub.add_parser("converge", parents=[common], help="scaled eigenvalue along a schedule")
    cp.add_argument("--schedule", default=",".join(map(str, DEFAULT_SCHEDULE)))
    cp.add_argument("--index", default="1", help="cluster index i or range i..j")

    kp = sub.add_parser("kernel", parents=[common], help="export the Green's kernel table")
    kp.add_argument("--n", type=int, required=True)

    tp = sub.add_parser("selftest", parents=[common], help="randomized exact-identity suites")
    tp.add_argument("--trials", type=int, default=200)
    tp.add_argument(
        "--perturb-weights", type=float, default=0.0, metavar="EPS",
        help="fault injection: scale one edge weight by 1+EPS in the inverse check",
    )
    return p


def _config(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(
        command=ns.command,
        graph=ns.graph,
        measure=ns.measure,
        convention=ns.convention,
        out=ns.out or os.environ.get(OUT_ENV) or ".",
        tol=ns.tol,
        jobs=ns.jobs,
        seed=ns.seed,
        timing=ns.timing,
    )
    if ns.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if ns.command in ("spectrum", "kernel"):
        if ns.n < 2:
            raise UsageError("--n must be >= 2")
        cfg.n = ns.n
    if ns.command == "spectrum":
        if ns.k < 1:
            raise UsageError("-k must be >= 1")
        cfg.k, cfg.operator = ns.k, ns.operator
    if ns.command == "converge":
        cfg.schedule = _parse_schedule(ns.schedule)
        cfg.indices = _parse_index(ns.index)
    if ns.command == "selftest":
        if ns.trials < 1:
            raise UsageError("--trials must be >= 1")
        cfg.trials, cfg.perturb_weights = ns.trials, ns.perturb_weights
    return cfg


def _load(cfg: RunConfig) -> tuple[GraphDocument, MeasureSpec, str]:
    """Graph, measure and the effective convention."""
    doc = resolve_graph(cfg.graph)
    graph = doc.graph
    if cfg.measure is None:
        measure = doc.measure or MeasureSpec.lebesgue(graph)
    elif cfg.measure == "dx":
        measure = MeasureSpec.lebesgue(graph)
    else:
        path = Path(cfg.measure)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise UsageError(f"{path}: cannot read ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: line {exc.lineno} column {exc.colno}: parse error") from None
        if isinstance(raw, dict) and "measure" in raw:
            raw = raw["measure"]
        measure = parse_measure(raw, graph)
    convention = cfg.convention or ("dxN" if measure.is_lebesgue else "voronoi")
    if convention == "dxN" and not measure.is_lebesgue:
        raise UsageError("the dxN convention needs mu = dx; use --convention voronoi")
    return doc, measure, convention


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv_text(cfg: RunConfig, body: str) -> str:
    return f"# config: {cfg.header()}\n{body}"


def _plain(obj):
    if hasattr(obj, "item"):  # numpy scalars
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _json_text(cfg: RunConfig, payload: dict) -> str:
    doc = {"config": json.loads(cfg.header()), **payload}
    return json.dumps(doc, indent=2, default=_plain) + "\n"


def _model_and_measure(cfg: RunConfig):
    doc, measure, convention = _load(cfg)
    model = build_model(doc.graph, cfg.n, measure.breakpoints())
    if convention == "dxN":
        mu_N = dx_model_measure(model)
    else:
        mu_N = voronoi_discretize(measure, model)
    return model, mu_N


def cmd_spectrum(cfg: RunConfig) -> int:
    model, mu_N = _model_and_measure(cfg)
    if cfg.k > model.n - 1:
        raise UsageError(f"-k {cfg.k} exceeds N-1 = {model.n - 1}")
    Q = kirchhoff_matrix(model)
    lam = eigen_mu(Q, mu_N, cfg.k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if cfg.operator == "q":
        result = lam
        w.writerow(["index", "lambda", "scaled", "multiplicity"])
        for i, c in enumerate(lam.clusters, 1):
            w.writerow([i, repr(c.value), repr(model.n * c.value), c.multiplicity])
    else:
        result = eigen_phi(kernel_table(model, mu_N), mu_N, cfg.k)
        w.writerow(["index", "alpha", "inv_scaled_lambda", "multiplicity"])
        # 1/(N lambda) from the Laplacian side, so the two columns cross-check.
        for i, c in enumerate(result.clusters, 1):
            inv = 1.0 / (model.n * lam.clusters[i - 1].value) if i <= len(lam.clusters) else math.nan
            w.writerow([i, repr(float(c.value)), repr(inv), c.multiplicity])
    out = Path(cfg.out)
    _write(out / "spectrum.json", _json_text(cfg, {"measure": mu_N.name, "result": result.to_dict()}))
    _write(out / "spectrum.csv", _csv_text(cfg, buf.getvalue()))
    print(f"N={model.n} measure={mu_N.name} operator={cfg.operator}")
    print(buf.getvalue(), end="")
    return 0


def cmd_kernel(cfg: RunConfig) -> int:
    model, mu_N = _model_and_measure(cfg)
    table = kernel_table(model, mu_N)
    _write(Path(cfg.out) / "kernel.csv", _csv_text(cfg, table.to_csv()))
    print(f"N={model.n} C_nu={table.constant:.12g} anchor_spread={table.anchor_spread:.3g}")
    return 0


def cmd_converge(cfg: RunConfig) -> int:
    doc, measure, convention = _load(cfg)
    out = Path(cfg.out)
    for i in cfg.indices:
        report = run_schedule(
            doc.graph,
            i,
            cfg.schedule,
            measure=None if measure.is_lebesgue else measure,
            convention=convention,
            jobs=cfg.jobs,
        )
        if not report.records:
            raise NumericalError(f"cluster {i} not resolvable at any schedule point")
        if not cfg.timing:
            for r in report.records:
                r.seconds = 0.0
        stem = f"converge_i{i}"
        _write(out / f"{stem}.json", _json_text(cfg, {"report": report.to_dict(include_timing=cfg.timing)}))
        _write(out / f"{stem}.csv", _csv_text(cfg, report.to_csv()))
        _write(out / f"{stem}_plot.csv", _csv_text(cfg, report.plot_data_csv()))
        _summary(report)
    return 0


def _summary(report) -> None:
    last = report.records[-1]
    ref = report.reference
    print(f"index {report.index} on {report.graph_id} ({report.convention}, mu={report.measure_id})")
    for r in report.records:
        print(f"  N={r.n:<6d} scaled={r.scaled:.6f}  mult={r.multiplicity}")
    if ref is not None:
        print(f"  limit={ref.value:.8f} ({ref.provenance}) last error={abs(ref.value - last.scaled):.3e}")
    if report.extrapolation is not None:
        ex = report.extrapolation
        print(f"  extrapolated={ex.limit:.8f} +/- {ex.uncertainty:.1e}")
    if report.rate is not None:
        print(f"  fitted rate p={report.rate.p:.4f} M={report.rate.M:.4g}")
    if report.monotone is not None:
        print(f"  monotone={report.monotone.monotone}")
    for note in report.notes:
        print(f"  note: {note}")


def cmd_selftest(cfg: RunConfig) -> int:
    results = run_identity_suites(
        trials=cfg.trials, seed=cfg.seed, tol=cfg.tol, perturb_weights=cfg.perturb_weights
    )
    print(format_table(results))
    bad = first_failure(results)
    if bad is not None:
        print(f"first failing identity: {bad}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "spectrum": cmd_spectrum,
    "converge": cmd_converge,
    "kernel": cmd_kernel,
    "selftest": cmd_selftest,
}


def main(argv: Sequence[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = _config(ns)
        return COMMANDS[cfg.command](cfg)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (UsageError, MetrographError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
