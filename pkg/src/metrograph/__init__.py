"""Metrized graphs, their discrete models, and spectral convergence studies."""

from __future__ import annotations

from .convergence import ConvergenceReport, fit_rate, run_schedule
from .errors import GraphFormatError, MetrographError, ModelMismatchError, NumericalError
from .graph import (
    CpaFunction,
    DiscreteMeasure,
    MeasureSpec,
    MetrizedGraph,
    Model,
    build_model,
    builtin_graph,
    load_document,
    load_graph,
    voronoi_discretize,
)
from .kernel import eigen_phi, kernel_table, phi_N
from .laplacian import SpectralResult, eigen_mu, kirchhoff_matrix
from .reference import dx_reference, extrapolate_reference, secular_spectrum

__all__ = [
    "ConvergenceReport",
    "CpaFunction",
    "DiscreteMeasure",
    "GraphFormatError",
    "MeasureSpec",
    "MetrizedGraph",
    "MetrographError",
    "Model",
    "ModelMismatchError",
    "NumericalError",
    "SpectralResult",
    "build_model",
    "builtin_graph",
    "dx_reference",
    "eigen_mu",
    "eigen_phi",
    "extrapolate_reference",
    "fit_rate",
    "kernel_table",
    "kirchhoff_matrix",
    "load_document",
    "load_graph",
    "phi_N",
    "run_schedule",
    "secular_spectrum",
    "voronoi_discretize",
]
