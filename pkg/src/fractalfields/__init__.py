"""Energy forms, gradient fields, and monotone solvers on finitely ramified fractals."""

from .errors import (ConfigError, FractalFieldsError, IncompatibleDataError,
                     ResourceLimitError, SolverConvergenceError)
from .topology import (FractalSpec, LevelGraph, SPEC_REGISTRY, build_level,
                       canonical_address, cells_at_level, refine_values,
                       sierpinski_gasket, unit_interval)
from .energy import (CellMeasure, DiscreteFunction, EnergyForm, PoincareResult,
                     SpectrumResult, energy, energy_measure, extend_to_level,
                     form_for, general_energy_dominant_measure,
                     harmonic_coordinates, harmonic_extension,
                     integrate_edge_average, kusuoka_measure, laplacian,
                     lumped_inner, p_energy_from_cells, poincare_constant,
                     resistance_diameter, self_similar_measure,
                     solve_dirichlet, spectrum, vertex_weights)
from .fields import (CellGram, Divergence, FiberMetric, VectorField,
                     direct_integral_check, divergence, fiber_statistics,
                     field_inner, field_norm, gradient, kusuoka_matrices,
                     lp_field_norm, p_energy, weighted_energy_measure)
from .solvers import (ConditionReport, MonotoneCoefficient, SolveReport,
                      solve_divergence_form, solve_nondivergence,
                      solve_p_laplace, verify_conditions)
from .spde import (MomentTable, NoiseModel, PathResult, UniquenessReport,
                   moment_stats, simulate, uniqueness_probe)
from .config import config_hash, resolve_config

__version__ = "0.1.0"

__all__ = [
    "CellGram", "CellMeasure", "ConditionReport", "ConfigError",
    "DiscreteFunction", "Divergence", "EnergyForm", "FiberMetric",
    "FractalFieldsError", "FractalSpec", "IncompatibleDataError",
    "LevelGraph", "MomentTable", "MonotoneCoefficient", "NoiseModel",
    "PathResult", "PoincareResult", "ResourceLimitError", "SolveReport",
    "SolverConvergenceError", "SpectrumResult", "SPEC_REGISTRY",
    "UniquenessReport", "VectorField", "build_level", "canonical_address",
    "cells_at_level", "config_hash", "direct_integral_check", "divergence",
    "energy", "energy_measure", "extend_to_level", "fiber_statistics",
    "field_inner", "field_norm", "form_for",
    "general_energy_dominant_measure", "gradient", "harmonic_coordinates",
    "harmonic_extension", "integrate_edge_average", "kusuoka_matrices",
    "kusuoka_measure", "laplacian", "lp_field_norm", "lumped_inner",
    "moment_stats", "p_energy", "p_energy_from_cells", "poincare_constant",
    "refine_values", "resistance_diameter", "resolve_config",
    "self_similar_measure", "sierpinski_gasket", "simulate",
    "solve_dirichlet", "solve_divergence_form", "solve_nondivergence",
    "solve_p_laplace", "spectrum", "uniqueness_probe", "unit_interval",
    "vertex_weights", "verify_conditions", "weighted_energy_measure",
]
