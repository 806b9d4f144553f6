"""Numerical laboratory for boundary layers in a consumption chemotaxis system.

Builds the outer/boundary-layer profile hierarchy of the 1D chemotaxis
system with small chemical diffusion, solves the full system on
layer-resolving meshes, assembles the composite approximation, and verifies
convergence-rate and structural invariants across a diffusion sweep.
"""
from __future__ import annotations

from .composite import (
    CompositeApproximation,
    ErrorMetrics,
    build_composite,
    decomposition_residual,
    homogenizer_b_phi,
    homogenizer_b_v,
    theorem_errors,
)
from .correctors import (
    CorrectorSeries,
    build_corrector_series,
    corrector_bound_check,
    corrector_value,
)
from .errors import PipelineError
from .full_solver import (
    FullSolution,
    boundary_ode_check,
    cell_mass,
    half_height_width,
    solve_full,
)
from .harness import (
    ConvergenceReport,
    Hierarchy,
    PipelineRun,
    RunDiagnostics,
    StudyConfig,
    StudyRow,
    build_hierarchy,
    canonical_config,
    config_sha256,
    dt_for,
    initial_data_for,
    load_config,
    parse_report_csv,
    rate_fit,
    render_csv,
    run_pipeline,
    run_study,
    save_config,
    write_report_csv,
    write_report_json,
)
from .layer_solver import (
    GapSeries,
    LayerProfileSet,
    LayerSolveResult,
    SecondOrderResult,
    layer_density,
    layer_gap,
    phi_layer_first,
    phi_origin_series,
    solve_layer_leading,
    solve_layer_second,
)
from .outer_solver import (
    BoundaryTraces,
    OuterCorrection,
    OuterSolution,
    boundary_formula_defect,
    extract_traces,
    solve_outer0,
    solve_outer1,
    step_count,
    store_schedule,
)
from .params_grids import (
    Grid1D,
    HalfLineGrid,
    ModelParams,
    RateExponents,
    TimeField,
    build_half_line_grid,
    build_layer_grid,
    derive_iota0,
    interp_eval,
    interp_space,
)
from .transform_compat import (
    CompatReport,
    InitialData,
    antiderivative_transform,
    bump_data,
    check_compatibility,
    constant_data,
    polynomial_data,
    recover_u,
    sample_initial_data,
    table_data,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # model parameters and grids
    "ModelParams", "RateExponents", "derive_iota0",
    "Grid1D", "HalfLineGrid", "build_layer_grid", "build_half_line_grid",
    "TimeField", "interp_eval", "interp_space",
    # initial data, transform, compatibility
    "InitialData", "constant_data", "bump_data", "polynomial_data", "table_data",
    "sample_initial_data", "antiderivative_transform", "recover_u",
    "CompatReport", "check_compatibility",
    # correctors
    "CorrectorSeries", "build_corrector_series", "corrector_value",
    "corrector_bound_check",
    # outer hierarchy
    "OuterSolution", "OuterCorrection", "BoundaryTraces",
    "solve_outer0", "solve_outer1", "extract_traces", "boundary_formula_defect",
    "step_count", "store_schedule",
    # layer hierarchy
    "LayerSolveResult", "SecondOrderResult", "LayerProfileSet", "GapSeries",
    "solve_layer_leading", "solve_layer_second", "phi_layer_first",
    "layer_density", "phi_origin_series", "layer_gap",
    # full system
    "FullSolution", "solve_full", "cell_mass", "boundary_ode_check",
    "half_height_width",
    # composite and metrics
    "CompositeApproximation", "build_composite", "homogenizer_b_phi",
    "homogenizer_b_v", "decomposition_residual", "ErrorMetrics", "theorem_errors",
    # harness
    "StudyConfig", "StudyRow", "RunDiagnostics", "Hierarchy", "PipelineRun",
    "ConvergenceReport", "canonical_config", "config_sha256", "load_config",
    "save_config", "initial_data_for", "dt_for", "build_hierarchy",
    "run_pipeline", "run_study", "rate_fit", "render_csv", "parse_report_csv",
    "write_report_csv", "write_report_json",
    # errors
    "PipelineError",
]
