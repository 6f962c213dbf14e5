"""Solver suite for the nonlocal exterior obstacle problem.

Submodules: geometry (domains and tagged meshes), kernel (fractional kernel
and singular quadrature), assembly (discrete operators), solvers (VI and
penalty solvers), diagnostics (KKT reports and rate studies), io (artifacts),
cli (batch front-end). Heavy submodules load lazily so the CLI can cap BLAS
threads before numpy is imported.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "assembly",
    "cli",
    "diagnostics",
    "errors",
    "geometry",
    "io",
    "kernel",
    "solvers",
)

_EXPORTS = {
    "DomainSpec": "geometry",
    "Mesh1D": "geometry",
    "Region": "geometry",
    "build_mesh": "geometry",
    "validate_spec": "geometry",
    "FracParams": "kernel",
    "GradingConfig": "kernel",
    "QuadRule": "kernel",
    "INF_OBSTACLE": "kernel",
    "kernel_eval": "kernel",
    "normalization_constant": "kernel",
    "pair_quadrature": "kernel",
    "tail_weight": "kernel",
    "DiscreteSystem": "assembly",
    "EnergyMatrix": "assembly",
    "ProblemData": "assembly",
    "Sigma2Gram": "assembly",
    "apply_fractional_laplacian": "assembly",
    "assemble_energy": "assembly",
    "assemble_load": "assembly",
    "assemble_mass": "assembly",
    "assemble_sigma2_gram": "assembly",
    "build_system": "assembly",
    "ibp_residual": "assembly",
    "interaction_apply": "assembly",
    "PenaltySolution": "solvers",
    "VISolution": "solvers",
    "extract_multiplier": "solvers",
    "solve_penalty_l2": "solvers",
    "solve_penalty_sobolev": "solvers",
    "solve_unconstrained": "solvers",
    "solve_vi_pdas": "solvers",
    "solve_vi_pgs_oracle": "solvers",
    "KKTReport": "diagnostics",
    "StudyReport": "diagnostics",
    "canonical_problem": "diagnostics",
    "evaluate_J": "diagnostics",
    "kkt_report": "diagnostics",
    "mosco_check": "diagnostics",
    "rate_study_epsilon": "diagnostics",
    "rate_study_xi": "diagnostics",
}

__all__ = sorted([*_SUBMODULES, *_EXPORTS])


def __getattr__(name):
    import importlib

    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    if name in _EXPORTS:
        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
