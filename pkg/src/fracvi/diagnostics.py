"""Verification diagnostics: KKT reports, Mosco checks, and rate studies.

The rate studies reproduce, at the discrete level, the penalty convergence
theorems: for the L2 (Moreau-Yosida) penalty the energy-norm error is bounded
linearly and the constraint violation quadratically in the parameter; for the
Sobolev penalty the solution, the multiplier (in the dual norm induced by the
Sigma2 Gram) and the violation all converge linearly. Errors are measured
against the discrete VI solution on the same mesh, which isolates the penalty
error from discretization error.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .assembly import DiscreteSystem, element_quadrature, interaction_apply
from .errors import AssertionFailure, ParameterError
from .geometry import Region
from .solvers import (
    PenaltySolution,
    VISolution,
    solve_penalty_l2,
    solve_penalty_sobolev,
    solve_vi_pdas,
)

#: acceptance thresholds on median estimated orders of convergence
EOC_THRESHOLDS = {
    "l2": {"err_energy": 0.9, "err_violation": 1.8},
    "sobolev": {"err_energy": 0.9, "err_multiplier": 0.9, "err_violation": 0.9},
}

DEFAULT_GRID = 2.0 ** -np.arange(2, 10)


def evaluate_J(E, ell, w) -> float:
    """Discrete energy 1/2 w'Ew - ell'w."""
    E = getattr(E, "E", E)
    w = np.asarray(w, dtype=float)
    return float(0.5 * w @ E @ w - np.asarray(ell, dtype=float) @ w)


def energy_norm(G, v) -> float:
    """sqrt(v' G v), clipped at zero against roundoff."""
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ np.asarray(G) @ v, 0.0)))


def dual_norm(S_cho, lam) -> float:
    """Dual norm sqrt(lam' S^-1 lam) from a Cholesky factor of the Gram S."""
    x = scipy.linalg.cho_solve(S_cho, np.asarray(lam, dtype=float), check_finite=False)
    return float(np.sqrt(max(lam @ x, 0.0)))


def interaction_l2_norm(system: DiscreteSystem, w) -> float:
    """||N_s w||_{L2(Sigma2)} by per-element Gauss quadrature."""
    x, wq = element_quadrature(system.mesh, system.mesh.elements_in(Region.SIGMA2), order=7)
    vals = interaction_apply(system.mesh, w, x, system.params)
    return float(np.sqrt(np.sum(wq * vals**2)))


def violation_norm(system: DiscreteSystem, w) -> float:
    """Lumped-mass L2(Sigma2) norm of the nodal positive part (w - phi)_+."""
    pos = np.maximum(w[system.obstacle] - system.phi, 0.0)
    return float(np.sqrt(np.sum(system.gram.lumped * pos**2)))


# ---------------------------------------------------------------------------
# KKT / Euler-Lagrange report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KKTReport:
    """Discrete KKT and Euler-Lagrange condition measurements.

    feasibility_violation: max(0, w - phi) at obstacle nodes, max-norm.
    multiplier_min: most negative multiplier entry.
    complementarity: |lambda . (w - phi)| over obstacle nodes.
    interaction_sign: max of sampled N_s w on Sigma2 (should be <= 0).
    interaction_inactive: max |N_s w| over samples with w < phi - margin.
    """

    feasibility_violation: float
    multiplier_min: float
    complementarity: float
    interaction_sign: float
    interaction_inactive: float
    interaction_max_abs: float
    n_samples: int
    n_inactive_samples: int

    def as_dict(self) -> dict:
        return {
            "feasibility_violation": self.feasibility_violation,
            "multiplier_min": self.multiplier_min,
            "complementarity": self.complementarity,
            "interaction_sign": self.interaction_sign,
            "interaction_inactive": self.interaction_inactive,
            "interaction_max_abs": self.interaction_max_abs,
            "n_samples": self.n_samples,
            "n_inactive_samples": self.n_inactive_samples,
        }


def kkt_report(
    system: DiscreteSystem,
    solution,
    inactive_margin: float = 1e-6,
    order: int = 5,
) -> KKTReport:
    """Fill a KKTReport for a VISolution or PenaltySolution.

    Interaction fields sample N_s w at Gauss points of the Sigma2 elements;
    the obstacle is extended into the boundary elements by nearest-node value.
    A sample counts as inactive only if w < phi - margin there and its element
    plus both neighbors consist of inactive obstacle nodes: region interfaces
    carry a conforming-approximation boundary layer (the interpolant ramps to
    the Dirichlet value while the continuum solution need not) that decays
    geometrically per element, so pointwise classification alone would tag
    discretization artifacts as inactive.
    """
    w = solution.w
    lam = solution.lam if isinstance(solution, VISolution) else solution.multiplier
    obstacle = system.obstacle
    diff = w[obstacle] - system.phi
    feasibility = float(max(0.0, diff.max(initial=-np.inf)))
    mult_min = float(lam[obstacle].min()) if obstacle.size else 0.0
    comp = float(abs(np.dot(lam[obstacle], diff)))

    mesh = system.mesh
    s2_els = mesh.elements_in(Region.SIGMA2)
    x, _ = element_quadrature(mesh, s2_els, order=order)
    vals = interaction_apply(mesh, w, x, system.params)
    # obstacle per sample, elementwise: constant extension across interface
    # nodes, never blending across the gap between Sigma2 intervals
    q = x.size // s2_els.size
    phi_node = np.full(mesh.n_nodes, np.inf)
    phi_node[obstacle] = system.phi
    n1, n2 = mesh.elements[s2_els, 0], mesh.elements[s2_els, 1]
    v1 = np.where(np.isinf(phi_node[n1]), phi_node[n2], phi_node[n1])
    v2 = np.where(np.isinf(phi_node[n2]), phi_node[n1], phi_node[n2])
    t = (x - np.repeat(mesh.nodes[n1], q)) / np.repeat(mesh.nodes[n2] - mesh.nodes[n1], q)
    phi_x = np.repeat(v1, q) * (1.0 - t) + np.repeat(v2, q) * t
    w_x = mesh.interpolate(w, x)
    node_inactive = np.zeros(mesh.n_nodes, dtype=bool)
    node_inactive[obstacle] = diff < -inactive_margin
    el_inact = np.zeros(mesh.n_elements, dtype=bool)
    el_inact[s2_els] = node_inactive[mesh.elements[s2_els]].all(axis=1)
    # one-element buffer: the interface layer decays geometrically per element
    el_ok = el_inact[s2_els]
    el_ok &= el_inact[np.maximum(s2_els - 1, 0)]
    el_ok &= el_inact[np.minimum(s2_els + 1, mesh.n_elements - 1)]
    inactive = (w_x < phi_x - inactive_margin) & np.repeat(el_ok, x.size // s2_els.size)
    return KKTReport(
        feasibility_violation=feasibility,
        multiplier_min=mult_min,
        complementarity=comp,
        interaction_sign=float(vals.max(initial=-np.inf)),
        interaction_inactive=float(np.abs(vals[inactive]).max(initial=0.0)),
        interaction_max_abs=float(np.abs(vals).max(initial=0.0)),
        n_samples=int(x.size),
        n_inactive_samples=int(inactive.sum()),
    )


# ---------------------------------------------------------------------------
# Mosco / penalized-energy check
# ---------------------------------------------------------------------------

def penalized_energy(system: DiscreteSystem, sol: PenaltySolution) -> float:
    """J_eps(w) = J(w) + (eps^-2 / 2) ||(w - phi)_+||^2 in the lumped mass."""
    pos = np.maximum(sol.w - system.phi_full, 0.0)
    pen = 0.5 * sol.parameter**-2 * float(np.sum(system.mass_lumped_full * pos**2))
    return evaluate_J(system.E, system.load, sol.w) + pen


def mosco_check(
    system: DiscreteSystem,
    eps_grid=DEFAULT_GRID,
    vi: VISolution | None = None,
    gap_tol: float | None = None,
) -> dict:
    """Sweep the L2 penalty and check the Mosco-convergence facts.

    Records J_eps(w_eps), J(w_eps) and the violation per eps, and asserts:
    J_eps(w_eps) <= J(w_vi) at every eps (the feasible-comparison bound),
    J_eps(w_eps) nondecreasing as eps decreases, the squared violation below
    C eps^2 with C calibrated at the coarsest eps, and (optionally) the final
    gap below gap_tol. Raises AssertionFailure naming the offending eps.
    """
    eps_grid = _check_grid(eps_grid)
    if vi is None:
        vi = solve_vi_pdas(system.E, system.load, system.phi_full,
                           dirichlet=system.dirichlet)
    j_vi = evaluate_J(system.E, system.load, vi.w)
    rows = {"eps": [], "J_eps": [], "J": [], "violation": []}
    for eps in eps_grid:
        sol = solve_penalty_l2(
            system.E, system.load, system.phi_full, system.mass_lumped_full,
            eps, dirichlet=system.dirichlet,
        )
        rows["eps"].append(float(eps))
        rows["J_eps"].append(penalized_energy(system, sol))
        rows["J"].append(evaluate_J(system.E, system.load, sol.w))
        rows["violation"].append(violation_norm(system, sol.w))
    j_eps = np.array(rows["J_eps"])
    viol = np.array(rows["violation"])
    slack = 1e-10 * (abs(j_vi) + 1.0)
    for k, eps in enumerate(eps_grid):
        if j_eps[k] > j_vi + slack:
            raise AssertionFailure(
                f"J_eps(w_eps) = {j_eps[k]:.12e} exceeds J(w_vi) = {j_vi:.12e} at eps = {eps}"
            )
    for k in range(1, eps_grid.size):
        if j_eps[k] < j_eps[k - 1] - slack:
            raise AssertionFailure(
                f"J_eps(w_eps) decreased from eps = {eps_grid[k-1]} to {eps_grid[k]}"
            )
    if eps_grid.size:
        c_cal = viol[0] ** 2 / eps_grid[0] ** 2
        for k, eps in enumerate(eps_grid):
            if viol[k] ** 2 > 1.05 * c_cal * eps**2 + 1e-30:
                raise AssertionFailure(
                    f"violation^2 = {viol[k]**2:.3e} exceeds C eps^2 at eps = {eps}"
                )
        if gap_tol is not None and j_vi - j_eps[-1] > gap_tol:
            raise AssertionFailure(
                f"final gap {j_vi - j_eps[-1]:.3e} exceeds {gap_tol:.3e} "
                f"at eps = {eps_grid[-1]}"
            )
    rows["J_vi"] = float(j_vi)
    rows["gap"] = [float(j_vi - v) for v in rows["J_eps"]]
    return rows


# ---------------------------------------------------------------------------
# rate studies
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StudyReport:
    """Per-parameter error table with estimated orders of convergence.

    columns maps error names to arrays over the grid; eoc holds the log-ratio
    orders between consecutive grid points (first entry nan); constants holds
    per-point constants at the column's theoretical rate; extras carries
    study-specific scalars or columns (e.g. the combined-bound ratio).
    """

    parameter: str
    grid: np.ndarray
    columns: dict
    eoc: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    runtime: np.ndarray = None
    exact: bool = False

    def median_eoc(self, name: str) -> float:
        """Median EOC excluding the first (pre-asymptotic) interval; inf if exact."""
        if self.exact:
            return math.inf
        vals = self.eoc[name][2:]
        vals = vals[np.isfinite(vals)]
        return float(np.median(vals)) if vals.size else math.nan


def _eoc_column(grid, errors) -> np.ndarray:
    eoc = np.full(grid.size, np.nan)
    for k in range(1, grid.size):
        if errors[k - 1] > 0 and errors[k] > 0:
            eoc[k] = math.log(errors[k - 1] / errors[k]) / math.log(grid[k - 1] / grid[k])
    return eoc


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
        raise ParameterError("parameter grid must be positive and strictly decreasing")
    return grid


def _finish_report(parameter, grid, columns, rates, extras, runtime) -> StudyReport:
    floor = 1e-13
    exact = all(np.all(np.asarray(col) <= floor) for col in columns.values())
    eoc = {name: _eoc_column(grid, np.asarray(col)) for name, col in columns.items()}
    constants = {
        name: np.asarray(col) / grid ** rates[name] for name, col in columns.items()
    }
    return StudyReport(
        parameter=parameter, grid=grid, columns=columns, eoc=eoc,
        constants=constants, extras=extras, runtime=np.asarray(runtime),
        exact=exact,
    )


def rate_study_epsilon(
    system: DiscreteSystem,
    eps_grid=DEFAULT_GRID,
    vi: VISolution | None = None,
) -> StudyReport:
    """L2-penalty sweep: energy-norm error, violation, and the combined bound.

    The combined bound compares C_{1,s} ||w - w_eps||^2 + (eps^-2/2) ||(w_eps -
    phi)_+||^2 against eps^2 ||N_s w||^2_{L2(Sigma2)} evaluated on the VI
    solution; their ratio is recorded per grid point.
    """
    eps_grid = _check_grid(eps_grid)
    if vi is None:
        vi = solve_vi_pdas(system.E, system.load, system.phi_full,
                           dirichlet=system.dirichlet)
    interaction_sq = interaction_l2_norm(system, vi.w) ** 2
    err_energy, err_viol, ratios, lhs_col, runtime = [], [], [], [], []
    for eps in eps_grid:
        t0 = time.perf_counter()
        sol = solve_penalty_l2(
            system.E, system.load, system.phi_full, system.mass_lumped_full,
            eps, dirichlet=system.dirichlet,
        )
        runtime.append(time.perf_counter() - t0)
        diff = vi.w - sol.w
        e1 = energy_norm(system.G, diff)
        e2 = violation_norm(system, sol.w)
        err_energy.append(e1)
        err_viol.append(e2)
        lhs = system.params.c_ns * e1**2 + 0.5 * eps**-2 * e2**2
        rhs = eps**2 * interaction_sq
        lhs_col.append(lhs)
        ratios.append(lhs / rhs if rhs > 0 else math.inf)
    columns = {"err_energy": np.array(err_energy), "err_violation": np.array(err_viol)}
    extras = {
        "bound_ratio": np.array(ratios),
        "bound_lhs": np.array(lhs_col),
        "bound_rhs": eps_grid**2 * interaction_sq,
        "interaction_l2_sq": interaction_sq,
        "J_vi": evaluate_J(system.E, system.load, vi.w),
    }
    return _finish_report(
        "eps", eps_grid, columns, {"err_energy": 1.0, "err_violation": 2.0},
        extras, runtime,
    )


def rate_study_xi(
    system: DiscreteSystem,
    xi_grid=DEFAULT_GRID,
    vi: VISolution | None = None,
) -> StudyReport:
    """Sobolev-penalty sweep: energy error, dual-norm multiplier error, violation."""
    xi_grid = _check_grid(xi_grid)
    if vi is None:
        vi = solve_vi_pdas(system.E, system.load, system.phi_full,
                           dirichlet=system.dirichlet)
    S = system.gram.S
    S_cho = scipy.linalg.cho_factor(S, check_finite=False)
    lam_vi = vi.lam[system.obstacle]
    err_energy, err_mult, err_viol, runtime = [], [], [], []
    for xi in xi_grid:
        t0 = time.perf_counter()
        sol = solve_penalty_sobolev(
            system.E, system.load, system.phi_full, system.gram,
            system.obstacle, xi, dirichlet=system.dirichlet,
        )
        runtime.append(time.perf_counter() - t0)
        err_energy.append(energy_norm(system.G, vi.w - sol.w))
        err_mult.append(dual_norm(S_cho, sol.multiplier[system.obstacle] - lam_vi))
        pos = np.maximum(sol.w[system.obstacle] - system.phi, 0.0)
        err_viol.append(float(np.sqrt(max(pos @ S @ pos, 0.0))))
    columns = {
        "err_energy": np.array(err_energy),
        "err_multiplier": np.array(err_mult),
        "err_violation": np.array(err_viol),
    }
    extras = {"J_vi": evaluate_J(system.E, system.load, vi.w),
              "lam_dual_norm": dual_norm(S_cho, lam_vi)}
    return _finish_report(
        "xi", xi_grid, columns,
        {"err_energy": 1.0, "err_multiplier": 1.0, "err_violation": 1.0},
        extras, runtime,
    )


# ---------------------------------------------------------------------------
# canonical fixture
# ---------------------------------------------------------------------------

def canonical_problem(h: float = 0.02, s: float = 0.5):
    """Shipped active test problem: f = 5 on (-1,1), phi = 0.1 on (1.5,2.5), R = 4.

    The unconstrained solution violates the obstacle (checked at build time).
    """
    from .assembly import ProblemData, build_system
    from .geometry import DomainSpec, build_mesh
    from .solvers import solve_unconstrained

    spec = DomainSpec(omega=(-1.0, 1.0), sigma2=((1.5, 2.5),), radius=4.0, s=s)
    mesh = build_mesh(spec, h)
    system = build_system(mesh, ProblemData(f=5.0, phi=0.1))
    w_unc = solve_unconstrained(system.E, system.load, system.dirichlet)
    if not np.any(w_unc[system.obstacle] > system.phi):
        raise AssertionFailure(
            "canonical problem is not active: unconstrained solution stays below phi"
        )
    return system
