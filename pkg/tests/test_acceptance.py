"""Acceptance criteria, one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and measured values. The canonical fixture is Omega = (-1, 1),
Sigma2 = (1.5, 2.5), R = 4, s = 0.5, f = 5, z = 0, phi = 0.1 at h = 0.02;
AC-5/AC-6 refine to h = 0.01 and h = 0.005.
"""

import math
import time

import numpy as np
import pytest

from conftest import random_spd_instance
from fracvi.assembly import assemble_energy, assemble_sigma2_gram, ibp_residual
from fracvi.diagnostics import (
    canonical_problem,
    kkt_report,
    mosco_check,
    rate_study_epsilon,
    rate_study_xi,
)
from fracvi.kernel import normalization_constant
from fracvi.solvers import solve_vi_pdas, solve_vi_pgs_oracle
from oracles import energy_entry, gagliardo_entry, mass_entry

GRID = 2.0 ** -np.arange(2, 10)


def _report(name, passed, detail):
    line = f"{name} {'PASS' if passed else 'FAIL'}: {detail}"
    print(line)
    assert passed, line


@pytest.fixture(scope="module")
def system02():
    return canonical_problem(h=0.02)


@pytest.fixture(scope="module")
def vi02(system02):
    return solve_vi_pdas(system02.E, system02.load, system02.phi_full,
                         dirichlet=system02.dirichlet)


@pytest.fixture(scope="module")
def eps_study():
    # timed end to end: assembly, VI reference, and the full penalty sweep
    t0 = time.perf_counter()
    system = canonical_problem(h=0.02)
    vi = solve_vi_pdas(system.E, system.load, system.phi_full,
                       dirichlet=system.dirichlet)
    study = rate_study_epsilon(system, GRID, vi=vi)
    return study, time.perf_counter() - t0


@pytest.fixture(scope="module")
def refined():
    out = {}
    for h in (0.01, 0.005):
        system = canonical_problem(h=h)
        vi = solve_vi_pdas(system.E, system.load, system.phi_full,
                           dirichlet=system.dirichlet)
        out[h] = (system, vi)
    return out


def test_ac1_epsilon_rates_and_runtime(eps_study):
    study, elapsed = eps_study
    m1 = study.median_eoc("err_energy")
    m2 = study.median_eoc("err_violation")
    _report(
        "AC-1",
        m1 >= 0.9 and m2 >= 1.8 and elapsed <= 60.0,
        f"median EOC energy {m1:.3f} (>=0.9), violation {m2:.3f} (>=1.8), "
        f"runtime {elapsed:.1f}s (<=60)",
    )


def test_ac2_combined_bound(eps_study):
    study, _ = eps_study
    ratios = study.extras["bound_ratio"]
    _report(
        "AC-2",
        bool(np.all(ratios <= 2.0)),
        f"max combined-bound ratio {ratios.max():.3f} (<= 2 at every eps)",
    )


def test_ac3_xi_rates(system02, vi02):
    study = rate_study_xi(system02, GRID, vi=vi02)
    medians = {name: study.median_eoc(name) for name in study.columns}
    _report(
        "AC-3",
        all(v >= 0.9 for v in medians.values()),
        "median EOC " + ", ".join(f"{k}={v:.3f}" for k, v in medians.items()) + " (>=0.9)",
    )


def test_ac4_pdas_oracle_agreement(system02, vi02):
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(5, 41))
        E, ell, phi = random_spd_instance(rng, n, n_bounded=max(1, n // 2))
        pdas = solve_vi_pdas(E, ell, phi)
        pgs = solve_vi_pgs_oracle(E, ell, phi)
        worst = max(worst, float(np.max(np.abs(pdas.w - pgs.w))))
    pgs_c = solve_vi_pgs_oracle(system02.E, system02.load, system02.phi_full,
                                dirichlet=system02.dirichlet)
    worst_c = float(np.max(np.abs(vi02.w - pgs_c.w)))
    rep = kkt_report(system02, vi02)
    lam = vi02.lam[system02.obstacle]
    diff = vi02.w[system02.obstacle] - system02.phi
    scale = (1.0 + np.linalg.norm(lam)) * (1.0 + np.linalg.norm(diff))
    ok = (
        worst <= 1e-8 and worst_c <= 1e-8
        and rep.feasibility_violation <= 1e-10
        and rep.multiplier_min >= -1e-10
        and rep.complementarity <= 1e-9 * scale
    )
    _report(
        "AC-4",
        ok,
        f"max |pdas-pgs|: random {worst:.2e}, canonical {worst_c:.2e} (<=1e-8); "
        f"feasibility {rep.feasibility_violation:.2e}, multiplier_min "
        f"{rep.multiplier_min:.2e}, complementarity {rep.complementarity:.2e}",
    )


def test_ac5_interaction_sign_and_inactive(refined):
    ratios = {}
    for h, (system, vi) in refined.items():
        rep = kkt_report(system, vi)
        sign = max(0.0, rep.interaction_sign) / rep.interaction_max_abs
        inact = rep.interaction_inactive / rep.interaction_max_abs
        ratios[h] = (sign, inact)
    s1, i1 = ratios[0.01]
    s2, i2 = ratios[0.005]
    shrink = (s2 <= s1 if s1 > 0 else s2 == 0.0) and (i2 <= i1 if i1 > 0 else i2 == 0.0)
    ok = s1 <= 0.05 and i1 <= 0.05 and s2 <= 0.05 and i2 <= 0.05 and shrink
    _report(
        "AC-5",
        ok,
        f"sign ratio {s1:.2e}->{s2:.2e}, inactive ratio {i1:.2e}->{i2:.2e} "
        "(<=0.05, non-increasing)",
    )


def test_ac6_integration_by_parts(refined):
    residuals = {}
    for h, (system, _) in refined.items():
        mesh = system.mesh
        xi = mesh.nodes
        u = np.where(np.abs(xi) < 1,
                     np.exp(1.0 - 1.0 / np.maximum(1.0 - xi**2, 1e-300)), 0.0)
        v = np.zeros(mesh.n_nodes)
        v[system.obstacle[system.obstacle.size // 2]] = 1.0
        r_hat = ibp_residual(mesh, u, v, system.params, energy=system.energy)
        r_self, terms = ibp_residual(mesh, u, u, system.params,
                                     energy=system.energy, return_terms=True)
        residuals[h] = (max(r_hat, r_self), terms["scale"])
    r1, scale1 = residuals[0.01]
    r2, _ = residuals[0.005]
    ok = r1 <= 1e-3 * scale1 and r2 < r1
    _report(
        "AC-6",
        ok,
        f"residual {r1:.2e} (<= {1e-3 * scale1:.2e}) at h=0.01, "
        f"{r2:.2e} at h=0.005 (decreasing)",
    )


def test_ac7_penalized_energy_bound(system02, vi02):
    table = mosco_check(system02, GRID, vi=vi02)
    j_vi = table["J_vi"]
    gap = table["gap"][-1]
    tol = 1e-5 * (abs(j_vi) + 1.0)
    bound_ok = all(j <= j_vi + 1e-10 * (abs(j_vi) + 1) for j in table["J_eps"])
    _report(
        "AC-7",
        bound_ok and gap <= tol,
        f"J_eps <= J_vi at every eps; final gap {gap:.2e} (<= {tol:.2e})",
    )


def test_ac8_assembly_oracle(mesh12):
    em = assemble_energy(mesh12)
    G = em.G
    sym = np.array_equal(G, G.T)
    worst = 0.0
    floor = 1e-12 * np.max(np.abs(G))
    for i in range(mesh12.n_nodes):
        for j in range(i, mesh12.n_nodes):
            ref = energy_entry(mesh12, i, j, 0.5, mesh12.spec.radius)
            err = abs(G[i, j] - ref) / max(abs(ref), floor)
            worst = max(worst, err)
    gram = assemble_sigma2_gram(mesh12)
    obst = mesh12.obstacle_nodes
    s2_els = mesh12.elements_in(2)
    worst_ms = 0.0
    for a in range(obst.size):
        for b in range(a, obst.size):
            ref_m = mass_entry(mesh12, obst[a], obst[b], s2_els)
            ref_h = gagliardo_entry(mesh12, obst[a], obst[b], 0.5, s2_els)
            worst_ms = max(
                worst_ms,
                abs(gram.M[a, b] - ref_m) / max(abs(ref_m), 1e-12),
                abs(gram.S[a, b] - ref_m - ref_h) / max(abs(ref_m + ref_h), 1e-12),
            )
    free = mesh12.free_nodes
    lam_min = float(np.linalg.eigvalsh(G[np.ix_(free, free)])[0])
    ok = sym and worst <= 1e-6 and worst_ms <= 1e-6 and lam_min > 0
    _report(
        "AC-8",
        ok,
        f"G symmetric bitwise: {sym}; worst rel err G {worst:.2e}, M/S {worst_ms:.2e} "
        f"(<=1e-6); min constrained eigenvalue {lam_min:.3e} (> 0)",
    )


def test_ac9_normalization_constants():
    c_half = normalization_constant(0.5)
    c_quarter = normalization_constant(0.25)
    e1 = abs(c_half - 1.0 / math.pi) / (1.0 / math.pi)
    e2 = abs(c_quarter - math.sqrt(2.0) / (4.0 * math.sqrt(math.pi))) / (
        math.sqrt(2.0) / (4.0 * math.sqrt(math.pi))
    )
    _report(
        "AC-9",
        e1 <= 1e-12 and e2 <= 1e-12,
        f"C(0.5) rel err {e1:.2e}, C(0.25) rel err {e2:.2e} (<=1e-12)",
    )
