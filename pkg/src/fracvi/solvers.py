"""Solvers for the discrete constrained problem and its penalized relaxations.

All solvers act on the full nodal system: an SPD operator E (EnergyMatrix or
plain array), a load vector, an upper-bound vector phi whose entries may carry
the +1e30 surrogate for unconstrained dofs, and a set of Dirichlet indices
pinned to zero. The sign convention follows the KKT system
E w + lambda = load on the obstacle rows with lambda >= 0, so the multiplier
is the load residual restricted to the obstacle nodes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import MaxIterations, NoConvergence, ParameterError, SingularSystem

try:  # numba only accelerates the projected Gauss-Seidel sweeps
    from numba import njit

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

#: entries of phi at or above this threshold are treated as unconstrained
_SURROGATE = 1e29


@dataclass(frozen=True, eq=False)
class VISolution:
    """Primal iterate, multiplier and active set of the discrete VI.

    w is full-length (zero at Dirichlet nodes); lam is the load residual at
    free nodes (zero at Dirichlet nodes); active_set holds the indices of
    constrained dofs with w = phi.
    """

    w: np.ndarray
    lam: np.ndarray
    active_set: np.ndarray
    iterations: int
    residual: float
    method: str


@dataclass(frozen=True, eq=False)
class PenaltySolution:
    """Penalized iterate with its induced multiplier estimate.

    multiplier is full-length, supported on the constrained dofs: for the L2
    penalty eps^-2 * m_i * (w - phi)_+ at node i, for the Sobolev penalty
    xi^-1 * S (w - phi)_+ embedded at the obstacle nodes.
    """

    w: np.ndarray
    parameter: float
    multiplier: np.ndarray
    newton_iterations: int
    residual: float
    positive_set: np.ndarray
    kind: str


def _operator(E) -> np.ndarray:
    mat = getattr(E, "E", E)
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ParameterError("E must be a square matrix or an EnergyMatrix")
    return mat


def _free_mask(n: int, dirichlet) -> np.ndarray:
    free = np.ones(n, dtype=bool)
    free[np.asarray(dirichlet, dtype=int)] = False
    return free


def _solve_pinned(E, ell, fixed_idx, fixed_val, assume_spd=True) -> np.ndarray:
    """Solve E w = ell with w prescribed on fixed_idx; other dofs free."""
    n = ell.size
    w = np.zeros(n)
    w[fixed_idx] = fixed_val
    free = np.ones(n, dtype=bool)
    free[fixed_idx] = False
    rhs = ell[free] - E[np.ix_(free, ~free)] @ w[~free] if (~free).any() else ell[free]
    sub = E[np.ix_(free, free)]
    try:
        if assume_spd:
            cho = scipy.linalg.cho_factor(sub, check_finite=False)
            w[free] = scipy.linalg.cho_solve(cho, rhs, check_finite=False)
        else:
            w[free] = scipy.linalg.solve(sub, rhs, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(f"linear solve failed: {exc}") from exc
    return w


def solve_unconstrained(E, ell, dirichlet=(), rtol: float = 1e-12) -> np.ndarray:
    """Direct SPD solve of E w = ell on free dofs, w = 0 at Dirichlet nodes."""
    E = _operator(E)
    ell = np.asarray(ell, dtype=float)
    dirichlet = np.asarray(dirichlet, dtype=int)
    w = _solve_pinned(E, ell, dirichlet, 0.0)
    free = _free_mask(ell.size, dirichlet)
    res = np.linalg.norm((E @ w - ell)[free])
    scale = np.linalg.norm(ell[free])
    if scale > 0 and res > rtol * scale * 100:
        raise SingularSystem(
            f"residual {res:.3e} exceeds {100 * rtol:.1e} * ||ell|| = {scale:.3e}"
        )
    return w


def extract_multiplier(E, ell, w, idx=None) -> np.ndarray:
    """Load residual (ell - E w), optionally restricted to the given indices."""
    res = np.asarray(ell, dtype=float) - _operator(E) @ np.asarray(w, dtype=float)
    return res if idx is None else res[np.asarray(idx, dtype=int)]


def _lam_and_active(E, ell, w, phi, dirichlet, act_tol=1e-9):
    n = ell.size
    lam = ell - E @ w
    lam[np.asarray(dirichlet, dtype=int)] = 0.0
    bounded = phi < _SURROGATE
    active = np.nonzero(bounded & (w >= phi - act_tol))[0]
    free = _free_mask(n, dirichlet)
    inactive_free = free & ~np.isin(np.arange(n), active)
    residual = float(np.linalg.norm(lam[inactive_free])) / max(
        1.0, float(np.linalg.norm(ell[free]))
    )
    return lam, active, residual


if _HAVE_NUMBA:

    @njit(cache=True)
    def _pgs_kernel(E, ell, w, ub, free, tol, max_sweeps):  # pragma: no cover - jit
        n = w.size
        for sweep in range(max_sweeps):
            delta = 0.0
            for k in range(free.size):
                i = free[k]
                acc = 0.0
                for j in range(n):
                    acc += E[i, j] * w[j]
                wi = (ell[i] - acc + E[i, i] * w[i]) / E[i, i]
                if wi > ub[i]:
                    wi = ub[i]
                d = abs(wi - w[i])
                if d > delta:
                    delta = d
                w[i] = wi
            if delta <= tol:
                return sweep + 1
        return -1

else:

    def _pgs_kernel(E, ell, w, ub, free, tol, max_sweeps):
        for sweep in range(max_sweeps):
            delta = 0.0
            for i in free:
                wi = (ell[i] - E[i] @ w + E[i, i] * w[i]) / E[i, i]
                if wi > ub[i]:
                    wi = ub[i]
                delta = max(delta, abs(wi - w[i]))
                w[i] = wi
            if delta <= tol:
                return sweep + 1
        return -1


def solve_vi_pgs_oracle(
    E,
    ell,
    phi,
    dirichlet=(),
    tol: float = 1e-12,
    max_sweeps: int = 10**6,
) -> VISolution:
    """Projected Gauss-Seidel oracle for min 1/2 w'Ew - ell'w s.t. w <= phi.

    Sweeps until the max nodal change drops below tol. Slow but simple; serves
    as the independent reference the active-set solver is checked against.
    """
    E = _operator(E)
    ell = np.asarray(ell, dtype=float)
    phi = np.asarray(phi, dtype=float)
    dirichlet = np.asarray(dirichlet, dtype=int)
    free_idx = np.nonzero(_free_mask(ell.size, dirichlet))[0]
    w = np.minimum(0.0, phi)
    w[dirichlet] = 0.0
    sweeps = _pgs_kernel(
        np.ascontiguousarray(E), ell, w, phi, free_idx, tol, int(max_sweeps)
    )
    if sweeps < 0:
        raise MaxIterations(f"projected Gauss-Seidel did not converge in {max_sweeps} sweeps")
    lam, active, residual = _lam_and_active(E, ell, w, phi, dirichlet)
    return VISolution(
        w=w, lam=lam, active_set=active, iterations=int(sweeps),
        residual=residual, method="pgs",
    )


def solve_vi_pdas(
    E,
    ell,
    phi,
    c: float = 1.0,
    dirichlet=(),
    tol: float = 1e-10,
    max_iter: int = 200,
) -> VISolution:
    """Primal-dual active-set iteration for the discrete KKT system.

    Active set update A = {i : lambda_i + c (w_i - phi_i) > 0}; on A the
    constraint w = phi is enforced, elsewhere lambda = 0. Terminates when the
    active set repeats; on cycling past max_iter falls back to the projected
    Gauss-Seidel oracle with a warning.
    """
    if not c > 0:
        raise ParameterError(f"active-set parameter c must be positive, got {c}")
    E = _operator(E)
    ell = np.asarray(ell, dtype=float)
    phi = np.asarray(phi, dtype=float)
    dirichlet = np.asarray(dirichlet, dtype=int)
    n = ell.size
    bounded = phi < _SURROGATE
    bounded[dirichlet] = False

    active = np.zeros(n, dtype=bool)
    for it in range(1, max_iter + 1):
        fixed = np.concatenate([dirichlet, np.nonzero(active)[0]])
        vals = np.concatenate([np.zeros(dirichlet.size), phi[active]])
        w = _solve_pinned(E, ell, fixed, vals)
        lam = np.zeros(n)
        lam[active] = (ell - E @ w)[active]
        new_active = bounded & (lam + c * (w - phi) > 0)
        if np.array_equal(new_active, active):
            # lambda is zero off the active set by construction, so
            # complementarity holds exactly for inactive problems
            free = _free_mask(n, dirichlet) & ~active
            residual = float(np.linalg.norm((ell - E @ w)[free])) / max(
                1.0, float(np.linalg.norm(ell))
            )
            return VISolution(
                w=w, lam=lam, active_set=np.nonzero(active)[0], iterations=it,
                residual=residual, method="pdas",
            )
        active = new_active
    warnings.warn(
        f"active set cycled beyond {max_iter} iterations; falling back to the "
        "projected Gauss-Seidel oracle",
        stacklevel=2,
    )
    sol = solve_vi_pgs_oracle(E, ell, phi, dirichlet=dirichlet)
    return VISolution(
        w=sol.w, lam=sol.lam, active_set=sol.active_set,
        iterations=max_iter + sol.iterations, residual=sol.residual,
        method="pgs_fallback",
    )


def _penalty_newton(E, ell, phi, dirichlet, apply_penalty, build_system, kind,
                    parameter, tol, max_iter, w0, spd):
    """Shared semismooth Newton loop for the nodal positive-part penalties.

    apply_penalty(w, pos) -> full-length penalty term; build_system(pos) ->
    (matrix, rhs) of the linearized problem for positive set pos. The iteration
    is exact per positive set, so it terminates when the set repeats; damping
    by 1/2 guards against residual growth.
    """
    n = ell.size
    bounded = phi < _SURROGATE
    w = w0 if w0 is not None else _solve_pinned(E, ell, dirichlet, 0.0)
    scale = max(1.0, float(np.linalg.norm(ell)))
    free = _free_mask(n, dirichlet)

    def residual_of(wv, pos):
        return float(
            np.linalg.norm((E @ wv + apply_penalty(wv, pos) - ell)[free])
        ) / scale

    pos = bounded & (w > phi)
    res = residual_of(w, pos)
    for it in range(1, max_iter + 1):
        mat, rhs = build_system(pos)
        w_new = _solve_pinned(mat, rhs, dirichlet, 0.0, assume_spd=spd)
        pos_new = bounded & (w_new > phi)
        res_new = residual_of(w_new, pos_new)
        step = 1.0
        while res_new > res * (1.0 + 1e-12) and res_new > tol and step > 2.0**-20:
            step *= 0.5  # damping on residual increase
            w_new = w + step * (w_new - w)
            pos_new = bounded & (w_new > phi)
            res_new = residual_of(w_new, pos_new)
        w, res = w_new, res_new
        if np.array_equal(pos_new, pos) and res <= tol:
            return w, pos_new, it, res
        pos = pos_new
    raise NoConvergence(
        f"{kind} penalty Newton did not converge in {max_iter} steps "
        f"(parameter {parameter}, residual {res:.3e})"
    )


def solve_penalty_l2(
    E,
    ell,
    phi,
    mass,
    eps: float,
    dirichlet=(),
    tol: float = 1e-11,
    max_iter: int = 100,
    w0=None,
) -> PenaltySolution:
    """Moreau-Yosida (L2) penalty: E w + eps^-2 * m * (w - phi)_+ = ell.

    mass is the full-length lumped Sigma2 mass diagonal (zero off the obstacle
    nodes); the positive part is nodal, so the system is piecewise linear and
    semismooth Newton terminates finitely.
    """
    if not eps > 0:
        raise ParameterError(f"penalty parameter eps must be positive, got {eps}")
    E = _operator(E)
    ell = np.asarray(ell, dtype=float)
    phi = np.asarray(phi, dtype=float)
    mass = np.asarray(mass, dtype=float)
    dirichlet = np.asarray(dirichlet, dtype=int)
    coef = eps**-2

    def apply_penalty(w, pos):
        return coef * mass * np.where(pos, w - phi, 0.0)

    def build_system(pos):
        mat = E + np.diag(coef * mass * pos)
        rhs = ell + coef * mass * np.where(pos, phi, 0.0)
        return mat, rhs

    w, pos, iters, res = _penalty_newton(
        E, ell, phi, dirichlet, apply_penalty, build_system, "L2",
        eps, tol, max_iter, w0, spd=True,
    )
    mult = coef * mass * np.maximum(w - phi, 0.0)
    return PenaltySolution(
        w=w, parameter=eps, multiplier=mult, newton_iterations=iters,
        residual=res, positive_set=np.nonzero(pos)[0], kind="l2",
    )


def solve_penalty_sobolev(
    E,
    ell,
    phi,
    gram,
    obstacle_idx,
    xi: float,
    dirichlet=(),
    tol: float = 1e-11,
    max_iter: int = 100,
    w0=None,
) -> PenaltySolution:
    """Sobolev penalty: E w + xi^-1 * B S (w - phi)_+ = ell.

    gram is the W^{s,2}(Sigma2) Gram matrix S over obstacle_idx; the induced
    multiplier xi^-1 * S (w - phi)_+ equals the load residual on the obstacle
    rows exactly, which is the identity the rate theory rests on.
    """
    if not xi > 0:
        raise ParameterError(f"penalty parameter xi must be positive, got {xi}")
    E = _operator(E)
    ell = np.asarray(ell, dtype=float)
    phi = np.asarray(phi, dtype=float)
    S = np.asarray(getattr(gram, "S", gram), dtype=float)
    obstacle_idx = np.asarray(obstacle_idx, dtype=int)
    dirichlet = np.asarray(dirichlet, dtype=int)
    coef = 1.0 / xi

    def apply_penalty(w, pos):
        p_loc = np.where(pos[obstacle_idx], (w - phi)[obstacle_idx], 0.0)
        out = np.zeros_like(w)
        out[obstacle_idx] = coef * (S @ p_loc)
        return out

    def build_system(pos):
        act_loc = np.nonzero(pos[obstacle_idx])[0]
        mat = E.copy()
        rhs = ell.copy()
        if act_loc.size:
            cols = obstacle_idx[act_loc]
            mat[np.ix_(obstacle_idx, cols)] += coef * S[:, act_loc]
            rhs[obstacle_idx] += coef * S[:, act_loc] @ phi[cols]
        return mat, rhs

    w, pos, iters, res = _penalty_newton(
        E, ell, phi, dirichlet, apply_penalty, build_system, "Sobolev",
        xi, tol, max_iter, w0, spd=False,
    )
    p_loc = np.maximum((w - phi)[obstacle_idx], 0.0)
    mult = np.zeros_like(w)
    mult[obstacle_idx] = coef * (S @ p_loc)
    return PenaltySolution(
        w=w, parameter=xi, multiplier=mult, newton_iterations=iters,
        residual=res, positive_set=np.nonzero(pos)[0], kind="sobolev",
    )
