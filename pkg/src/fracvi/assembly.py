"""Discrete operators for the restricted Gagliardo energy.

The energy matrix G collects the double integral of kernel-weighted P1 hat
differences over all element pairs with at least one element in Omega
(exterior-exterior pairs are excluded), plus the exact tail correction
2 * int_Omega phi_i phi_j tail(x) dx accounting for the untruncated exterior
|y| > R where discrete functions vanish. The bilinear form is
E = (C_{1,s}/2) * G, and v @ G @ v is the squared restricted Sobolev norm.

The interaction operator N_s w(x) = C int_Omega (w(x)-w(y)) |x-y|^(-1-2s) dy
and the pointwise fractional Laplacian of a P1 interpolant are evaluated with
closed-form element antiderivatives (the principal value is taken over a
symmetric window inside the element containing x, where the linear part
cancels exactly).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AccuracyWarning,
    DomainError,
    EmptyRegion,
    ParameterError,
)
from .geometry import Mesh1D, Region
from .kernel import (
    DEFAULT_GRADING,
    FracParams,
    GradingConfig,
    INF_OBSTACLE,
    _gauss01,
    _ref_identical,
    _ref_vertex,
    tail_integral,
)

_CHUNK = 2_000_000  # max points per assembly batch


@dataclass(frozen=True, eq=False)
class EnergyMatrix:
    """Symmetric Gagliardo matrix G with the scaling rule E = (c_ns/2) * G."""

    G: np.ndarray
    c_ns: float
    E: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "E", 0.5 * self.c_ns * self.G)


@dataclass(frozen=True, eq=False)
class Sigma2Gram:
    """W^{s,2}(Sigma2) Gram data over the obstacle nodes.

    M: consistent P1 mass on Sigma2; H: Gagliardo double integral over
    Sigma2 x Sigma2 only; S = M + H; lumped: diagonal (row-sum) mass.
    """

    nodes: np.ndarray
    M: np.ndarray
    H: np.ndarray
    S: np.ndarray
    lumped: np.ndarray


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Right-hand data: Omega density f, obstacle phi, exterior datum z.

    f: scalar or vectorized callable on Omega.
    phi: scalar or array over the mesh obstacle nodes (length units).
    z: optional full-length nodal vector, nonzero only at Dirichlet nodes and
       vanishing at +-R (compact support inside (-R, R)).
    """

    f: object = 0.0
    phi: object = INF_OBSTACLE
    z: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class DiscreteSystem:
    """Everything one solve needs: mesh, operators, loads, obstacle bounds."""

    mesh: Mesh1D
    params: FracParams
    energy: EnergyMatrix
    gram: Sigma2Gram
    load_raw: np.ndarray
    lift: np.ndarray
    load: np.ndarray
    phi: np.ndarray
    phi_full: np.ndarray
    mass_lumped_full: np.ndarray
    data: ProblemData

    @property
    def G(self) -> np.ndarray:
        return self.energy.G

    @property
    def E(self) -> np.ndarray:
        return self.energy.E

    @property
    def obstacle(self) -> np.ndarray:
        return self.mesh.obstacle_nodes

    @property
    def dirichlet(self) -> np.ndarray:
        return self.mesh.dirichlet_nodes

    def energy_norm(self, v: np.ndarray) -> float:
        """Restricted Sobolev norm sqrt(v @ G @ v)."""
        return float(np.sqrt(max(v @ self.G @ v, 0.0)))


# ---------------------------------------------------------------------------
# Gagliardo double integrals
# ---------------------------------------------------------------------------

def _accumulate(flat: np.ndarray, idx: np.ndarray, local: np.ndarray, n: int) -> None:
    # deterministic scatter-add of (P, k, k) local blocks into the flat matrix
    rows = idx[:, :, None] * n + idx[:, None, :]
    flat += np.bincount(rows.ravel(), weights=local.ravel(), minlength=n * n)


def _pairs_block(flat, nodes, elements, s, grading, pairs_a, pairs_b, factor, n):
    """Disjoint-pair contributions for element index arrays pairs_a < pairs_b."""
    if pairs_a.size == 0:
        return
    el_l = np.minimum(pairs_a, pairs_b)
    el_r = np.maximum(pairs_a, pairs_b)
    a1 = nodes[elements[el_l, 0]]
    a2 = nodes[elements[el_l, 1]]
    b1 = nodes[elements[el_r, 0]]
    b2 = nodes[elements[el_r, 1]]
    ha, hb = a2 - a1, b2 - b1
    gap = b1 - a2
    size = np.maximum(ha, hb)
    # must match kernel.disjoint_order so pair_quadrature describes assembly
    boost = np.ceil(3.0 * np.log2(1.0 + size / gap)).astype(int)
    n_eff = np.minimum(grading.order_disjoint + boost, grading.order_cap)
    idx_all = np.column_stack(
        [elements[el_l, 0], elements[el_l, 1], elements[el_r, 0], elements[el_r, 1]]
    )
    for order in np.unique(n_eff):
        sel = np.nonzero(n_eff == order)[0]
        t, tw = _gauss01(int(order))
        T1 = np.repeat(t, t.size)
        T2 = np.tile(t, t.size)
        wref = np.repeat(tw, tw.size) * np.tile(tw, tw.size)
        D = np.vstack([1.0 - T1, T1, -(1.0 - T2), -T2])
        step = max(1, _CHUNK // T1.size)
        for k0 in range(0, sel.size, step):
            ch = sel[k0:k0 + step]
            x = a1[ch, None] + ha[ch, None] * T1[None, :]
            y = b1[ch, None] + hb[ch, None] * T2[None, :]
            kern = (y - x) ** (-1.0 - 2.0 * s)
            W = factor * (ha[ch] * hb[ch])[:, None] * wref[None, :] * kern
            local = np.einsum("aq,bq,pq->pab", D, D, W)
            _accumulate(flat, idx_all[ch], local, n)


def _vertex_block(flat, nodes, elements, s, grading, el_left, n):
    """Vertex-touching contributions for consecutive element pairs (i, i+1)."""
    if el_left.size == 0:
        return
    SG, TA, wref = _ref_vertex(grading)
    D = np.vstack([SG, TA - SG, -TA])
    a1 = nodes[elements[el_left, 0]]
    v = nodes[elements[el_left, 1]]
    b2 = nodes[elements[el_left + 1, 1]]
    ha, hb = v - a1, b2 - v
    idx_all = np.column_stack(
        [elements[el_left, 0], elements[el_left, 1], elements[el_left + 1, 1]]
    )
    step = max(1, _CHUNK // SG.size)
    for k0 in range(0, el_left.size, step):
        ch = slice(k0, min(k0 + step, el_left.size))
        dist = ha[ch, None] * SG[None, :] + hb[ch, None] * TA[None, :]
        kern = dist ** (-1.0 - 2.0 * s)
        W = 2.0 * (ha[ch] * hb[ch])[:, None] * wref[None, :] * kern
        local = np.einsum("aq,bq,pq->pab", D, D, W)
        _accumulate(flat, idx_all[ch], local, n)


def _identical_block(flat, nodes, elements, s, grading, els, n):
    """Diagonal (identical-pair) contributions for the given elements."""
    if els.size == 0:
        return
    X, MU, wref = _ref_identical(s, grading)
    D = np.vstack([-MU, MU])
    a1 = nodes[elements[els, 0]]
    h = nodes[elements[els, 1]] - a1
    idx_all = elements[els]
    step = max(1, _CHUNK // X.size)
    for k0 in range(0, els.size, step):
        ch = slice(k0, min(k0 + step, els.size))
        kern = (h[ch, None] * MU[None, :]) ** (-1.0 - 2.0 * s)
        W = (h[ch] ** 2)[:, None] * wref[None, :] * kern
        local = np.einsum("aq,bq,pq->pab", D, D, W)
        _accumulate(flat, idx_all[ch], local, n)


def _gagliardo_matrix(mesh, s, grading, primary, universe) -> np.ndarray:
    """Double-integral matrix over pairs {i, j} with i in primary, j in universe.

    primary must be a subset of universe; unordered distinct pairs enter with
    factor 2 (the two symmetric bands), identical pairs once.
    """
    n = mesh.n_nodes
    flat = np.zeros(n * n)
    prim = np.asarray(sorted(primary), dtype=int)
    univ = set(universe)
    _identical_block(flat, mesh.nodes, mesh.elements, s, grading, prim, n)
    # vertex pairs: consecutive elements (i, i+1) with either side primary
    lefts = set()
    for i in prim:
        if i - 1 in univ:
            lefts.add(i - 1)
        if i + 1 in univ:
            lefts.add(i)
    _vertex_block(
        flat, mesh.nodes, mesh.elements, s, grading,
        np.asarray(sorted(lefts), dtype=int), n,
    )
    # disjoint pairs: |i - j| >= 2, at least one primary, no double counting
    univ_arr = np.asarray(sorted(universe), dtype=int)
    pa, pb = [], []
    for i in prim:
        js = univ_arr[univ_arr >= i + 2]
        pa.append(np.full(js.size, i))
        pb.append(js)
        js = univ_arr[univ_arr <= i - 2]
        js = js[~np.isin(js, prim)]  # primary-primary pairs come from the right scan
        pa.append(np.full(js.size, i))
        pb.append(js)
    pa = np.concatenate(pa) if pa else np.empty(0, dtype=int)
    pb = np.concatenate(pb) if pb else np.empty(0, dtype=int)
    _pairs_block(flat, mesh.nodes, mesh.elements, s, grading, pa, pb, 2.0, n)
    return flat.reshape(n, n)


def _tail_matrix(mesh, s, order=9) -> np.ndarray:
    """2 * int_Omega phi_i phi_j tail(x) dx over Omega elements."""
    n = mesh.n_nodes
    flat = np.zeros(n * n)
    els = mesh.elements_in(Region.OMEGA)
    if els.size == 0:
        return flat.reshape(n, n)
    t, tw = _gauss01(order)
    a1 = mesh.nodes[mesh.elements[els, 0]]
    h = mesh.nodes[mesh.elements[els, 1]] - a1
    x = a1[:, None] + h[:, None] * t[None, :]
    tau = tail_integral(x, mesh.spec.radius, s)
    W = 2.0 * h[:, None] * tw[None, :] * tau
    D = np.vstack([1.0 - t, t])
    local = np.einsum("aq,bq,pq->pab", D, D, W)
    _accumulate(flat, mesh.elements[els], local, n)
    return flat.reshape(n, n)


def assemble_energy(
    mesh: Mesh1D,
    p: FracParams | None = None,
    grading: GradingConfig = DEFAULT_GRADING,
) -> EnergyMatrix:
    """Assemble the restricted Gagliardo matrix G (tail-corrected, exactly symmetric)."""
    p = p or FracParams(mesh.spec.s)
    omega = mesh.elements_in(Region.OMEGA)
    universe = np.arange(mesh.n_elements)
    G = _gagliardo_matrix(mesh, p.s, grading, omega, universe)
    G += _tail_matrix(mesh, p.s)
    G = 0.5 * (G + G.T)
    return EnergyMatrix(G=G, c_ns=p.c_ns)


def assemble_mass(mesh: Mesh1D, region: Region | None = None) -> np.ndarray:
    """Consistent P1 mass matrix, restricted to elements of one region if given."""
    n = mesh.n_nodes
    flat = np.zeros(n * n)
    els = np.arange(mesh.n_elements) if region is None else mesh.elements_in(region)
    if els.size:
        h = mesh.element_sizes()[els]
        local = np.empty((els.size, 2, 2))
        local[:, 0, 0] = local[:, 1, 1] = h / 3.0
        local[:, 0, 1] = local[:, 1, 0] = h / 6.0
        _accumulate(flat, mesh.elements[els], local, n)
    return flat.reshape(n, n)


def assemble_sigma2_gram(
    mesh: Mesh1D,
    p: FracParams | None = None,
    grading: GradingConfig = DEFAULT_GRADING,
) -> Sigma2Gram:
    """Assemble M, H and S = M + H over the obstacle nodes."""
    p = p or FracParams(mesh.spec.s)
    obstacle = mesh.obstacle_nodes
    if obstacle.size == 0:
        raise EmptyRegion("Sigma2 has no interior nodes")
    s2_els = mesh.elements_in(Region.SIGMA2)
    M_full = assemble_mass(mesh, Region.SIGMA2)
    H_full = _gagliardo_matrix(mesh, p.s, grading, s2_els, s2_els)
    H_full = 0.5 * (H_full + H_full.T)
    lumped = M_full[obstacle, :].sum(axis=1)
    M = M_full[np.ix_(obstacle, obstacle)]
    H = H_full[np.ix_(obstacle, obstacle)]
    return Sigma2Gram(nodes=obstacle, M=M, H=H, S=M + H, lumped=lumped)


def assemble_load(mesh: Mesh1D, f, order: int = 9) -> np.ndarray:
    """Load vector <f, phi_i> with f supported in Omega, by per-element Gauss."""
    ell = np.zeros(mesh.n_nodes)
    els = mesh.elements_in(Region.OMEGA)
    if els.size == 0:
        return ell
    t, tw = _gauss01(order)
    a1 = mesh.nodes[mesh.elements[els, 0]]
    h = mesh.nodes[mesh.elements[els, 1]] - a1
    x = a1[:, None] + h[:, None] * t[None, :]
    fx = np.full_like(x, float(f)) if np.isscalar(f) else np.asarray(f(x), dtype=float)
    W = h[:, None] * tw[None, :] * fx
    vals = np.stack([(W * (1.0 - t)).sum(axis=1), (W * t).sum(axis=1)], axis=1)
    np.add.at(ell, mesh.elements[els].ravel(), vals.ravel())
    return ell


def build_system(
    mesh: Mesh1D,
    data: ProblemData,
    p: FracParams | None = None,
    grading: GradingConfig = DEFAULT_GRADING,
) -> DiscreteSystem:
    """Assemble all operators and loads for one problem instance."""
    p = p or FracParams(mesh.spec.s)
    energy = assemble_energy(mesh, p, grading)
    gram = assemble_sigma2_gram(mesh, p, grading)
    load_raw = assemble_load(mesh, data.f)

    n = mesh.n_nodes
    lift = np.zeros(n)
    if data.z is not None:
        z = np.asarray(data.z, dtype=float)
        if z.shape != (n,):
            raise ParameterError("z must be a full-length nodal vector")
        free = np.ones(n, dtype=bool)
        free[mesh.dirichlet_nodes] = False
        if np.any(z[free] != 0.0):
            raise ParameterError("z may be nonzero only at Dirichlet nodes")
        if z[0] != 0.0 or z[-1] != 0.0:
            raise ParameterError("z must vanish at +-R (compact support inside (-R, R))")
        lift = z
    load = load_raw - energy.E @ lift if np.any(lift) else load_raw.copy()

    m = mesh.obstacle_nodes.size
    phi = np.full(m, float(data.phi)) if np.isscalar(data.phi) else np.asarray(
        data.phi, dtype=float
    ).copy()
    if phi.shape != (m,):
        raise ParameterError(f"phi must be scalar or length {m}")
    if not np.all(np.isfinite(phi) | (phi >= INF_OBSTACLE)):
        raise ParameterError("phi must be finite (or the +1e30 surrogate) at obstacle nodes")
    phi_full = np.full(n, INF_OBSTACLE)
    phi_full[mesh.obstacle_nodes] = phi
    mass_full = np.zeros(n)
    mass_full[mesh.obstacle_nodes] = gram.lumped
    return DiscreteSystem(
        mesh=mesh,
        params=p,
        energy=energy,
        gram=gram,
        load_raw=load_raw,
        lift=lift,
        load=load,
        phi=phi,
        phi_full=phi_full,
        mass_lumped_full=mass_full,
        data=data,
    )


# ---------------------------------------------------------------------------
# pointwise nonlocal operators for P1 interpolants
# ---------------------------------------------------------------------------

def _pow_moment(a, b, kappa):
    """int_a^b t^(kappa-1) dt for 0 < a < b, stable for kappa near 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    span = np.log(b / a)
    z = kappa * span
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, kappa)
    main = np.expm1(z) / safe
    series = span * (1.0 + 0.5 * z + z * z / 6.0)
    return np.exp(kappa * np.log(a)) * np.where(small, series, main)


def _p1_nonlocal_sum(nodes, u_nodes, els, x, ux, s, skip=None):
    """Closed-form sum of element integrals of (ux - u(y)) * kernel over els.

    nodes/u_nodes: mesh nodes and nodal values; els: (nel, 2) node index pairs;
    x: (npts,) evaluation points; ux: (npts,) values of the interpolant (or
    exterior extension) at x; skip: optional (npts,) element positions (into
    els) to exclude (the containing element).
    """
    twos = 2.0 * s
    yl = nodes[els[:, 0]]
    yr = nodes[els[:, 1]]
    ul = u_nodes[els[:, 0]]
    ur = u_nodes[els[:, 1]]
    beta = (ur - ul) / (yr - yl)
    out = np.zeros(x.size)
    step = max(1, _CHUNK // els.shape[0])
    for k0 in range(0, x.size, step):
        sl = slice(k0, min(k0 + step, x.size))
        xc = x[sl][:, None]
        c = ux[sl][:, None] - (ul[None, :] + beta[None, :] * (xc - yl[None, :]))
        right = yl[None, :] >= xc  # element right of the point
        left = yr[None, :] <= xc
        t1 = np.where(right, yl[None, :] - xc, xc - yr[None, :])
        t2 = np.where(right, yr[None, :] - xc, xc - yl[None, :])
        mask = right | left
        if skip is not None:
            mask = mask.copy()
            rows = np.arange(k0, min(k0 + step, x.size)) - k0
            mask[rows, skip[sl]] = False
        t1 = np.where(mask, t1, 1.0)  # dummy positive values where masked
        t2 = np.where(mask, t2, 2.0)
        m0 = _pow_moment(t1, t2, -twos)
        m1 = _pow_moment(t1, t2, 1.0 - twos)
        sign = np.where(right, -1.0, 1.0)
        contrib = np.where(mask, c * m0 + sign * beta[None, :] * m1, 0.0)
        out[sl] = contrib.sum(axis=1)
    return out


def interaction_apply(
    mesh: Mesh1D,
    w: np.ndarray,
    pts,
    p: FracParams | None = None,
) -> np.ndarray:
    """Interaction operator N_s w at exterior points.

    N_s w(x) = C_{1,s} int_Omega (w(x) - w(y)) |x-y|^(-1-2s) dy with w the P1
    interpolant of the nodal vector (zero beyond the mesh). Element integrals
    are evaluated in closed form; points must lie outside closure(Omega).
    """
    p = p or FracParams(mesh.spec.s)
    pts = np.atleast_1d(np.asarray(pts, dtype=float))
    a, b = mesh.spec.omega
    if np.any((pts >= a) & (pts <= b)):
        raise DomainError("interaction operator requires points outside closure(Omega)")
    w = np.asarray(w, dtype=float)
    wx = np.where(np.abs(pts) <= mesh.spec.radius, mesh.interpolate(w, pts), 0.0)
    om = mesh.elements_in(Region.OMEGA)
    vals = _p1_nonlocal_sum(mesh.nodes, w, mesh.elements[om], pts, wx, p.s)
    return p.c_ns * vals


def apply_fractional_laplacian(
    mesh: Mesh1D,
    u: np.ndarray,
    pts,
    p: FracParams | None = None,
) -> np.ndarray:
    """Pointwise (-Delta)^s of the P1 interpolant at points interior to elements.

    The principal value is realized by cancelling the symmetric window inside
    the containing element (where the interpolant is linear); the remainder is
    integrated in closed form, including the tail |y| > R where u = 0.
    Points must not coincide with mesh nodes.
    """
    p = p or FracParams(mesh.spec.s)
    pts = np.atleast_1d(np.asarray(pts, dtype=float))
    if np.any((pts <= mesh.nodes[0]) | (pts >= mesh.nodes[-1])):
        raise DomainError("points must lie strictly inside the mesh")
    if np.any(np.isin(pts, mesh.nodes)):
        raise DomainError("points must not coincide with mesh nodes")
    u = np.asarray(u, dtype=float)
    ux = mesh.interpolate(u, pts)
    containing = np.searchsorted(mesh.nodes, pts) - 1
    vals = _p1_nonlocal_sum(
        mesh.nodes, u, mesh.elements, pts, ux, p.s, skip=containing
    )
    # containing element: symmetric window cancels; integrate the wider remainder
    yl = mesh.nodes[containing]
    yr = mesh.nodes[containing + 1]
    beta = (u[containing + 1] - u[containing]) / (yr - yl)
    dl = pts - yl
    dr = yr - pts
    delta = np.minimum(dl, dr)
    twos = 2.0 * p.s
    rem = np.zeros_like(pts)
    wide_r = dr > dl
    if np.any(wide_r):
        rem[wide_r] = -beta[wide_r] * _pow_moment(
            delta[wide_r], dr[wide_r], 1.0 - twos
        )
    wide_l = dl > dr
    if np.any(wide_l):
        rem[wide_l] = beta[wide_l] * _pow_moment(
            delta[wide_l], dl[wide_l], 1.0 - twos
        )
    vals += rem
    vals += ux * tail_integral(pts, mesh.spec.radius, p.s)
    return p.c_ns * vals


# ---------------------------------------------------------------------------
# integration-by-parts diagnostic
# ---------------------------------------------------------------------------

def _graded_cells01(levels: int = 4, ratio: float = 0.25) -> np.ndarray:
    """Cell edges on [0, 1] geometrically refined toward both endpoints."""
    left = np.array([0.0] + [0.5 * ratio**k for k in range(levels, -1, -1)])
    return np.concatenate([left, (1.0 - left[::-1])[1:]])


def element_quadrature(mesh, els, order=6, graded=False):
    """Gauss points/weights per element; optionally graded toward endpoints.

    Returns (x, w) flat arrays covering the selected elements.
    """
    t, tw = _gauss01(order)
    if graded:
        edges = _graded_cells01()
        lo, hi = edges[:-1], edges[1:]
        t = (lo[:, None] + (hi - lo)[:, None] * t[None, :]).ravel()
        tw = ((hi - lo)[:, None] * tw[None, :]).ravel()
    a1 = mesh.nodes[mesh.elements[els, 0]]
    h = mesh.element_sizes()[els]
    x = (a1[:, None] + h[:, None] * t[None, :]).ravel()
    w = (h[:, None] * tw[None, :]).ravel()
    return x, w


def ibp_residual(
    mesh: Mesh1D,
    u: np.ndarray,
    v: np.ndarray,
    p: FracParams | None = None,
    energy: EnergyMatrix | None = None,
    warn_tol: float = 1e-3,
    return_terms: bool = False,
):
    """Integration-by-parts defect |E(u,v) - int_Omega v (-Delta)^s u - int_Sigma2 v N_s u|.

    A diagnostic for smooth u (nodal samples of a C^2 bump); v must vanish at
    Dirichlet nodes. The bilinear term uses the assembled matrix, the other two
    independent pointwise evaluation plus Gauss quadrature in x.
    """
    p = p or FracParams(mesh.spec.s)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v[mesh.dirichlet_nodes] != 0.0):
        raise ParameterError("v must vanish at Dirichlet nodes")
    if energy is None:
        energy = assemble_energy(mesh, p)
    bilinear = float(v @ energy.E @ u)

    om = mesh.elements_in(Region.OMEGA)
    x, wq = element_quadrature(mesh, om, order=6, graded=True)
    frac = apply_fractional_laplacian(mesh, u, x, p)
    volume = float(np.sum(wq * mesh.interpolate(v, x) * frac))

    s2 = mesh.elements_in(Region.SIGMA2)
    xs, ws = element_quadrature(mesh, s2, order=7)
    inter = interaction_apply(mesh, u, xs, p)
    boundary = float(np.sum(ws * mesh.interpolate(v, xs) * inter))

    residual = abs(bilinear - volume - boundary)
    scale = abs(float(u @ energy.E @ u)) + 1.0
    if residual > warn_tol * scale:
        warnings.warn(
            f"integration-by-parts terms disagree: residual {residual:.3e} "
            f"exceeds {warn_tol:.1e} * scale {scale:.3e}",
            AccuracyWarning,
            stacklevel=2,
        )
    if return_terms:
        return residual, {
            "bilinear": bilinear,
            "volume": volume,
            "boundary": boundary,
            "scale": scale,
        }
    return residual
