import numpy as np
import pytest

from fracvi.assembly import ProblemData, build_system
from fracvi.diagnostics import canonical_problem
from fracvi.geometry import DomainSpec, build_mesh
from fracvi.solvers import solve_vi_pdas


@pytest.fixture(scope="session")
def sys_coarse():
    """Canonical active problem on a fast coarse mesh."""
    return canonical_problem(h=0.1)


@pytest.fixture(scope="session")
def vi_coarse(sys_coarse):
    return solve_vi_pdas(
        sys_coarse.E, sys_coarse.load, sys_coarse.phi_full,
        dirichlet=sys_coarse.dirichlet,
    )


@pytest.fixture(scope="session")
def mesh12():
    """The 12-element mesh used by the assembly-vs-oracle checks."""
    spec = DomainSpec(omega=(-1.0, 1.0), sigma2=((1.5, 2.5),), radius=3.0, s=0.5)
    mesh = build_mesh(spec, 0.5)
    assert mesh.n_elements == 12
    return mesh


@pytest.fixture(scope="session")
def sys_mixed():
    """Partially active variant: tilted obstacle releases the far end of Sigma2."""
    spec = DomainSpec(omega=(-1.0, 1.0), sigma2=((1.5, 2.5),), radius=4.0, s=0.5)
    mesh = build_mesh(spec, 0.05)
    phi = 0.1 + 8.0 * (mesh.nodes[mesh.obstacle_nodes] - 1.5)
    return build_system(mesh, ProblemData(f=5.0, phi=phi))


def random_spd_instance(rng, n, n_bounded=None):
    """Random well-conditioned SPD QP instance with a mix of bounds."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    diag = rng.uniform(1.0, 10.0, size=n)
    E = q @ np.diag(diag) @ q.T
    E = 0.5 * (E + E.T)
    ell = rng.standard_normal(n)
    w_unc = np.linalg.solve(E, ell)
    phi = np.full(n, 1e30)
    k = n if n_bounded is None else n_bounded
    idx = rng.choice(n, size=k, replace=False)
    phi[idx] = w_unc[idx] + rng.uniform(-1.0, 1.0, size=k)
    return E, ell, phi
