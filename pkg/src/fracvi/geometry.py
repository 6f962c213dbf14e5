"""Truncated 1D computational geometry and tagged piecewise-linear meshes.

The observation interval Omega = (a, b) is surrounded by an exterior that is
split into obstacle intervals Sigma2 (bounded, away from Omega) and the
Dirichlet remainder Sigma1, which also absorbs the unbounded tail |x| > R.
Meshes cover exactly [-R, R]; every region boundary is a node, so each element
lies inside a single region.

Constraint convention: nodes adjacent to a Sigma1 element carry the Dirichlet
tag (conforming approximation of the zero exterior condition); nodes shared by
Omega and Sigma2 stay free.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import (
    DegenerateRegionWarning,
    OverlapError,
    ParameterError,
    TruncationError,
)


class Region(IntEnum):
    OMEGA = 0
    SIGMA1 = 1
    SIGMA2 = 2

    @property
    def label(self) -> str:
        return {0: "Omega", 1: "Sigma1", 2: "Sigma2"}[int(self)]


@dataclass(frozen=True)
class DomainSpec:
    """Geometry and fractional order of one problem instance.

    omega: open interval (a, b).
    sigma2: bounded open intervals, disjoint from each other and from
        closure(omega); they carry the obstacle.
    radius: truncation radius R; the tail |x| > R belongs to Sigma1 with
        zero exterior datum.
    s: fractional order in (0, 1).
    """

    omega: tuple[float, float]
    sigma2: tuple[tuple[float, float], ...]
    radius: float
    s: float

    def __post_init__(self):
        object.__setattr__(self, "omega", (float(self.omega[0]), float(self.omega[1])))
        object.__setattr__(
            self, "sigma2", tuple((float(lo), float(hi)) for lo, hi in self.sigma2)
        )
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "s", float(self.s))


def validate_spec(spec: DomainSpec) -> DomainSpec:
    """Check all DomainSpec invariants; return the spec unchanged if they hold.

    Raises ParameterError, OverlapError or TruncationError.
    """
    a, b = spec.omega
    if not (math.isfinite(a) and math.isfinite(b) and a < b):
        raise ParameterError(f"omega must be a bounded interval (a, b), got {spec.omega}")
    if not (0.0 < spec.s < 1.0):
        raise ParameterError(f"fractional order s must lie in (0, 1), got {spec.s}")
    if not (math.isfinite(spec.radius) and spec.radius > 0):
        raise ParameterError(f"truncation radius must be positive, got {spec.radius}")
    for lo, hi in spec.sigma2:
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ParameterError(f"sigma2 interval ({lo}, {hi}) is not a bounded interval")
        # open interval vs closed Omega: touching endpoints are allowed, overlap is not
        if lo < b and hi > a:
            raise OverlapError(
                f"sigma2 interval ({lo}, {hi}) meets closure of omega {spec.omega}"
            )
    intervals = sorted(spec.sigma2)
    for (lo1, hi1), (lo2, hi2) in zip(intervals, intervals[1:]):
        if lo2 < hi1:
            raise OverlapError(
                f"sigma2 intervals ({lo1}, {hi1}) and ({lo2}, {hi2}) overlap"
            )
    if spec.radius <= max(abs(a), abs(b)):
        raise TruncationError(
            f"radius {spec.radius} does not enclose omega {spec.omega}"
        )
    for lo, hi in spec.sigma2:
        if lo <= -spec.radius or hi >= spec.radius:
            raise TruncationError(
                f"sigma2 interval ({lo}, {hi}) is not inside (-{spec.radius}, {spec.radius})"
            )
    return spec


@dataclass(frozen=True, eq=False)
class Mesh1D:
    """Tagged P1 mesh on [-R, R].

    nodes: strictly increasing coordinates, nodes[0] = -R, nodes[-1] = R.
    elements: (n_el, 2) consecutive node index pairs.
    node_tags / element_tags: Region values.
    dirichlet_nodes: Sigma1 nodes and interface nodes shared with Sigma1.
    obstacle_nodes: interior Sigma2 nodes (disjoint from dirichlet_nodes).
    """

    spec: DomainSpec
    target_h: float
    nodes: np.ndarray
    elements: np.ndarray
    node_tags: np.ndarray
    element_tags: np.ndarray
    dirichlet_nodes: np.ndarray
    obstacle_nodes: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def free_nodes(self) -> np.ndarray:
        """All non-Dirichlet nodes (Omega dofs plus obstacle dofs)."""
        return np.nonzero(self.node_tags != Region.SIGMA1)[0]

    def element_sizes(self) -> np.ndarray:
        return self.nodes[self.elements[:, 1]] - self.nodes[self.elements[:, 0]]

    def elements_in(self, region: Region) -> np.ndarray:
        return np.nonzero(self.element_tags == region)[0]

    def nodes_in(self, region: Region) -> np.ndarray:
        return np.nonzero(self.node_tags == region)[0]

    def interpolate(self, values: np.ndarray, x) -> np.ndarray:
        """Evaluate the P1 interpolant of nodal values at points x in [-R, R]."""
        return np.interp(x, self.nodes, values)


def _breakpoints(spec: DomainSpec) -> list[tuple[float, float, Region]]:
    """Atomic intervals of [-R, R], each inside exactly one region."""
    pts = {-spec.radius, spec.radius, *spec.omega}
    for lo, hi in spec.sigma2:
        pts.update((lo, hi))
    pts = sorted(pts)
    pieces = []
    for lo, hi in zip(pts, pts[1:]):
        mid = 0.5 * (lo + hi)
        if spec.omega[0] < mid < spec.omega[1]:
            tag = Region.OMEGA
        elif any(s_lo < mid < s_hi for s_lo, s_hi in spec.sigma2):
            tag = Region.SIGMA2
        else:
            tag = Region.SIGMA1
        pieces.append((lo, hi, tag))
    return pieces


def build_mesh(spec: DomainSpec, h: float) -> Mesh1D:
    """Build the tagged mesh with target element size h.

    Each atomic region piece gets ceil(length/h) uniform elements, so actual
    sizes fall in [h/2, h]; pieces narrower than h/2 get a single element and
    a DegenerateRegionWarning. Deterministic: identical inputs give
    bit-identical meshes.
    """
    validate_spec(spec)
    if not (h > 0):
        raise ParameterError(f"target element size must be positive, got {h}")

    node_chunks = []
    elem_tags = []
    for lo, hi, tag in _breakpoints(spec):
        length = hi - lo
        if length < 0.5 * h * (1.0 - 1e-12):
            warnings.warn(
                f"region piece ({lo}, {hi}) is narrower than h/2; using one element",
                DegenerateRegionWarning,
                stacklevel=2,
            )
        n_el = max(1, math.ceil(length / h - 1e-9))
        pts = np.linspace(lo, hi, n_el + 1)
        node_chunks.append(pts if not node_chunks else pts[1:])
        elem_tags.extend([tag] * n_el)

    nodes = np.concatenate(node_chunks)
    n = nodes.size
    elements = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    element_tags = np.array(elem_tags, dtype=np.int8)

    # node tag priority: any adjacent Sigma1 element wins, then Omega, then Sigma2
    node_tags = np.empty(n, dtype=np.int8)
    for i in range(n):
        adjacent = element_tags[max(0, i - 1):i + 1]
        if (adjacent == Region.SIGMA1).any():
            node_tags[i] = Region.SIGMA1
        elif (adjacent == Region.OMEGA).any():
            node_tags[i] = Region.OMEGA
        else:
            node_tags[i] = Region.SIGMA2

    return Mesh1D(
        spec=spec,
        target_h=float(h),
        nodes=nodes,
        elements=elements,
        node_tags=node_tags,
        element_tags=element_tags,
        dirichlet_nodes=np.nonzero(node_tags == Region.SIGMA1)[0],
        obstacle_nodes=np.nonzero(node_tags == Region.SIGMA2)[0],
    )
