"""Radial grids for the manifold and for the reference line R x circle.

The manifold grid covers (0, R_max] (or [r0, R_max]) with uniform spacing;
the Dirichlet walls are excluded from the degrees of freedom and kept as
metadata. The measure weight of a node (r_i, theta_j) is
r_i^(n-1) H(theta_j) dr w_j, exact on the whole grid (the cap of the concrete
cone carries the same degenerate measure).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, GeometryError, ResolutionError
from .geometry import CrossSection

CAP_POLICIES = ("half_line_regular", "dirichlet_at_r0")


@dataclass(frozen=True)
class RadialGrid:
    """Uniform radial grid on the manifold side.

    ``r_nodes`` are the interior degrees of freedom; the Dirichlet wall at
    R_max (and at r0 under the dirichlet_at_r0 policy) sits one spacing
    beyond the last/first node, its zero value entering through the
    conservative boundary flux.
    """

    cap_policy: str
    r_nodes: np.ndarray
    dr: float
    n: int
    R_max: float
    r0: float
    cs: CrossSection

    @property
    def n_r(self) -> int:
        return self.r_nodes.size

    @property
    def n_theta(self) -> int:
        return self.cs.n_theta

    @property
    def radial_weight(self) -> np.ndarray:
        """r^(n-1) dr per node."""
        return self.r_nodes ** (self.n - 1) * self.dr

    @property
    def measure(self) -> np.ndarray:
        """(n_r, n_theta) array of measure weights G dr dtheta."""
        return self.radial_weight[:, None] * self.cs.mass[None, :]

    def flat_measure(self) -> np.ndarray:
        return self.measure.ravel()


@dataclass(frozen=True)
class LineGrid:
    """Uniform grid on the reference space R x circle, Dirichlet at +-R_max."""

    r_nodes: np.ndarray
    dr: float
    R_max: float
    cs: CrossSection

    @property
    def n_r(self) -> int:
        return self.r_nodes.size

    @property
    def n_theta(self) -> int:
        return self.cs.n_theta

    @property
    def measure(self) -> np.ndarray:
        return np.full(self.n_r, self.dr)[:, None] * self.cs.mass[None, :]

    def flat_measure(self) -> np.ndarray:
        return self.measure.ravel()


def build_radial_grid(R_max: float, node_count: int, cap_policy: str, n: int,
                      cs: CrossSection, r0: float = 0.0,
                      k_max: float | None = None) -> RadialGrid:
    """Build the manifold grid; dr = (R_max - r0)/node_count.

    ``k_max`` triggers the wavelength resolution check k dr <= 1/2 for the
    largest configured wavenumber.
    """
    if cap_policy not in CAP_POLICIES:
        raise GeometryError(f"unknown cap policy {cap_policy!r}")
    if node_count < 4:
        raise GeometryError("node_count must be at least 4")
    if n < 2:
        raise GeometryError("dimension parameter n must be >= 2")
    if cap_policy == "half_line_regular":
        r0 = 0.0
    elif not 0.0 < r0 < R_max:
        raise GeometryError("dirichlet_at_r0 needs 0 < r0 < R_max")
    dr = (R_max - r0) / node_count
    if k_max is not None and k_max * dr > 0.5:
        raise ResolutionError(
            f"k*dr = {k_max * dr:.3g} > 0.5: grid cannot resolve wavenumber "
            f"{k_max:g} (need node_count >= {int(np.ceil(2 * k_max * (R_max - r0)))})"
        )
    r_nodes = r0 + dr * np.arange(1, node_count)
    return RadialGrid(cap_policy=cap_policy, r_nodes=r_nodes, dr=dr, n=n,
                      R_max=R_max, r0=r0, cs=cs)


def build_line_grid(grid: RadialGrid) -> LineGrid:
    """Reference grid sharing dr and the positive-r nodes with ``grid``."""
    dr = grid.dr
    m = int(round(grid.R_max / dr))
    if abs(m * dr - grid.R_max) > 1e-9 * dr:
        raise AlignmentError("R_max must be an integer number of radial steps")
    r_nodes = dr * np.arange(-m + 1, m)
    return LineGrid(r_nodes=r_nodes, dr=dr, R_max=grid.R_max, cs=grid.cs)


def tail_alignment(line: LineGrid, grid: RadialGrid) -> tuple[np.ndarray, np.ndarray]:
    """Indices (into line and grid nodes) of the shared positive radii.

    Raises AlignmentError when a manifold node inside the cutoff support has
    no partner on the line.
    """
    tol = 1e-9 * grid.dr
    line_pos = {}
    for k, r in enumerate(line.r_nodes):
        if r > 0:
            line_pos[round(r / grid.dr)] = k
    li, gi = [], []
    for i, r in enumerate(grid.r_nodes):
        key = round(r / grid.dr)
        k = line_pos.get(key)
        if k is not None and abs(line.r_nodes[k] - r) <= tol:
            li.append(k)
            gi.append(i)
        elif r > 0.5:
            raise AlignmentError(
                f"manifold node r = {r:g} has no aligned reference node")
    return np.asarray(li), np.asarray(gi)
