"""Staggered and centered finite-difference building blocks.

All second-order operators in the package are assembled in conservative
(flux) form K = G^T W G from the staggered gradients built here, so
Hermiticity w.r.t. the measure and positive semidefiniteness hold exactly,
independent of coefficients. Interior stencils are 4th order; the rows next
to a boundary fall back to the (centered) 2nd-order two-point stencil.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

# 4th-order staggered first-derivative coefficients at a midpoint i+1/2,
# applied to nodes (i-1, i, i+1, i+2).
_C4 = np.array([1.0, -27.0, 27.0, -1.0]) / 24.0


def staggered_gradient_periodic(n: int, d: float) -> sp.csr_matrix:
    """Gradient from n periodic nodes to the n midpoints, 4th order.

    Row j evaluates u' at theta_j + d/2 from nodes (j-1, j, j+1, j+2) mod n.
    """
    rows, cols, vals = [], [], []
    for j in range(n):
        for off, c in zip((-1, 0, 1, 2), _C4):
            rows.append(j)
            cols.append((j + off) % n)
            vals.append(c / d)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def staggered_gradient_bounded(
    n: int, d: float, left: str, right: str
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Gradient from n bounded nodes to midpoints.

    ``left``/``right`` are ``"wall"`` (a homogeneous Dirichlet ghost half a
    step outside, contributing a boundary flux row) or ``"natural"`` (no
    boundary flux row; the conservative form then imposes the zero-flux /
    regular condition). Returns (G, offsets) where ``offsets[k]`` is the
    midpoint position of row k relative to node 0 in units of d
    (-0.5, 0.5, 1.5, ...).
    """
    if left not in ("wall", "natural") or right not in ("wall", "natural"):
        raise ValueError("boundary closure must be 'wall' or 'natural'")
    rows, cols, vals, offs = [], [], [], []
    k = 0
    if left == "wall":
        rows.append(k)
        cols.append(0)
        vals.append(1.0 / d)
        offs.append(-0.5)
        k += 1
    for i in range(n - 1):  # midpoint between nodes i and i+1
        if 1 <= i <= n - 3:
            for off, c in zip((-1, 0, 1, 2), _C4):
                rows.append(k)
                cols.append(i + off)
                vals.append(c / d)
        else:
            rows.append(k)
            cols.append(i)
            vals.append(-1.0 / d)
            rows.append(k)
            cols.append(i + 1)
            vals.append(1.0 / d)
        offs.append(i + 0.5)
        k += 1
    if right == "wall":
        rows.append(k)
        cols.append(n - 1)
        vals.append(-1.0 / d)
        offs.append(n - 0.5)
        k += 1
    G = sp.csr_matrix((vals, (rows, cols)), shape=(k, n))
    return G, np.asarray(offs)


def centered_first_derivative(n: int, d: float, periodic: bool = False) -> sp.csr_matrix:
    """Exactly antisymmetric 2nd-order centered first derivative at nodes.

    On a bounded grid the ghost values half outside are taken to be zero
    (Dirichlet), which keeps D^T = -D exactly; that exact antisymmetry is what
    makes the symmetric-splitting conjugate operator Hermitian by construction.
    """
    rows, cols, vals = [], [], []
    for i in range(n):
        for off, c in ((-1, -0.5 / d), (1, 0.5 / d)):
            j = i + off
            if periodic:
                j %= n
            elif not (0 <= j < n):
                continue
            rows.append(i)
            cols.append(j)
            vals.append(c)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
