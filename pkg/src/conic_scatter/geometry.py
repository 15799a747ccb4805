"""Cross-section geometry and the smooth radial cutoff.

The boundary-at-infinity is a circle carrying a positive density H(theta)
and a positive (scalar) tensor h(theta). Its operator

    Q = -1/2 H^-1 d/dtheta ( H h d/dtheta )

is assembled in conservative form on a uniform periodic grid, so it is
Hermitian w.r.t. the weighted inner product sum_j w_j H_j conj(u_j) v_j and
annihilates constants exactly. Higher-dimensional cross-sections enter only
through user-supplied (nodes, weights, H, Q) data via
:meth:`CrossSection.from_data`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import GeometryError, NumericalError
from .fd import staggered_gradient_periodic

# ---------------------------------------------------------------------------
# Smooth cutoff j(r): 0 for r <= 1/2, 1 for r >= 1, C^inf and monotone.
# j(r) = sigma(2r - 1) with the symmetric mollifier step
# sigma(t) = f(t) / (f(t) + f(1-t)), f(t) = exp(-1/t) for t > 0.
# The symmetry gives j(3/4) = 1/2 exactly.
# ---------------------------------------------------------------------------


def _f(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _f1(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    out[pos] = np.exp(-1.0 / tp) / tp**2
    return out


def _f2(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    out[pos] = np.exp(-1.0 / tp) * (1.0 / tp**4 - 2.0 / tp**3)
    return out


def _sigma_terms(t: np.ndarray):
    f, g = _f(t), _f(1.0 - t)
    f1, g1 = _f1(t), -_f1(1.0 - t)
    f2, g2 = _f2(t), _f2(1.0 - t)
    return f, g, f1, g1, f2, g2


def smooth_step(t):
    """sigma(t): 0 for t <= 0, 1 for t >= 1, smooth and increasing."""
    t = np.asarray(t, dtype=float)
    f, g, *_ = _sigma_terms(np.clip(t, -1.0, 2.0))
    s = f + g
    with np.errstate(invalid="ignore"):
        out = np.where(s > 0, f / np.where(s > 0, s, 1.0), 0.0)
    out = np.where(t >= 1.0, 1.0, np.where(t <= 0.0, 0.0, out))
    return out if out.ndim else float(out)


def smooth_step_d1(t):
    """First derivative of :func:`smooth_step`."""
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    out = np.zeros_like(t)
    if np.any(inside):
        f, g, f1, g1, _, _ = _sigma_terms(t[inside])
        s = f + g
        out[inside] = (f1 * g - f * g1) / s**2
    return out if out.ndim else float(out)


def smooth_step_d2(t):
    """Second derivative of :func:`smooth_step`."""
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    out = np.zeros_like(t)
    if np.any(inside):
        f, g, f1, g1, f2, g2 = _sigma_terms(t[inside])
        s = f + g
        num = f1 * g - f * g1
        num1 = f2 * g - f * g2
        out[inside] = (num1 * s - 2.0 * num * (f1 + g1)) / s**3
    return out if out.ndim else float(out)


def cutoff_j(r):
    """The radial cutoff: 0 for r <= 1/2, 1 for r >= 1, smooth, monotone."""
    r = np.asarray(r, dtype=float)
    out = smooth_step(2.0 * r - 1.0)
    return out


def cutoff_j_d1(r):
    r = np.asarray(r, dtype=float)
    return 2.0 * smooth_step_d1(2.0 * r - 1.0)


def cutoff_j_d2(r):
    r = np.asarray(r, dtype=float)
    return 4.0 * smooth_step_d2(2.0 * r - 1.0)


def bracket(r):
    """<x> = 1 + r j(r) on the end, 1 on the cap (signed r uses |r|)."""
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    out = 1.0 + a * cutoff_j(a)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CutoffProfile:
    """Evaluation rules for j, j', j'' and the bracket weight."""

    j: Callable = cutoff_j
    j1: Callable = cutoff_j_d1
    j2: Callable = cutoff_j_d2
    bracket: Callable = bracket


# ---------------------------------------------------------------------------
# Cross-section
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrossSection:
    """Discretized boundary circle with measure H dtheta and operator Q.

    Attributes
    ----------
    theta_nodes : (N,) angle samples on [0, 2pi), uniform.
    quad_weights : (N,) positive quadrature weights (2pi/N).
    H_values, h_values : density and tensor at the nodes.
    Q_matrix : dense N x N matrix of Q, Hermitian w.r.t. sum w H conj(u) v.
    q : (N,) eigenvalues of Q, ascending.
    modes : (N, N) eigenvectors (columns), orthonormal in the weighted
        inner product.
    """

    theta_nodes: np.ndarray
    quad_weights: np.ndarray
    H_values: np.ndarray
    h_values: np.ndarray | None
    Q_matrix: np.ndarray
    q: np.ndarray
    modes: np.ndarray
    H_rule: Callable | None = None
    h_rule: Callable | None = None
    stiffness: np.ndarray = field(default=None, repr=False)
    grad: sp.csr_matrix = field(default=None, repr=False)
    theta_mid: np.ndarray = field(default=None, repr=False)

    @property
    def n_theta(self) -> int:
        return self.theta_nodes.size

    @property
    def mass(self) -> np.ndarray:
        """Diagonal of the weighted inner product, w_j H_j."""
        return self.quad_weights * self.H_values

    @property
    def Q_sparse(self) -> sp.csr_matrix:
        """Q as a sparse matrix (banded for the circle flux form)."""
        Q = sp.csr_matrix(self.Q_matrix)
        Q.eliminate_zeros()
        return Q

    def inner(self, u, v):
        """Weighted inner product on the cross-section (conjugate-linear in u)."""
        return np.sum(self.mass * np.conj(u) * v, axis=-1)

    def to_modes(self, u: np.ndarray) -> np.ndarray:
        """Expand nodal data (..., N) in the Q eigenbasis."""
        return u @ (self.mass[:, None] * np.conj(self.modes))

    def from_modes(self, c: np.ndarray) -> np.ndarray:
        """Rebuild nodal data from mode coefficients (..., N_modes)."""
        return c @ self.modes.T[: c.shape[-1]]

    @staticmethod
    def from_data(theta_nodes, quad_weights, H_values, Q_matrix) -> "CrossSection":
        """Build a cross-section from user-supplied (nodes, weights, H, Q) data.

        ``Q_matrix`` must be Hermitian w.r.t. the supplied weighted inner
        product. ``h_values`` is unavailable on this path, so operator
        assembly is restricted to angular coefficients proportional to the
        supplied Q (a3 = c(r) * h).
        """
        theta_nodes = np.asarray(theta_nodes, float)
        w = np.asarray(quad_weights, float)
        H = np.asarray(H_values, float)
        if np.any(w <= 0) or np.any(H <= 0):
            raise GeometryError("quad_weights and H must be strictly positive")
        Q = np.asarray(Q_matrix)
        m = w * H
        K = m[:, None] * Q
        defect = np.linalg.norm(K - K.conj().T) / max(np.linalg.norm(K), 1e-300)
        if defect > 1e-10:
            raise GeometryError(
                f"Q_matrix not Hermitian w.r.t. the weighted inner product "
                f"(relative defect {defect:.2e})"
            )
        Ks = 0.5 * (K + K.conj().T)
        try:
            q, modes = scipy.linalg.eigh(Ks, np.diag(m))
        except scipy.linalg.LinAlgError as exc:  # pragma: no cover
            raise NumericalError(f"cross-section eigensolve failed: {exc}") from exc
        return CrossSection(
            theta_nodes=theta_nodes, quad_weights=w, H_values=H, h_values=None,
            Q_matrix=Q, q=q, modes=modes, stiffness=Ks,
        )


def build_cross_section(theta_count: int, H_rule=None, h_rule=None) -> CrossSection:
    """Assemble the circle cross-section with Q in conservative form.

    Q = 1/(2 H) G^T diag(H h at midpoints) G with G the staggered periodic
    gradient, eigen-decomposed in the H dtheta inner product.
    """
    if theta_count < 4:
        raise GeometryError("theta_count must be >= 4")
    H_rule = H_rule if H_rule is not None else (lambda th: np.ones_like(th))
    h_rule = h_rule if h_rule is not None else (lambda th: np.ones_like(th))
    dtheta = 2.0 * np.pi / theta_count
    theta = dtheta * np.arange(theta_count)
    theta_mid = theta + 0.5 * dtheta
    H = np.asarray(H_rule(theta), float) * np.ones(theta_count)
    h = np.asarray(h_rule(theta), float) * np.ones(theta_count)
    H_mid = np.asarray(H_rule(theta_mid), float) * np.ones(theta_count)
    h_mid = np.asarray(h_rule(theta_mid), float) * np.ones(theta_count)
    if np.any(H <= 0) or np.any(H_mid <= 0):
        raise GeometryError("H must be strictly positive on the circle")
    if np.any(h <= 0) or np.any(h_mid <= 0):
        raise GeometryError("h must be strictly positive on the circle")

    G = staggered_gradient_periodic(theta_count, dtheta)
    w = np.full(theta_count, dtheta)
    # stiffness K = 1/2 * dtheta * G^T diag(H h) G  (symmetric PSD)
    K = 0.5 * dtheta * (G.T @ sp.diags(H_mid * h_mid) @ G).toarray()
    K = 0.5 * (K + K.T)
    mass = w * H
    Q = K / mass[:, None]
    try:
        q, modes = scipy.linalg.eigh(K, np.diag(mass))
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericalError(f"cross-section eigensolve failed: {exc}") from exc
    return CrossSection(
        theta_nodes=theta, quad_weights=w, H_values=H, h_values=h,
        Q_matrix=Q, q=q, modes=modes, H_rule=H_rule, h_rule=h_rule,
        stiffness=K, grad=G, theta_mid=theta_mid,
    )
