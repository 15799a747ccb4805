"""Assembly of the discrete operators P, P_f, J, T, Q-tilde and A.

All square operators are built in conservative form K = sum of G^T W G pieces
plus diagonal terms, so Hermiticity with respect to the measure holds to
rounding and P with V = 0 is positive semidefinite by construction. The
identification J multiplies by r^-(n-1)/2 j(r) on the aligned tail nodes and
T is formed as the matrix combination P J - J P_f, which keeps the Cook
integrand identity exact at the discrete level.

A nodal (r x theta) representation is assembled for every operator; a
retained-mode Galerkin reduction (:class:`ModalOperators`) provides the
block-banded radial systems used by the stationary and fast evolution paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientField
from .errors import ConjugateError, GeometryError, NumericalError
from .fd import centered_first_derivative, staggered_gradient_bounded
from .geometry import CrossSection, cutoff_j
from .grids import LineGrid, RadialGrid, tail_alignment


def _radial_gradient(grid: RadialGrid):
    left = "natural" if grid.cap_policy == "half_line_regular" else "wall"
    G, offs = staggered_gradient_bounded(grid.n_r, grid.dr, left=left, right="wall")
    r_mid = grid.r_nodes[0] + offs * grid.dr
    return G, r_mid


def _theta_midpoint_values(cs: CrossSection, rule):
    if cs.theta_mid is None or rule is None:
        raise GeometryError(
            "user-supplied cross-sections support only separable angular "
            "coefficients (a3 = c(r) h)")
    return np.asarray(rule(cs.theta_mid), float) * np.ones(cs.n_theta)


def hermiticity_defect(op: sp.spmatrix, mass: np.ndarray) -> float:
    """Relative defect of M op against its conjugate transpose."""
    K = (sp.diags(mass) @ op).tocsr()
    d = (K - K.conj().T).tocsr()
    return spla.norm(d) / max(spla.norm(K), 1e-300)


def measure_adjoint(op: sp.spmatrix, mass_from: np.ndarray, mass_to: np.ndarray):
    """Adjoint of op: (H_from, m_from) -> (H_to, m_to) w.r.t. both measures."""
    return sp.diags(1.0 / mass_from) @ op.conj().T @ sp.diags(mass_to)


def assemble_P(field: CoefficientField, grid: RadialGrid):
    """Flux-form discretization of the full second-order operator.

    Returns (P, K, mass_flat): P = M^-1 K with K real symmetric; adding the
    potential is a pure diagonal shift of K.
    """
    cs = grid.cs
    n, dr = grid.n, grid.dr
    r = grid.r_nodes
    nth = cs.n_theta
    G_r, r_mid = _radial_gradient(grid)
    mass = grid.flat_measure()

    rr = r[:, None]
    th = cs.theta_nodes[None, :]
    ones = np.ones((grid.n_r, nth))
    a1_mid = field.a1(r_mid[:, None], th) * np.ones((r_mid.size, nth))
    a1_nod = field.a1(rr, th) * ones
    a2_nod = field.a2(rr, th) * ones
    a3_nod = field.a3(rr, th) * ones
    V_nod = field.V(rr, th) * ones

    # pointwise positive definiteness of the sampled block
    h_ref = cs.h_values if cs.h_values is not None else np.ones(nth)
    if np.any(a3_nod <= 0) or np.any(a1_mid <= 0) or np.any(a1_nod <= 0) \
            or np.any(a1_nod * a3_nod / h_ref[None, :] - a2_nod**2 <= 0):
        raise GeometryError("assembly: coefficient block not positive definite")

    # radial part: 1/2 int a1 |du/dr|^2 G
    W1 = dr * (r_mid ** (n - 1))[:, None] * cs.mass[None, :] * a1_mid
    GR = sp.kron(G_r, sp.identity(nth, format="csr"), format="csr")
    K = 0.5 * (GR.T @ sp.diags(W1.ravel()) @ GR)

    # angular part: 1/2 int a3 |du/dtheta|^2 G / r^2
    if field.separable and field.c3 is not None:
        KQ = sp.csr_matrix(cs.stiffness)
        c3 = np.asarray(field.c3(r), float) * np.ones(grid.n_r)
        scale = dr * r ** (n - 3) * c3
        K = K + sp.kron(sp.diags(scale), KQ, format="csr")
    else:
        from .fd import staggered_gradient_periodic
        dth = cs.quad_weights[0]
        Gt = cs.grad if cs.grad is not None else staggered_gradient_periodic(nth, dth)
        H_mid = _theta_midpoint_values(cs, cs.H_rule)
        a3_mid = field.a3(rr, cs.theta_mid[None, :]) * ones
        W3 = dr * (r ** (n - 3))[:, None] * dth * H_mid[None, :] * a3_mid
        GT = sp.kron(sp.identity(grid.n_r, format="csr"), Gt, format="csr")
        K = K + 0.5 * (GT.T @ sp.diags(W3.ravel()) @ GT)

    # cross part: int a2 (du/dr)(du/dtheta) G / r, symmetrized
    if not field.a2_zero and np.max(np.abs(a2_nod)) > 0:
        C_r = centered_first_derivative(grid.n_r, dr)
        C_t = centered_first_derivative(nth, cs.quad_weights[0], periodic=True)
        CR = sp.kron(C_r, sp.identity(nth, format="csr"), format="csr")
        CT = sp.kron(sp.identity(grid.n_r, format="csr"), C_t, format="csr")
        W2 = (r ** (n - 2) * dr)[:, None] * cs.mass[None, :] * a2_nod
        D = sp.diags(W2.ravel())
        K = K + 0.5 * (CR.T @ D @ CT + CT.T @ D @ CR)

    K = K + sp.diags(mass * V_nod.ravel())
    K = (0.5 * (K + K.T)).tocsr()
    P = (sp.diags(1.0 / mass) @ K).tocsr()
    return P, K, mass


def assemble_Pf(line: LineGrid):
    """-1/2 d^2/dr^2 on the reference line, identity in theta."""
    G, _ = staggered_gradient_bounded(line.n_r, line.dr, left="wall", right="wall")
    D2 = 0.5 * (G.T @ G)  # already includes the 1/dr^2 from G
    Pf_r = D2.tocsr()
    Pf = sp.kron(Pf_r, sp.identity(line.n_theta, format="csr"), format="csr")
    return Pf, Pf_r, line.flat_measure()


def assemble_J(line: LineGrid, grid: RadialGrid, exponent_shift: float = 0.0):
    """Identification M_f -> M: multiply by r^-(n-1)/2 j(r) on aligned nodes.

    ``exponent_shift`` deliberately corrupts the weight exponent; it exists
    only for fault-injection in the verification suite.
    """
    li, gi = tail_alignment(line, grid)
    nth = grid.n_theta
    p = (grid.n - 1) / 2.0 + exponent_shift
    vals = grid.r_nodes[gi] ** (-p) * cutoff_j(grid.r_nodes[gi])
    keep = vals != 0.0
    rows = gi[keep]
    cols = li[keep]
    J_r = sp.csr_matrix((vals[keep], (rows, cols)), shape=(grid.n_r, line.n_r))
    return sp.kron(J_r, sp.identity(nth, format="csr"), format="csr")


def assemble_T(P, J, Pf) -> sp.csr_matrix:
    """T = P J - J P_f as an exact matrix combination."""
    return (P @ J - J @ Pf).tocsr()


def t_tail_profile(T: sp.csr_matrix, grid: RadialGrid) -> np.ndarray:
    """Row-block Frobenius norm of T at each radius (tail-decay diagnostic)."""
    nth = grid.n_theta
    T = T.tocsr()
    out = np.empty(grid.n_r)
    sq = np.asarray(T.multiply(T.conj()).sum(axis=1)).ravel().real
    for i in range(grid.n_r):
        out[i] = np.sqrt(sq[i * nth:(i + 1) * nth].sum())
    return out


def assemble_A(grid: RadialGrid, R_mourre: float, v1_support: float = 0.0):
    """Conjugate (dilation-type) operator, Hermitian w.r.t. the G measure.

    A = (1/2i) G^-1/2 (f d/dr + d/dr f) G^1/2 with f = j(r/R) r; zero on the
    cap. R must be large enough that j(r/R) annihilates the singular
    potential part.
    """
    if R_mourre < 1.0:
        raise ConjugateError("R_mourre must be >= 1")
    if v1_support > 0.5 * R_mourre:
        raise ConjugateError(
            f"R_mourre = {R_mourre:g} too small: j(r/R) must vanish on the "
            f"singular potential support (radius {v1_support:g})")
    r = grid.r_nodes
    f = cutoff_j(r / R_mourre) * r
    D = centered_first_derivative(grid.n_r, grid.dr)
    w = r ** ((grid.n - 1) / 2.0)
    Dt = sp.diags(1.0 / w) @ D @ sp.diags(w)
    F = sp.diags(f)
    A_r = (F @ Dt + Dt @ F) * (1.0 / 2j)
    return sp.kron(A_r, sp.identity(grid.n_theta, format="csr"), format="csr").tocsr()


def assemble_Qtilde(grid: RadialGrid) -> sp.csr_matrix:
    """Q-tilde = j(r) Q j(r) lifted to the manifold grid."""
    j2 = cutoff_j(grid.r_nodes) ** 2
    return sp.kron(sp.diags(j2), grid.cs.Q_sparse, format="csr")


def symmetrize(op: sp.spmatrix, mass: np.ndarray):
    """Measure-Hermitian part of op; returns (sym, relative skew defect)."""
    K = (sp.diags(mass) @ op).tocsr()
    skew = (K - K.conj().T) * 0.5
    defect = spla.norm(skew) / max(spla.norm(K), 1e-300)
    sym = sp.diags(1.0 / mass) @ (K + K.conj().T) * 0.5
    return sym.tocsr(), defect


def commutator_iPA(P: sp.spmatrix, A: sp.spmatrix, mass: np.ndarray):
    """i[P, A] symmetrized against floating-point skew; defect recorded."""
    C = 1j * (P @ A - A @ P)
    return symmetrize(C, mass)


# ---------------------------------------------------------------------------
# Bundled operator set
# ---------------------------------------------------------------------------


@dataclass
class OperatorSet:
    """Every discrete operator of one configuration, plus its grids."""

    cs: CrossSection
    field: CoefficientField
    grid: RadialGrid
    line: LineGrid
    P: sp.csr_matrix
    K: sp.csr_matrix
    mass: np.ndarray
    Pf: sp.csr_matrix
    Pf_r: sp.csr_matrix
    mass_f: np.ndarray
    J: sp.csr_matrix
    T: sp.csr_matrix
    Q_tilde: sp.csr_matrix
    A: sp.csr_matrix
    R_mourre: float
    _modal_cache: dict = dfield(default_factory=dict, repr=False)

    @property
    def J_adj(self) -> sp.csr_matrix:
        return measure_adjoint(self.J, self.mass_f, self.mass).tocsr()

    @property
    def T_adj(self) -> sp.csr_matrix:
        return measure_adjoint(self.T, self.mass_f, self.mass).tocsr()

    @property
    def decoupled(self) -> bool:
        return self.field.separable

    def bracket_weight(self, s: float, space: str = "M") -> np.ndarray:
        """<r>^-s as a flat diagonal on the requested space."""
        from .geometry import bracket
        if space == "M":
            b = bracket(self.grid.r_nodes)
            return np.repeat(b ** (-s), self.grid.n_theta)
        b = bracket(self.line.r_nodes)
        return np.repeat(b ** (-s), self.line.n_theta)

    def modal(self, mode_count: int) -> "ModalOperators":
        key = int(mode_count)
        if key not in self._modal_cache:
            self._modal_cache[key] = ModalOperators.build(self, key)
        return self._modal_cache[key]


def assemble_operator_set(field: CoefficientField, grid: RadialGrid,
                          line: LineGrid | None = None,
                          R_mourre: float = 2.0) -> OperatorSet:
    from .grids import build_line_grid
    line = line if line is not None else build_line_grid(grid)
    P, K, mass = assemble_P(field, grid)
    Pf, Pf_r, mass_f = assemble_Pf(line)
    J = assemble_J(line, grid)
    T = assemble_T(P, J, Pf)
    A = assemble_A(grid, R_mourre, v1_support=field.v1_support)
    Qt = assemble_Qtilde(grid)
    return OperatorSet(cs=grid.cs, field=field, grid=grid, line=line,
                       P=P, K=K, mass=mass, Pf=Pf, Pf_r=Pf_r, mass_f=mass_f,
                       J=J, T=T, Q_tilde=Qt, A=A, R_mourre=R_mourre)


# ---------------------------------------------------------------------------
# Retained-mode Galerkin reduction
# ---------------------------------------------------------------------------


def _block_diag_bsr(blocks: np.ndarray) -> sp.bsr_matrix:
    """Block-diagonal sparse matrix from (nb, m, m) dense blocks."""
    nb, m, _ = blocks.shape
    indptr = np.arange(nb + 1)
    indices = np.arange(nb)
    return sp.bsr_matrix((blocks, indices, indptr), shape=(nb * m, nb * m))


@dataclass
class ModalOperators:
    """Radial operators in the basis of the first ``n_modes`` Q-modes.

    Exact block reduction for separable coefficients; Galerkin truncation
    otherwise, with the cross-mode leakage of the angular coefficient
    recorded in ``leakage``.
    """

    opset: OperatorSet
    n_modes: int
    q: np.ndarray
    E: np.ndarray              # (n_theta, n_modes) retained eigenvectors
    P: sp.csr_matrix           # (n_r*M) x (n_r*M), r-major
    mass_r: np.ndarray         # radial measure, shared by all modes
    Pf: sp.csr_matrix
    Pf_r: sp.csr_matrix
    mass_f_r: np.ndarray
    J: sp.csr_matrix
    T: sp.csr_matrix
    A_r: sp.csr_matrix
    leakage: float

    @property
    def grid(self) -> RadialGrid:
        return self.opset.grid

    @property
    def line(self) -> LineGrid:
        return self.opset.line

    def mass_flat(self, space: str = "M") -> np.ndarray:
        if space == "M":
            return np.repeat(self.mass_r, self.n_modes)
        return np.repeat(self.mass_f_r, self.n_modes)

    def J_adjoint(self) -> sp.csr_matrix:
        return measure_adjoint(self.J, self.mass_flat("Mf"), self.mass_flat("M")).tocsr()

    def T_adjoint(self) -> sp.csr_matrix:
        return measure_adjoint(self.T, self.mass_flat("Mf"), self.mass_flat("M")).tocsr()

    def qtilde_diag(self) -> np.ndarray:
        """Diagonal of Q-tilde in the modal representation."""
        j2 = cutoff_j(self.grid.r_nodes) ** 2
        return np.repeat(j2, self.n_modes) * np.tile(self.q, self.grid.n_r)

    def to_modal(self, u_nodal: np.ndarray, space: str = "M") -> np.ndarray:
        """(n_r, n_theta) nodal data -> (n_r, M) mode coefficients."""
        cs = self.opset.cs
        W = cs.mass[:, None] * np.conj(self.E)
        return np.asarray(u_nodal) @ W

    def from_modal(self, c: np.ndarray) -> np.ndarray:
        return np.asarray(c) @ self.E.T

    def cap_diagonal(self, eta: np.ndarray) -> sp.dia_matrix:
        """-i eta(r) as a modal diagonal (theta-independent absorber)."""
        return sp.diags(np.repeat(-1j * eta, self.n_modes))

    @staticmethod
    def build(opset: OperatorSet, n_modes: int) -> "ModalOperators":
        cs, grid, line, field = opset.cs, opset.grid, opset.line, opset.field
        if not field.a2_zero:
            raise NumericalError(
                "modal reduction supports a2 = 0 coefficients only; "
                "use the nodal operators for a2 != 0")
        n_modes = int(min(n_modes, cs.n_theta))
        E = cs.modes[:, :n_modes]
        q = cs.q[:n_modes]
        M = n_modes
        n, dr, r = grid.n, grid.dr, grid.r_nodes
        IM = sp.identity(M, format="csr")

        G_r, r_mid = _radial_gradient(grid)
        mass_r = grid.radial_weight

        th = cs.theta_nodes[None, :]
        wH = cs.mass
        # radial term blocks at midpoints
        a1_mid = field.a1(r_mid[:, None], th) * np.ones((r_mid.size, cs.n_theta))
        if np.max(np.abs(a1_mid - a1_mid[:, :1])) < 1e-14:
            B1 = None  # theta-independent: scalar per midpoint
            w1 = dr * r_mid ** (n - 1) * a1_mid[:, 0]
            GR = sp.kron(G_r, IM, format="csr")
            K = 0.5 * (GR.T @ sp.diags(np.repeat(w1, M)) @ GR)
        else:
            blocks = np.einsum("jm,kj,jl->kml", E, a1_mid * wH[None, :], E)
            blocks *= (dr * r_mid ** (n - 1))[:, None, None]
            GR = sp.kron(G_r, IM, format="csr")
            K = 0.5 * (GR.T @ _block_diag_bsr(blocks) @ GR)

        # angular term
        leakage = 0.0
        if field.separable and field.c3 is not None:
            c3 = np.asarray(field.c3(r), float) * np.ones(grid.n_r)
            scale = dr * r ** (n - 3) * c3
            K = K + sp.kron(sp.diags(scale), sp.diags(q), format="csr")
        else:
            dth = cs.quad_weights[0]
            Gt = cs.grad
            H_mid = _theta_midpoint_values(cs, cs.H_rule)
            Vt = Gt @ E  # (n_theta mids, M)
            a3_mid = field.a3(r[:, None], cs.theta_mid[None, :]) \
                * np.ones((grid.n_r, cs.n_theta))
            W3 = 0.5 * dth * H_mid[None, :] * a3_mid
            blocks = np.einsum("jm,ij,jl->iml", Vt, W3, Vt)
            blocks *= (dr * r ** (n - 3))[:, None, None]
            K = K + _block_diag_bsr(blocks)
            # cross-mode leakage of the angular stiffness out of the basis
            Efull = cs.modes
            Vf = Gt @ Efull
            mid_idx = np.linspace(2, grid.n_r - 2, 5, dtype=int)
            leaks = []
            for i in mid_idx:
                Krow = np.einsum("jm,j,jl->ml", Vf, W3[i], Vt)
                tot = np.linalg.norm(Krow)
                out = np.linalg.norm(Krow[M:, :])
                leaks.append(out / max(tot, 1e-300))
            leakage = float(max(leaks))

        # potential term
        V_nod = field.V(r[:, None], th) * np.ones((grid.n_r, cs.n_theta))
        if np.max(np.abs(V_nod - V_nod[:, :1])) < 1e-14:
            K = K + sp.kron(sp.diags(mass_r * V_nod[:, 0]), IM, format="csr")
        else:
            blocks = np.einsum("jm,ij,jl->iml", E, V_nod * wH[None, :], E)
            blocks *= mass_r[:, None, None]
            K = K + _block_diag_bsr(blocks)

        K = 0.5 * (K + K.T)
        P = (sp.kron(sp.diags(1.0 / mass_r), IM) @ K).tocsr()

        # reference operator, identification, coupling
        G_l, _ = staggered_gradient_bounded(line.n_r, line.dr, left="wall", right="wall")
        Pf_r = (0.5 * (G_l.T @ G_l)).tocsr()
        Pf = sp.kron(Pf_r, IM, format="csr")
        mass_f_r = np.full(line.n_r, line.dr)

        li, gi = tail_alignment(line, grid)
        p = (grid.n - 1) / 2.0
        vals = grid.r_nodes[gi] ** (-p) * cutoff_j(grid.r_nodes[gi])
        keep = vals != 0.0
        J_r = sp.csr_matrix((vals[keep], (gi[keep], li[keep])),
                            shape=(grid.n_r, line.n_r))
        J = sp.kron(J_r, IM, format="csr")
        T = (P @ J - J @ Pf).tocsr()

        f = cutoff_j(r / opset.R_mourre) * r
        D = centered_first_derivative(grid.n_r, dr)
        w = r ** p
        Dt = sp.diags(1.0 / w) @ D @ sp.diags(w)
        A_r = ((sp.diags(f) @ Dt + Dt @ sp.diags(f)) * (1.0 / 2j)).tocsr()

        return ModalOperators(opset=opset, n_modes=M, q=q, E=E, P=P,
                              mass_r=mass_r, Pf=Pf, Pf_r=Pf_r,
                              mass_f_r=mass_f_r, J=J, T=T, A_r=A_r,
                              leakage=leakage)


# ---------------------------------------------------------------------------
# Per-mode radial operators (exact blocks of the separable configuration)
# ---------------------------------------------------------------------------


@dataclass
class RadialChannel:
    """The radial restriction of (P, P_f, J, T) to one Q-mode.

    Only valid for separable coefficient fields, where it coincides exactly
    with the corresponding block of the nodal operators.
    """

    m: int
    q: float
    P: sp.csr_matrix
    mass: np.ndarray
    Pf: sp.csr_matrix
    mass_f: np.ndarray
    J: sp.csr_matrix
    T: sp.csr_matrix
    grid: RadialGrid
    line: LineGrid

    def J_adjoint(self) -> sp.csr_matrix:
        return measure_adjoint(self.J, self.mass_f, self.mass).tocsr()

    def T_adjoint(self) -> sp.csr_matrix:
        return measure_adjoint(self.T, self.mass_f, self.mass).tocsr()


def radial_channel(opset: OperatorSet, m: int) -> RadialChannel:
    """Extract the exact radial block of mode m from a separable opset."""
    field, grid, line = opset.field, opset.grid, opset.line
    if not field.separable or field.c3 is None:
        raise NumericalError("radial channels exist only for separable fields")
    q_m = float(opset.cs.q[m])
    n, dr, r = grid.n, grid.dr, grid.r_nodes
    G_r, r_mid = _radial_gradient(grid)
    th0 = np.zeros((1, 1))
    a1 = (field.a1(r_mid[:, None], th0) * np.ones((r_mid.size, 1))).ravel()
    V = (field.V(r[:, None], th0) * np.ones((grid.n_r, 1))).ravel()
    c3 = np.asarray(field.c3(r), float) * np.ones(grid.n_r)
    mass_r = grid.radial_weight
    K = 0.5 * (G_r.T @ sp.diags(dr * r_mid ** (n - 1) * a1) @ G_r)
    K = K + sp.diags(mass_r * (q_m * c3 / r**2 + V))
    P = (sp.diags(1.0 / mass_r) @ K).tocsr()

    G_l, _ = staggered_gradient_bounded(line.n_r, line.dr, left="wall", right="wall")
    Pf = (0.5 * (G_l.T @ G_l)).tocsr()
    mass_f = np.full(line.n_r, line.dr)
    li, gi = tail_alignment(line, grid)
    p = (n - 1) / 2.0
    vals = r[gi] ** (-p) * cutoff_j(r[gi])
    keep = vals != 0.0
    J = sp.csr_matrix((vals[keep], (gi[keep], li[keep])),
                      shape=(grid.n_r, line.n_r))
    T = (P @ J - J @ Pf).tocsr()
    return RadialChannel(m=m, q=q_m, P=P, mass=mass_r, Pf=Pf, mass_f=mass_f,
                         J=J, T=T, grid=grid, line=line)


# ---------------------------------------------------------------------------
# Sparse triplet export
# ---------------------------------------------------------------------------


def write_triplet(path, A: sp.spmatrix):
    """Text export: header 'rows cols nnz', then lines 'i j re im'."""
    A = sp.coo_matrix(A)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row, A.col, A.data):
            c = complex(v)
            fh.write(f"{i} {j} {c.real:.17g} {c.imag:.17g}\n")


def read_triplet(path) -> sp.csr_matrix:
    with open(path, "r", encoding="utf-8") as fh:
        rows, cols, nnz = (int(x) for x in fh.readline().split())
        ii = np.empty(nnz, dtype=int)
        jj = np.empty(nnz, dtype=int)
        vv = np.empty(nnz, dtype=complex)
        for k in range(nnz):
            a, b, re, im = fh.readline().split()
            ii[k], jj[k] = int(a), int(b)
            vv[k] = float(re) + 1j * float(im)
    if np.max(np.abs(vv.imag)) == 0.0:
        vv = vv.real
    return sp.csr_matrix((vv, (ii, jj)), shape=(rows, cols))
