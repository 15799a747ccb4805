"""Assembly-level oracles and invariants.

Oracles: sympy radial action of the cone operator on a Gaussian; the
conjugation identity T = -(1/(8 r^2)) J on the n=2, q=0 channel; Dirichlet
box spectrum of the reference operator; plane-wave pairing for the conjugate
operator.
"""

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import sympy as sym

from conic_scatter.coefficients import exact_cone, tail_perturbation, well
from conic_scatter.errors import AlignmentError, ConjugateError, ResolutionError
from conic_scatter.geometry import bracket, build_cross_section, cutoff_j
from conic_scatter.grids import build_line_grid, build_radial_grid, tail_alignment
from conic_scatter.operators import (
    assemble_A,
    assemble_J,
    assemble_operator_set,
    commutator_iPA,
    hermiticity_defect,
    read_triplet,
    t_tail_profile,
    write_triplet,
)

RNG = np.random.default_rng(1234)


@pytest.fixture(scope="module")
def cs16():
    return build_cross_section(16)


@pytest.fixture(scope="module")
def ops_n3(cs16):
    grid = build_radial_grid(20.0, 400, "half_line_regular", 3, cs16)
    return assemble_operator_set(exact_cone(cs16, 3), grid)


@pytest.fixture(scope="module")
def ops_n2(cs16):
    grid = build_radial_grid(20.0, 400, "half_line_regular", 2, cs16)
    return assemble_operator_set(exact_cone(cs16, 2), grid)


def mode_state(ops, profile, m, space="M"):
    """profile(r) times cross-section mode m, flattened."""
    r = ops.grid.r_nodes if space == "M" else ops.line.r_nodes
    e = ops.cs.modes[:, m]
    return np.outer(profile(r), e).ravel()


def norm_M(ops, u):
    return float(np.sqrt(np.real(np.vdot(u, ops.mass * u))))


def norm_f(ops, u):
    return float(np.sqrt(np.real(np.vdot(u, ops.mass_f * u))))


class TestGrids:
    def test_spacing_and_weights(self, cs16):
        grid = build_radial_grid(40.0, 2000, "half_line_regular", 3, cs16)
        assert grid.dr == pytest.approx(0.02)
        i = np.argmin(np.abs(grid.r_nodes - 2.0))
        assert grid.r_nodes[i] == pytest.approx(2.0)
        w = grid.measure[i]
        assert np.allclose(w, 4.0 * grid.dr * cs16.mass, rtol=1e-12)

    def test_resolution_check(self, cs16):
        build_radial_grid(40.0, 2000, "half_line_regular", 2, cs16, k_max=25.0)
        with pytest.raises(ResolutionError):
            build_radial_grid(40.0, 8, "half_line_regular", 2, cs16, k_max=3.0)

    def test_alignment(self, cs16):
        grid = build_radial_grid(10.0, 100, "half_line_regular", 2, cs16)
        line = build_line_grid(grid)
        li, gi = tail_alignment(line, grid)
        assert np.allclose(line.r_nodes[li], grid.r_nodes[gi])
        grid_bad = build_radial_grid(10.0, 100, "dirichlet_at_r0", 2, cs16, r0=0.15)
        with pytest.raises(AlignmentError):
            tail_alignment(line, grid_bad)


class TestAssembleP:
    def test_radial_action_oracle_n3(self, ops_n3):
        rs = sym.symbols("r", positive=True)
        us = sym.exp(-((rs - 5) ** 2))
        oracle = sym.lambdify(rs, -sym.Rational(1, 2)
                              * (sym.diff(us, rs, 2) + 2 / rs * sym.diff(us, rs)))
        prof = lambda r: np.exp(-((r - 5.0) ** 2))
        u = mode_state(ops_n3, prof, 0)
        Pu = (ops_n3.P @ u).reshape(ops_n3.grid.n_r, -1)
        r = ops_n3.grid.r_nodes
        inner = (r > 1.0) & (r < 15.0)
        err = np.max(np.abs(Pu[inner, 0] / ops_n3.cs.modes[0, 0]
                            - oracle(r[inner])))
        assert err <= 5.0 * ops_n3.grid.dr**2

    def test_well_is_diagonal_shift(self, cs16):
        grid = build_radial_grid(12.0, 120, "half_line_regular", 3, cs16)
        base = assemble_operator_set(exact_cone(cs16, 3), grid)
        pert = assemble_operator_set(well(cs16, 3, V0=5.0), grid)
        D = (pert.P - base.P) - sp.diags(
            np.repeat(-5.0 * np.exp(-grid.r_nodes**2), cs16.n_theta))
        assert spla.norm(D.tocsr()) <= 1e-12

    def test_hermiticity(self, ops_n2, ops_n3):
        for ops in (ops_n2, ops_n3):
            assert hermiticity_defect(ops.P, ops.mass) <= 1e-13
            assert hermiticity_defect(ops.Pf, ops.mass_f) <= 1e-13
            assert hermiticity_defect(ops.Q_tilde, ops.mass) <= 1e-12
            assert hermiticity_defect(ops.A, ops.mass) <= 1e-10

    def test_psd_without_potential(self, ops_n2):
        Ksym = (ops_n2.K + ops_n2.K.T) * 0.5
        Md = sp.diags(ops_n2.mass)
        lam = spla.eigsh(Ksym.tocsc(), k=1, M=Md.tocsc(), sigma=-1e-6,
                         which="LM", return_eigenvectors=False)
        scale = np.max(np.abs(ops_n2.K.diagonal() / ops_n2.mass))
        assert lam[0] >= -1e-8 * scale

    def test_refinement_order(self, cs16):
        # common nodes r = 0.16 (k+1): index (k+1) * (0.16/dr) - 1 on each grid
        prof = lambda r: np.exp(-((r - 6.0) ** 2)) * np.cos(2.0 * r)
        ks = np.arange(5, 80)
        vals = {}
        for nr in (400, 200, 100):
            grid = build_radial_grid(16.0, nr, "half_line_regular", 2, cs16)
            ops = assemble_operator_set(exact_cone(cs16, 2), grid)
            u = mode_state(ops, prof, 1)
            Pu = (ops.P @ u).reshape(grid.n_r, -1)
            idx = (ks + 1) * (nr // 100) - 1
            vals[nr] = Pu[idx, 1]
        e200 = np.max(np.abs(vals[200] - vals[400]))
        e100 = np.max(np.abs(vals[100] - vals[400]))
        order = np.log2(e100 / e200)
        assert order >= 1.9

    def test_mode_projector_commutation(self, ops_n2):
        cs = ops_n2.cs
        for m in (0, 2, 5):
            e = cs.modes[:, m]
            proj = np.outer(e, cs.mass * e)
            Pj = sp.kron(sp.identity(ops_n2.grid.n_r), proj, format="csr")
            Pj_f = sp.kron(sp.identity(ops_n2.line.n_r), proj, format="csr")
            C = ops_n2.P @ Pj - Pj @ ops_n2.P
            assert spla.norm(C.tocsr()) <= 1e-9
            Ct = ops_n2.T @ Pj_f - Pj @ ops_n2.T
            assert spla.norm(Ct.tocsr()) <= 1e-9


class TestPf:
    def test_box_spectrum_and_multiplicity(self, cs16):
        cs4 = build_cross_section(4)
        grid = build_radial_grid(10.0, 200, "half_line_regular", 2, cs4)
        ops = assemble_operator_set(exact_cone(cs4, 2), grid)
        exact = 0.5 * (np.pi * np.arange(1, 4) / 20.0) ** 2
        vals = spla.eigsh(ops.Pf.tocsc(), k=12, sigma=-1e-4, which="LM",
                          return_eigenvectors=False)
        vals = np.sort(vals)
        for m in range(3):
            got = vals[4 * m:4 * (m + 1)]
            assert np.allclose(got, exact[m], rtol=1e-3)

    def test_plane_wave_action(self, ops_n2):
        k = 2.0
        line = ops_n2.line
        u = mode_state(ops_n2, lambda r: np.exp(1j * k * r)
                       * np.exp(-((r + 5.0) / 7.0) ** 10), 0, space="Mf")
        Pu = (ops_n2.Pf @ u).reshape(line.n_r, -1)
        core = np.abs(line.r_nodes + 5.0) < 1.5
        target = 0.5 * k * k * u.reshape(line.n_r, -1)[core, 0]
        assert np.allclose(Pu[core, 0], target, rtol=1e-4, atol=1e-6)


class TestJ:
    def test_isometry_on_tail_support(self, ops_n3):
        prof = lambda r: np.exp(-((r - 10.0) / 2.0) ** 2)
        phi = mode_state(ops_n3, lambda r: np.where(r > 1.0, prof(r), 0.0), 1,
                         space="Mf")
        assert abs(norm_M(ops_n3, ops_n3.J @ phi) - norm_f(ops_n3, phi)) \
            <= 1e-12 * norm_f(ops_n3, phi)

    def test_vanishes_on_cap_support(self, ops_n3):
        phi = mode_state(ops_n3, lambda r: np.exp(-((r + 3) / 3.0) ** 2)
                         * (r < 0.45), 0, space="Mf")
        assert norm_M(ops_n3, ops_n3.J @ phi) == 0.0

    def test_JstarJ_is_cutoff_squared(self, ops_n3):
        JJ = (ops_n3.J_adj @ ops_n3.J).tocsr()
        line = ops_n3.line
        expected = sp.diags(np.repeat(cutoff_j(np.abs(line.r_nodes)) ** 2
                                      * (line.r_nodes > 0), line.n_theta))
        assert spla.norm((JJ - expected).tocsr()) <= 1e-12

    def test_fault_injection_breaks_isometry(self, cs16):
        grid = build_radial_grid(20.0, 400, "half_line_regular", 3, cs16)
        line = build_line_grid(grid)
        Jbad = assemble_J(line, grid, exponent_shift=1.0)
        prof = lambda r: np.where(r > 1.0, np.exp(-((r - 10.0) / 2.0) ** 2), 0.0)
        e = cs16.modes[:, 0]
        phi = np.outer(prof(line.r_nodes), e).ravel()
        mass = grid.flat_measure()
        nrm = np.sqrt(np.real(np.vdot(Jbad @ phi, mass * (Jbad @ phi))))
        mass_f = line.flat_measure()
        nrm_f = np.sqrt(np.real(np.vdot(phi, mass_f * phi)))
        assert abs(nrm - nrm_f) > 0.1 * nrm_f


class TestT:
    def test_vanishes_on_free_channel_n3(self, ops_n3):
        # q = 0, n = 3: (n-1)(n-3)/8 = 0, so T phi = 0 on the far tail
        prof = lambda r: np.where(r > 2.0, np.exp(-((r - 10.0) / 1.5) ** 2), 0.0)
        phi = mode_state(ops_n3, prof, 0, space="Mf")
        assert norm_M(ops_n3, ops_n3.T @ phi) <= 1e-8 * norm_f(ops_n3, phi)

    def test_conjugation_identity_n2(self, ops_n2):
        # q = 0, n = 2: T phi = -(1/(8 r^2)) J phi on supp phi in (2, inf)
        prof = lambda r: np.where(r > 2.5, np.exp(-((r - 10.0) / 1.5) ** 2), 0.0)
        phi = mode_state(ops_n2, prof, 0, space="Mf")
        Tphi = (ops_n2.T @ phi).reshape(ops_n2.grid.n_r, -1)
        Jphi = (ops_n2.J @ phi).reshape(ops_n2.grid.n_r, -1)
        r = ops_n2.grid.r_nodes
        sel = (r > 4.0) & (r < 16.0)
        target = -Jphi[sel, 0] / (8.0 * r[sel] ** 2)
        assert np.max(np.abs(Tphi[sel, 0] - target)) <= 1e-6

    def test_tail_profile_decay(self, ops_n2):
        tau = t_tail_profile(ops_n2.T, ops_n2.grid)
        r = ops_n2.grid.r_nodes
        i1 = np.argmin(np.abs(r - 4.0))
        i2 = np.argmin(np.abs(r - 16.0))
        assert tau[i2] <= tau[i1] * (r[i1] / r[i2]) ** 1.5

    def test_lemma7_surrogate_constant_stable(self, cs16):
        field = tail_perturbation(cs16, n=2, mu3=1.5, theta_dependent=True)
        mu = min(field.decay.mu_T, 2.0)
        consts = {}
        for nr in (200, 400):
            grid = build_radial_grid(20.0, nr, "half_line_regular", 2, cs16)
            ops = assemble_operator_set(field, grid)
            line = ops.line
            br = np.repeat(bracket(line.r_nodes) ** mu, cs16.n_theta)
            ratios = []
            rng = np.random.default_rng(5)
            for trial in range(8):
                m = int(rng.integers(0, 5))
                c, w = rng.uniform(-8, 8), rng.uniform(1.0, 3.0)
                prof = lambda r: np.exp(-((r - c) / w) ** 2) * np.exp(0.7j * r)
                phi = mode_state(ops, prof, m, space="Mf")
                num = norm_M(ops, ops.T @ (br * phi))
                den = (norm_f(ops, phi) + norm_f(ops, ops.Pf @ phi)
                       + abs(cs16.q[m]) * norm_f(ops, phi))
                ratios.append(num / den)
            consts[nr] = max(ratios)
        assert consts[400] <= 1.2 * consts[200]


class TestA:
    def test_annihilates_cap_states(self, ops_n2):
        prof = lambda r: np.exp(-((r - 0.5) / 0.2) ** 2) * (r < 0.9)
        u = mode_state(ops_n2, prof, 0)
        assert norm_M(ops_n2, ops_n2.A @ u) <= 1e-10 * norm_M(ops_n2, u)

    def test_plane_wave_pairing(self, ops_n2):
        k = 2.0
        prof = lambda r: np.exp(1j * k * r) * np.exp(-((r - 11.0) / 2.5) ** 2)
        u = mode_state(ops_n2, prof, 0)
        Au = ops_n2.A @ u
        num = np.real(np.vdot(u, ops_n2.mass * Au))
        r_flat = np.repeat(ops_n2.grid.r_nodes, ops_n2.cs.n_theta)
        den = np.real(np.vdot(u, ops_n2.mass * (r_flat * u)))
        assert num / den == pytest.approx(k, rel=2e-2)

    def test_scale_guard(self, cs16):
        grid = build_radial_grid(20.0, 200, "half_line_regular", 2, cs16)
        with pytest.raises(ConjugateError):
            assemble_A(grid, R_mourre=2.0, v1_support=1.5)

    def test_commutator_hermitian(self, ops_n2):
        C, defect = commutator_iPA(ops_n2.P, ops_n2.A, ops_n2.mass)
        assert defect <= 1e-10
        assert hermiticity_defect(C, ops_n2.mass) <= 1e-10


class TestQtilde:
    def test_kills_theta_constant(self, ops_n2):
        u = mode_state(ops_n2, lambda r: np.exp(-((r - 8.0) / 2.0) ** 2), 0)
        assert norm_M(ops_n2, ops_n2.Q_tilde @ u) <= 1e-10

    def test_mode_eigenvalue_on_tail(self, ops_n2):
        prof = lambda r: np.where(r > 1.0, np.exp(-((r - 10.0) / 2.0) ** 2), 0.0)
        for m in (1, 3):
            u = mode_state(ops_n2, prof, m)
            resid = ops_n2.Q_tilde @ u - ops_n2.cs.q[m] * u
            assert norm_M(ops_n2, resid) <= 1e-10 * norm_M(ops_n2, u)

    def test_lemma9_surrogates_stable(self, cs16):
        # (2): || j <r>^-1 d_theta u || <= C (||Pu||^2 + ||u||^2)^(1/2)
        # (3): || j d_r^2 u ||       <= C (||Pu|| + ||u||)
        from conic_scatter.fd import staggered_gradient_bounded
        consts2, consts3 = {}, {}
        rng = np.random.default_rng(11)
        states = [(int(rng.integers(0, 6)), rng.uniform(-6, 6),
                   rng.uniform(1.2, 3.0), rng.uniform(0.2, 2.0))
                  for _ in range(20)]
        for nr in (150, 300):
            grid = build_radial_grid(18.0, nr, "half_line_regular", 2, cs16)
            ops = assemble_operator_set(exact_cone(cs16, 2), grid)
            r = grid.r_nodes
            jr = cutoff_j(r)
            G2, _ = staggered_gradient_bounded(nr - 1, grid.dr, "natural", "natural")
            D2 = (G2.T @ G2)
            r2, r3 = [], []
            for (m, c, w, kk) in states:
                prof = np.exp(-((r - 8 - 0.3 * c) / w) ** 2) * np.exp(1j * kk * r)
                u = np.outer(prof, cs16.modes[:, m]).ravel()
                nu = norm_M(ops, u)
                nP = norm_M(ops, ops.P @ u)
                dth = np.outer(prof, 1j * 0 + np.gradient(cs16.modes[:, m],
                                                          cs16.theta_nodes)).ravel()
                wgt = np.repeat(jr / bracket(r), cs16.n_theta)
                r2.append(norm_M(ops, wgt * dth) / np.sqrt(nP**2 + nu**2))
                d2 = np.outer(D2 @ prof, cs16.modes[:, m]).ravel()
                r3.append(norm_M(ops, np.repeat(jr, cs16.n_theta) * d2) / (nP + nu))
            consts2[nr] = max(r2)
            consts3[nr] = max(r3)
        assert consts2[300] <= 1.2 * consts2[150]
        assert consts3[300] <= 1.2 * consts3[150]


class TestModal:
    def test_modal_matches_nodal_separable(self, ops_n2):
        modal = ops_n2.modal(6)
        prof = lambda r: np.exp(-((r - 9.0) / 2.0) ** 2) * np.exp(0.5j * r)
        for m in (0, 2, 4):
            u = mode_state(ops_n2, prof, m)
            Pu = (ops_n2.P @ u).reshape(ops_n2.grid.n_r, -1)
            c = np.zeros((ops_n2.grid.n_r, 6), complex)
            c[:, m] = prof(ops_n2.grid.r_nodes)
            Pc = (modal.P @ c.ravel()).reshape(-1, 6)
            Pu_m = modal.to_modal(Pu)
            assert np.max(np.abs(Pc[:, m] - Pu_m[:, m])) <= 1e-10

    def test_modal_galerkin_theta_dependent(self, cs16):
        field = tail_perturbation(cs16, n=2, mu3=1.5, theta_dependent=True)
        grid = build_radial_grid(16.0, 200, "half_line_regular", 2, cs16)
        ops = assemble_operator_set(field, grid)
        modal = ops.modal(8)
        assert 0.0 <= modal.leakage < 0.5
        prof = lambda r: np.exp(-((r - 8.0) / 2.0) ** 2)
        u = mode_state(ops, prof, 1)
        Pu_modal_ref = modal.to_modal((ops.P @ u).reshape(grid.n_r, -1))
        c = np.zeros((grid.n_r, 8), complex)
        c[:, 1] = prof(grid.r_nodes)
        Pc = (modal.P @ c.ravel()).reshape(-1, 8)
        scale = np.max(np.abs(Pu_modal_ref))
        assert np.max(np.abs(Pc - Pu_modal_ref)) <= 1e-8 * scale

    def test_T_modal_matches(self, ops_n2):
        modal = ops_n2.modal(4)
        prof = lambda r: np.where(r > 1.0, np.exp(-((r - 9.0) / 2.0) ** 2), 0.0)
        phi = mode_state(ops_n2, prof, 1, space="Mf")
        T_nodal = (ops_n2.T @ phi).reshape(ops_n2.grid.n_r, -1)
        c = np.zeros((ops_n2.line.n_r, 4), complex)
        c[:, 1] = prof(ops_n2.line.r_nodes)
        T_modal = (modal.T @ c.ravel()).reshape(-1, 4)
        ref = modal.to_modal(T_nodal)
        assert np.max(np.abs(T_modal - ref)) <= 1e-10


class TestExport:
    def test_triplet_roundtrip(self, ops_n2, tmp_path):
        small = ops_n2.P[: 40, : 40].tocsr()
        path = tmp_path / "P.triplet"
        write_triplet(path, small)
        back = read_triplet(path)
        header = open(path).readline().split()
        assert [int(header[0]), int(header[1])] == [40, 40]
        assert spla.norm((back - small).tocsr()) <= 1e-14 * max(spla.norm(small), 1)
