"""Cross-section and cutoff tests.

Oracles: eigenvalues of -1/2 d^2/dtheta^2 on the circle are m^2/2 (each
nonzero one twice); the flux form annihilates constants; the mollifier step
is symmetric about its midpoint.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conic_scatter.errors import GeometryError
from conic_scatter.geometry import (
    CrossSection,
    bracket,
    build_cross_section,
    cutoff_j,
    cutoff_j_d1,
    cutoff_j_d2,
    smooth_step,
)


def circle_eigenvalues(m_max):
    """Analytic oracle: q = m^2/2 for m = 0, +-1, ..., ascending with pairs."""
    vals = sorted(0.5 * m * m for m in range(-m_max, m_max + 1))
    return np.array(vals)


class TestCutoff:
    def test_plateau_values(self):
        assert cutoff_j(0.5) == 0.0
        assert cutoff_j(1.0) == 1.0
        assert cutoff_j(0.2) == 0.0
        assert cutoff_j(3.0) == 1.0

    def test_midpoint_symmetry(self):
        assert cutoff_j(0.75) == pytest.approx(0.5, abs=1e-14)

    def test_flat_matching(self):
        assert cutoff_j_d1(0.5) == 0.0
        assert cutoff_j_d1(1.0) == 0.0
        assert cutoff_j_d2(0.5) == 0.0
        assert cutoff_j_d2(1.0) == 0.0

    @given(st.floats(min_value=-2.0, max_value=3.0),
           st.floats(min_value=-2.0, max_value=3.0))
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert cutoff_j(lo) <= cutoff_j(hi) + 1e-15

    def test_derivatives_match_finite_differences(self):
        r = np.linspace(0.55, 0.98, 41)
        eps = 1e-6
        d1_fd = (cutoff_j(r + eps) - cutoff_j(r - eps)) / (2 * eps)
        d2_fd = (cutoff_j(r + eps) - 2 * cutoff_j(r) + cutoff_j(r - eps)) / eps**2
        assert np.allclose(cutoff_j_d1(r), d1_fd, rtol=1e-6, atol=1e-6)
        assert np.allclose(cutoff_j_d2(r), d2_fd, rtol=1e-3, atol=1e-3)

    def test_bracket(self):
        assert bracket(0.1) == 1.0
        assert bracket(2.0) == pytest.approx(3.0)
        assert bracket(-2.0) == pytest.approx(3.0)
        assert smooth_step(0.5) == pytest.approx(0.5)


def weighted_hermiticity_defect(cs):
    K = cs.mass[:, None] * cs.Q_matrix
    return np.linalg.norm(K - K.conj().T) / np.linalg.norm(K)


class TestCircleCrossSection:
    def test_flat_circle_eigenvalues(self):
        cs = build_cross_section(64)
        exact = circle_eigenvalues(5)
        got = cs.q[: exact.size]
        rel = np.abs(got[1:] - exact[1:]) / exact[1:]
        assert got[0] == pytest.approx(0.0, abs=1e-10)
        assert np.max(rel) <= 1e-3

    def test_constant_kernel(self):
        cs = build_cross_section(32)
        assert abs(cs.q[0]) <= 1e-12
        v = cs.modes[:, 0]
        assert np.max(np.abs(v - v.mean())) <= 1e-10

    def test_variable_H_still_flux_form(self):
        cs = build_cross_section(48, H_rule=lambda th: 1 + 0.3 * np.cos(th))
        assert weighted_hermiticity_defect(cs) <= 1e-12
        assert abs(cs.q[0]) <= 1e-10
        v = cs.modes[:, 0]
        assert np.max(np.abs(v - v.mean())) <= 1e-8

    def test_mode_orthonormality(self):
        cs = build_cross_section(40, H_rule=lambda th: 1 + 0.2 * np.sin(th),
                                 h_rule=lambda th: 1 + 0.1 * np.cos(2 * th))
        gram = cs.modes.T @ (cs.mass[:, None] * cs.modes)
        assert np.max(np.abs(gram - np.eye(cs.n_theta))) <= 1e-10
        assert np.all(np.diff(cs.q) >= -1e-12)

    def test_second_order_convergence_to_circle(self):
        # 4th-order stencil trivially satisfies the stated 2nd-order bound
        exact = circle_eigenvalues(5)
        errs = {}
        for n in (32, 64):
            cs = build_cross_section(n)
            errs[n] = np.abs(cs.q[: exact.size] - exact)
        assert np.all(errs[64] <= 0.25 * errs[32] + 1e-10)

    def test_nonpositive_density_rejected(self):
        with pytest.raises(GeometryError):
            build_cross_section(16, H_rule=lambda th: np.cos(th))
        with pytest.raises(GeometryError):
            build_cross_section(16, h_rule=lambda th: -np.ones_like(th))
        with pytest.raises(GeometryError):
            build_cross_section(3)

    def test_mode_roundtrip(self):
        cs = build_cross_section(24, H_rule=lambda th: 1 + 0.25 * np.cos(th))
        rng = np.random.default_rng(7)
        u = rng.standard_normal(24) + 1j * rng.standard_normal(24)
        c = cs.to_modes(u)
        assert np.allclose(cs.from_modes(c), u, atol=1e-10)

    def test_from_data_roundtrip_and_validation(self):
        base = build_cross_section(20, H_rule=lambda th: 1 + 0.1 * np.cos(th))
        cs = CrossSection.from_data(base.theta_nodes, base.quad_weights,
                                    base.H_values, base.Q_matrix)
        assert np.allclose(np.sort(cs.q), np.sort(base.q), atol=1e-10)
        bad = base.Q_matrix.copy()
        bad[0, 1] += 0.1
        with pytest.raises(GeometryError):
            CrossSection.from_data(base.theta_nodes, base.quad_weights,
                                   base.H_values, bad)
