"""Unitary propagation and the time-dependent side of the scattering theory.

Propagation uses Crank-Nicolson steps (the Cayley transform of the
measure-Hermitian generator), which are exactly norm preserving up to solver
tolerance. The wave operators are evaluated through the Duhamel identity

    e^(itP) J e^(-itP_f) phi = J phi + i * int_0^t e^(isP) T e^(-isP_f) phi ds

marched in the co-moving picture: an accumulator z with z' = -iPz + T a(s)
carries the integral, and one final backward march applies e^(itP) to it.
The integrand norm ||T e^(-isP_f) phi|| is recorded along the way, its decay
fitted, and the remaining tail extrapolated.

Packets on a single Q-mode of a separable configuration run on the exact
radial channel; everything else uses the nodal operators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import HorizonError, NumericalError
from .operators import OperatorSet, radial_channel
from .states import StateVector, fourier_eval, half_line_project, make_wavepacket


class CrankNicolson:
    """Prefactored Cayley stepper for exp(-i dt op) on flat vectors."""

    def __init__(self, op: sp.spmatrix, dt: float):
        n = op.shape[0]
        eye = sp.identity(n, format="csc", dtype=complex)
        half = 0.5j * dt * op.tocsc()
        self.dt = dt
        try:
            self._lu = spla.splu((eye + half).tocsc())
        except RuntimeError as exc:  # pragma: no cover
            raise NumericalError(f"CN factorization failed: {exc}") from exc
        self._rhs = (eye - half).tocsr()

    def step(self, psi: np.ndarray, source: np.ndarray | None = None) -> np.ndarray:
        """One step of psi' = -i op psi (+ source), trapezoidal in the source."""
        b = self._rhs @ psi
        if source is not None:
            b = b + self.dt * source
        return self._lu.solve(b)


def propagate(op: sp.spmatrix, psi0: np.ndarray, t_final: float, dt: float,
              mass: np.ndarray | None = None) -> np.ndarray:
    """exp(-i t op) psi0 by CN steps; guard dt * ||op psi0||/||psi0|| <= 1.

    The guard uses the energy scale of the state actually propagated (CN is
    A-stable, so only accuracy is at stake).
    """
    psi0 = np.asarray(psi0, dtype=complex)
    w = mass if mass is not None else np.ones(psi0.size)
    e_scale = np.sqrt(np.real(np.vdot(op @ psi0, w * (op @ psi0)))
                      / max(np.real(np.vdot(psi0, w * psi0)), 1e-300))
    if dt * e_scale > 1.0:
        raise NumericalError(
            f"dt too large for this state: dt*||op psi|| = {dt * e_scale:.3g} > 1")
    steps = int(round(abs(t_final) / dt))
    stepper = CrankNicolson(op, np.sign(t_final) * dt if t_final != 0 else dt)
    psi = psi0.copy()
    for _ in range(steps):
        psi = stepper.step(psi)
    return psi


def propagate_state(op: sp.spmatrix, state: StateVector, t_final: float,
                    dt: float) -> StateVector:
    out = propagate(op, state.flat, t_final, dt,
                    mass=state.grid.flat_measure())
    return StateVector(out.reshape(state.values.shape), state.space,
                       state.grid, state.packet)


# ---------------------------------------------------------------------------
# Cook integral
# ---------------------------------------------------------------------------


@dataclass
class CookResult:
    """Finite-horizon wave-operator evaluation with tail extrapolation."""

    limit_state: StateVector
    T_max: float
    tail_estimate: float
    isometry_defect: float
    times: np.ndarray
    integrand: np.ndarray
    integrand_monotone: bool
    decay_exponent: float


def _fit_integrand_tail(times, vals, t_from):
    """Fit C s^-mu to the integrand and integrate the remainder."""
    sel = (times >= t_from) & (vals > 1e-300)
    if np.count_nonzero(sel) < 8:
        return np.inf, 0.0
    lt, lv = np.log(times[sel]), np.log(vals[sel])
    slope, logC = np.polyfit(lt, lv, 1)
    mu = -slope
    T = times[-1]
    if mu <= 1.001:
        return np.inf, mu
    return float(np.exp(logC) * T ** (1.0 - mu) / (mu - 1.0)), float(mu)


def _block_monotone(vals, blocks=6):
    if vals.size < 2 * blocks:
        return True
    chunks = np.array_split(vals, blocks)
    means = np.array([c.mean() for c in chunks])
    return bool(np.all(np.diff(means) <= 1e-12 + 0.05 * means[:-1]))


def _cook_channel(P, Pf, J, T, mass_M, mass_f, prof, direction, T_max, dt):
    """Duhamel march on one (radial or flattened nodal) channel."""
    sgn = float(direction)
    n_steps = int(round(T_max / dt))
    free = CrankNicolson(Pf, sgn * dt)
    inter = CrankNicolson(P, sgn * dt)
    a = prof.astype(complex)
    z = np.zeros(P.shape[0], dtype=complex)
    times = np.empty(n_steps)
    integrand = np.empty(n_steps)
    Ta_old = T @ a
    for j in range(n_steps):
        a_new = free.step(a)
        Ta_new = T @ a_new
        z = inter.step(z, source=0.5 * (Ta_old + Ta_new))
        a, Ta_old = a_new, Ta_new
        times[j] = (j + 1) * dt
        integrand[j] = np.sqrt(np.real(np.vdot(Ta_new, mass_M * Ta_new)))
    # apply e^{i t P} (the inverse Cayley flow) to the accumulator
    back = CrankNicolson(P, -sgn * dt)
    for _ in range(n_steps):
        z = back.step(z)
    y = J @ prof.astype(complex) + 1j * sgn * z
    return y, times, integrand


def cook_wave_operator(ops: OperatorSet, phi: StateVector, direction: int,
                       T_max: float, dt: float, enforce_horizon: bool = True) -> CookResult:
    """Evaluate W_+- phi by the finite-horizon Duhamel integral.

    ``direction`` +1 computes W_+ (s -> +inf), -1 computes W_-. The horizon
    policy requires T_max at least 3 ballistic exit times and at most
    1.5 R_max / k_center so no reflected mass returns from the wall.
    """
    pk = phi.packet
    if pk is not None and enforce_horizon:
        t_exit = pk.ballistic_exit_time()
        if T_max < 3.0 * t_exit:
            raise HorizonError(
                f"T_max = {T_max:g} below 3 ballistic exit times ({3 * t_exit:g})")
        if T_max > 1.5 * ops.grid.R_max / pk.k_center + 1e-9:
            raise HorizonError(
                f"T_max = {T_max:g} exceeds the reflection-free window "
                f"{1.5 * ops.grid.R_max / pk.k_center:g}")

    m, purity = phi.dominant_mode(ops.cs)
    if ops.decoupled and purity > 1.0 - 1e-12:
        ch = radial_channel(ops, m)
        prof = phi.mode_coefficients(ops.cs)[:, m]
        y, times, integrand = _cook_channel(
            ch.P, ch.Pf, ch.J, ch.T, ch.mass, ch.mass_f, prof,
            direction, T_max, dt)
        vals = np.outer(y, ops.cs.modes[:, m])
    else:
        y, times, integrand = _cook_channel(
            ops.P, ops.Pf, ops.J, ops.T, ops.mass, ops.mass_f, phi.flat,
            direction, T_max, dt)
        vals = y.reshape(ops.grid.n_r, ops.grid.n_theta)

    limit = StateVector(vals, "M", ops.grid, phi.packet)
    t_ball = pk.ballistic_exit_time() if pk is not None else 0.3 * T_max
    tail, mu = _fit_integrand_tail(times, integrand, max(1.5 * t_ball, 0.4 * T_max))
    mono = _block_monotone(integrand[times > t_ball])
    proj, _ = half_line_project(phi, direction)
    defect = abs(limit.norm() - proj.norm())
    return CookResult(limit_state=limit, T_max=T_max, tail_estimate=tail,
                      isometry_defect=defect, times=times, integrand=integrand,
                      integrand_monotone=mono, decay_exponent=mu)


# ---------------------------------------------------------------------------
# Time-domain scattering operator
# ---------------------------------------------------------------------------


def scattering_operator_time(ops: OperatorSet, phi_minus: StateVector,
                             T_cook: float, t_out: float, dt: float,
                             discard_tolerance: float = 0.05):
    """S phi = (forward limit)* (backward limit) phi on the reference space.

    Computes W_- phi by the Duhamel march, evolves it forward under P until
    the scattered state is outgoing in the tail, pulls it back with J* and
    free backward propagation, and projects onto the outgoing half-line.
    Returns (state in H_f^+, diagnostics dict).
    """
    pk = phi_minus.packet
    ck = cook_wave_operator(ops, phi_minus, direction=-1, T_max=T_cook, dt=dt)
    y = ck.limit_state

    m, purity = phi_minus.dominant_mode(ops.cs)
    if ops.decoupled and purity > 1.0 - 1e-12:
        ch = radial_channel(ops, m)
        prof = y.mode_coefficients(ops.cs)[:, m]
        out = propagate(ch.P, prof, t_out, dt, mass=ch.mass)
        pulled = ch.J_adjoint() @ out
        back = propagate(ch.Pf, pulled, -t_out, dt, mass=ch.mass_f)
        vals = np.outer(back, ops.cs.modes[:, m])
    else:
        out = propagate(ops.P, y.flat, t_out, dt, mass=ops.mass)
        pulled = ops.J_adj @ out
        back = propagate(ops.Pf, pulled, -t_out, dt, mass=ops.mass_f)
        vals = back.reshape(ops.line.n_r, ops.line.n_theta)

    raw = StateVector(vals, "Mf", ops.line, phi_minus.packet)
    projected, discarded = half_line_project(raw, +1)
    if discarded > discard_tolerance:
        raise HorizonError(
            f"{100 * discarded:.1f}% of the scattered mass is not outgoing; "
            f"increase t_out or the box")
    diags = {
        "cook": ck,
        "discarded_fraction": discarded,
        "norm_in": phi_minus.norm(),
        "norm_out": projected.norm(),
    }
    return projected, diags
