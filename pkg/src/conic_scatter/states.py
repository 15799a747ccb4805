"""States on the manifold and reference spaces, wave packets, Fourier tools.

A state stores its nodal values as an (n_r, n_theta) array together with the
owning grid; norms and inner products always use the owning measure. The
half-line splitting of the reference space acts through the discrete Fourier
transform in r on the symmetric box.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np

from .errors import ConfigError
from .geometry import CrossSection
from .grids import LineGrid, RadialGrid


@dataclass
class StateVector:
    """Complex amplitudes on one of the two spaces."""

    values: np.ndarray            # (n_r, n_theta)
    space: str                    # "M" or "Mf"
    grid: RadialGrid | LineGrid
    packet: "WavePacketSpec | None" = None
    _norm: float | None = dfield(default=None, repr=False)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=complex)
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("state contains non-finite entries")

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def measure(self) -> np.ndarray:
        return self.grid.measure

    def norm(self) -> float:
        if self._norm is None:
            w = self.grid.measure
            self._norm = float(np.sqrt(np.sum(w * np.abs(self.values) ** 2)))
        return self._norm

    def inner(self, other: "StateVector") -> complex:
        w = self.grid.measure
        return complex(np.sum(w * np.conj(self.values) * other.values))

    def scaled(self, c) -> "StateVector":
        return StateVector(self.values * c, self.space, self.grid, self.packet)

    def mode_coefficients(self, cs: CrossSection) -> np.ndarray:
        return cs.to_modes(self.values)

    def dominant_mode(self, cs: CrossSection):
        """(mode index, purity) of the angular content."""
        c = self.mode_coefficients(cs)
        pw = np.sum(np.abs(c) ** 2, axis=0)
        m = int(np.argmax(pw))
        return m, float(pw[m] / max(pw.sum(), 1e-300))


# ---------------------------------------------------------------------------
# Discrete Fourier analysis on the reference line
# ---------------------------------------------------------------------------


def line_frequencies(line: LineGrid) -> np.ndarray:
    n = line.n_r
    return 2.0 * np.pi * np.fft.fftfreq(n, d=line.dr)


def line_fft(line: LineGrid, values: np.ndarray) -> np.ndarray:
    """Samples of (F phi)(rho_j, theta) at the DFT frequencies.

    Matches the continuum transform (2pi)^-1/2 int e^(-i rho r) phi dr on
    band-limited data.
    """
    ft = np.fft.fft(values, axis=0)
    rho = line_frequencies(line)
    # the DFT assumes samples starting at r = 0; shift to the actual origin
    ft = ft * np.exp(-1j * rho * line.r_nodes[0])[:, None]
    return ft * line.dr / np.sqrt(2.0 * np.pi)


def line_ifft(line: LineGrid, ft: np.ndarray) -> np.ndarray:
    rho = line_frequencies(line)
    ft = ft * np.exp(1j * rho * line.r_nodes[0])[:, None]
    return np.fft.ifft(ft, axis=0) * np.sqrt(2.0 * np.pi) / line.dr


def half_line_project(state: StateVector, sign: int):
    """Project onto H_f^+- (Fourier support on the signed half-line).

    Returns (projected state, discarded mass fraction).
    """
    line = state.grid
    ft = line_fft(line, state.values)
    rho = line_frequencies(line)
    keep = rho >= 0.0 if sign > 0 else rho <= 0.0
    total = np.sum(np.abs(ft) ** 2)
    kept = np.sum(np.abs(ft[keep]) ** 2)
    out = np.zeros_like(ft)
    out[keep] = ft[keep]
    proj = line_ifft(line, out)
    frac = float(1.0 - kept / max(total, 1e-300))
    return StateVector(proj, "Mf", line, state.packet), frac


def wrong_half_mass(state: StateVector, sign: int) -> float:
    _, frac = half_line_project(state, sign)
    return frac


def fourier_eval(line: LineGrid, values: np.ndarray, rho: float) -> np.ndarray:
    """(F phi)(rho, theta) by direct quadrature (exact trapezoid on the box)."""
    phase = np.exp(-1j * rho * line.r_nodes)
    return (phase @ values) * line.dr / np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Wave packets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WavePacketSpec:
    """Gaussian packet localized on one momentum half-line and one Q-mode."""

    sign: int
    k_center: float
    k_width: float
    r_center: float
    mode: int = 0

    @property
    def delta(self) -> float:
        """Guaranteed momentum gap: supp(F phi) within +-[delta, inf)."""
        return self.k_center - 3.0 * self.k_width

    def __post_init__(self):
        if self.sign not in (+1, -1):
            raise ConfigError("packet sign must be +1 or -1")
        if self.delta <= 0:
            raise ConfigError(
                f"packet needs k_center - 3 k_width > 0, got {self.delta:g}")

    @property
    def sigma_r(self) -> float:
        return 1.0 / (2.0 * self.k_width)

    def ballistic_exit_time(self, r_release: float = 2.0) -> float:
        """Time for the packet center to pass r_release moving outward."""
        return (abs(self.r_center) + r_release) / self.k_center


def make_wavepacket(spec: WavePacketSpec, line: LineGrid, cs: CrossSection) -> StateVector:
    """Normalized Gaussian momentum profile times the requested Q-mode."""
    if abs(spec.r_center) + 6.0 / spec.k_width >= line.R_max:
        raise ConfigError(
            f"packet does not fit the box: |r_center| + 6/k_width = "
            f"{abs(spec.r_center) + 6.0 / spec.k_width:g} >= R_max = {line.R_max:g}")
    r = line.r_nodes
    s = spec.sigma_r
    prof = np.exp(-((r - spec.r_center) ** 2) / (4.0 * s * s)
                  + 1j * spec.sign * spec.k_center * r)
    vals = np.outer(prof, cs.modes[:, spec.mode])
    st = StateVector(vals, "Mf", line, packet=spec)
    st = st.scaled(1.0 / st.norm())
    frac = wrong_half_mass(st, spec.sign)
    if frac > 1e-12:
        raise ConfigError(
            f"packet has mass {frac:.2e} on the wrong momentum half-line")
    return st
