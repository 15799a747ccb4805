"""Coefficient fields of the second-order operator and their decay validation.

A coefficient field holds evaluation rules for the tensors a1, a2, a3 and the
potential V of

    P = -1/2 G^-1 (d_r, d_theta/r) G [[a1, a2], [a2, a3]] (d_r; d_theta/r) + V

together with the claimed tail decay rates (a1 - 1 ~ r^-mu1, a2 ~ r^-mu2,
a3 - h ~ r^-mu3, V2 ~ r^-nu). Claims are checked numerically by log-log slope
fits on a geometric radius ladder; a claim passes when the fitted slope is
<= -mu + 0.1 and the fitted constant is stable under doubling the largest
radius.

The Appendix-style construction from a scattering metric
g = m1 dr^2 + m2 dr (r dtheta) + m3 (r dtheta)^2 inverts the metric block
pointwise, forms the unitary weight Psi = (sqrt(det g)/G)^(1/2) and the
effective potential W, and returns a field whose decay metadata is measured,
not assumed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import AssumptionError, GeometryError
from .geometry import CrossSection, cutoff_j

VACUOUS = 1e-13  # deviations below this (relative) are treated as identically zero


@dataclass(frozen=True)
class DecayRates:
    """Claimed decay exponents (mu1..mu4 for a1..V, nu for the smooth tail V2)."""

    mu1: float
    mu2: float
    mu3: float
    mu4: float
    nu: float

    def check_inequalities(self):
        if not (self.mu1 > 1 and self.mu4 > 1):
            raise AssumptionError("decay rates must satisfy mu1 > 1 and mu4 > 1")
        if not (self.mu2 > 0 and self.mu3 > 0):
            raise AssumptionError("decay rates must satisfy mu2 > 0 and mu3 > 0")
        if not self.nu > 1:
            raise AssumptionError("smooth potential tail must satisfy nu > 1")

    @property
    def mu_T(self) -> float:
        """The coupling-term rate min(mu1, mu2+1, mu3+2, mu4, nu); must be > 1."""
        return min(self.mu1, self.mu2 + 1.0, self.mu3 + 2.0, self.mu4, self.nu)


@dataclass(frozen=True)
class CoefficientField:
    """Evaluation rules plus decay metadata for one operator configuration.

    The rules broadcast over (r, theta) arrays. ``v1``/``v1_support`` describe
    the compactly supported bounded part of V; ``v2`` is the smooth tail
    (defaults to V when no split is given). ``separable`` marks the structure
    a2 = 0, a1/V functions of r only, a3 = c3(r) h(theta), under which all
    operators commute with the cross-section mode projectors.
    """

    n: int
    a1: Callable
    a2: Callable
    a3: Callable
    V: Callable
    decay: DecayRates
    v1: Callable | None = None
    v1_support: float = 0.0
    v2: Callable | None = None
    name: str = "custom"
    a2_zero: bool = False
    separable: bool = False
    c3: Callable | None = None

    def V2(self, r, theta):
        if self.v2 is not None:
            return self.v2(r, theta)
        return self.V(r, theta)


# ---------------------------------------------------------------------------
# Decay measurement
# ---------------------------------------------------------------------------


def radius_ladder(r_max: float) -> np.ndarray:
    """Geometric ladder 2, 4, 8, ..., capped at r_max."""
    k = int(np.floor(np.log2(max(r_max, 4.0))))
    return 2.0 ** np.arange(1, k + 1)


def measure_decay(dev_rule, theta: np.ndarray, r_max: float = 256.0):
    """Log-log slope fit of sup_theta |dev(r, theta)| on the radius ladder.

    Returns (slope, C, ladder, sup_values); slope is -inf for an identically
    vanishing deviation.
    """
    ladder = radius_ladder(r_max)
    sup = np.array([
        np.max(np.abs(np.asarray(dev_rule(np.array([[rr]]), theta[None, :]))))
        for rr in ladder
    ])
    scale = max(np.max(sup), 1.0)
    if np.max(sup) <= VACUOUS * scale or np.max(sup) == 0.0:
        return -np.inf, 0.0, ladder, sup
    good = sup > 1e-280
    slope = np.polyfit(np.log(ladder[good]), np.log(sup[good]), 1)[0]
    return slope, float(np.max(sup * ladder**min(-slope, 50.0))), ladder, sup


def _fit_constant(sup, ladder, mu):
    mask = sup > 0
    if not np.any(mask):
        return 0.0
    expo = min(mu, 40.0)
    return float(np.max(sup[mask] * ladder[mask] ** expo))


def validate_coefficients(field: CoefficientField, cs: CrossSection,
                          r_max: float = 256.0) -> dict:
    """Check every claimed decay rate and the pointwise positivity.

    Raises :class:`AssumptionError` naming the offending coefficient and the
    measured exponent; returns the per-coefficient report otherwise.
    """
    field.decay.check_inequalities()
    theta = cs.theta_nodes
    h = cs.h_values if cs.h_values is not None else np.ones_like(theta)
    checks = {
        "a1": (lambda r, th: field.a1(r, th) - 1.0, field.decay.mu1),
        "a2": (field.a2, field.decay.mu2),
        "a3": (lambda r, th: field.a3(r, th) - h[None, :], field.decay.mu3),
        "V2": (field.V2, field.decay.nu),
    }
    report = {}
    for name, (dev, mu) in checks.items():
        slope, C, ladder, sup = measure_decay(dev, theta, r_max)
        ok = (slope == -np.inf) or (slope <= -mu + 0.1) or (mu == np.inf and slope == -np.inf)
        if mu == np.inf and slope != -np.inf:
            ok = False
        if not ok:
            raise AssumptionError(
                f"coefficient {name} claims decay r^-{mu:g} but measures "
                f"slope {slope:.3f} on the radius ladder"
            )
        if slope != -np.inf:
            C_half = _fit_constant(sup[:-1], ladder[:-1], mu)
            C_full = _fit_constant(sup, ladder, mu)
            if C_half > 0 and not (C_full <= 1.2 * C_half and C_half <= 1.2 * C_full):
                raise AssumptionError(
                    f"coefficient {name}: fitted constant unstable under "
                    f"doubling the largest radius ({C_half:.3g} -> {C_full:.3g})"
                )
        report[name] = {"claimed": mu, "slope": slope, "C": C}

    # pointwise positivity of a3 and of the normalized 2x2 block
    r_samp = np.concatenate(([0.25, 0.5, 1.0, 1.5], radius_ladder(r_max)))[:, None]
    th = theta[None, :]
    a1 = field.a1(r_samp, th) * np.ones((r_samp.size, theta.size))
    a2 = field.a2(r_samp, th) * np.ones_like(a1)
    a3 = field.a3(r_samp, th) * np.ones_like(a1)
    a3n = a3 / h[None, :]
    if np.any(a3 <= 0):
        raise GeometryError("a3 must be strictly positive")
    if np.any(a1 <= 0) or np.any(a1 * a3n - a2**2 <= 0):
        raise GeometryError("coefficient block [[a1,a2],[a2,a3/h]] must be positive definite")
    return report


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _const_rule(c):
    return lambda r, th: c * np.ones(np.broadcast(r, th).shape)


def exact_cone(cs: CrossSection, n: int = 2) -> CoefficientField:
    """a1 = 1, a2 = 0, a3 = h, V = 0: the unperturbed cone."""
    h_rule = cs.h_rule if cs.h_rule is not None else (lambda th: np.ones_like(th))
    inf = np.inf
    return CoefficientField(
        n=n,
        a1=_const_rule(1.0), a2=_const_rule(0.0),
        a3=lambda r, th: h_rule(th) * np.ones(np.broadcast(r, th).shape),
        V=_const_rule(0.0),
        decay=DecayRates(inf, inf, inf, inf, inf),
        name="exact_cone", a2_zero=True, separable=True, c3=lambda r: np.ones_like(r),
    )


def well(cs: CrossSection, n: int = 2, V0: float = 5.0) -> CoefficientField:
    """Exact cone plus the attractive Gaussian well V = -V0 exp(-r^2).

    The Gaussian beats any polynomial rate; its decay is recorded as nu = 10.
    """
    base = exact_cone(cs, n)
    V = lambda r, th: -V0 * np.exp(-np.asarray(r) ** 2) * np.ones(np.broadcast(r, th).shape)
    return replace(base, V=V, v2=V, decay=DecayRates(np.inf, np.inf, np.inf, 10.0, 10.0),
                   name="well")


def tail_perturbation(cs: CrossSection, n: int = 2, mu3: float = 1.5,
                      amp: float = 0.3, theta_dependent: bool = True,
                      claimed_mu3: float | None = None) -> CoefficientField:
    """a3 = h (1 + amp j(r) r^-mu3 f(theta)), other coefficients exact.

    ``claimed_mu3`` lets a deliberately wrong claim be fed to the validator.
    """
    if not abs(amp) < 0.6:
        raise GeometryError("tail perturbation amplitude must keep a3 positive")
    h_rule = cs.h_rule if cs.h_rule is not None else (lambda th: np.ones_like(th))
    if theta_dependent:
        f = lambda th: 1.0 + 0.5 * np.cos(th)
    else:
        f = lambda th: np.ones_like(np.asarray(th, float))

    def bump(r):
        r = np.asarray(r, float)
        with np.errstate(divide="ignore"):
            return amp * cutoff_j(r) * np.where(r > 0, r, 1.0) ** (-mu3)

    a3 = lambda r, th: h_rule(th) * (1.0 + bump(r) * f(th))
    base = exact_cone(cs, n)
    claimed = claimed_mu3 if claimed_mu3 is not None else mu3
    sep = not theta_dependent
    return replace(
        base, a3=a3,
        decay=DecayRates(np.inf, np.inf, claimed, np.inf, np.inf),
        name="tail_perturbation", separable=sep,
        c3=(lambda r: 1.0 + bump(r)) if sep else None,
    )


PRESETS = {"exact_cone": exact_cone, "well": well, "tail_perturbation": tail_perturbation}


def make_coefficients(preset, cs: CrossSection, n: int = 2, *,
                      validate: bool = True, r_max: float = 256.0,
                      **params) -> CoefficientField:
    """Build a preset (by name) or validate a user-supplied field."""
    if isinstance(preset, CoefficientField):
        field = preset
    elif isinstance(preset, str):
        try:
            field = PRESETS[preset](cs, n, **params)
        except KeyError:
            raise GeometryError(f"unknown coefficient preset {preset!r}") from None
    else:
        raise GeometryError("preset must be a name or a CoefficientField")
    if validate:
        validate_coefficients(field, cs, r_max)
    return field


# ---------------------------------------------------------------------------
# Scattering metric -> operator data (Appendix-style construction)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScatteringMetricSpec:
    """g = m1 dr^2 + m2 dr (r dtheta) + m3 (r dtheta)^2 on (gamma, inf) x circle."""

    m1: Callable
    m2: Callable
    m3: Callable
    rates: tuple[float, float, float]
    gamma: float = 0.5
    n: int = 2

    @staticmethod
    def from_melrose(h1=None, h2=None, h3=None, n: int = 2,
                     gamma: float = 0.5) -> "ScatteringMetricSpec":
        """Polar form of dx^2/x^4 + h~/x^2 under x = 1/r.

        ``h1, h2, h3`` are the dx^2, dx dtheta, dtheta^2 components of h~ as
        rules of (x, theta), smooth up to x = 0. The polar coefficients are
        m1 = 1 + h1/r^2, m2 = -h2/r, m3 = h3, with rates (2, 1, 1).
        """
        z = lambda x, th: np.zeros(np.broadcast(x, th).shape)
        h1 = h1 or z
        h2 = h2 or z
        h3 = h3 or (lambda x, th: np.ones(np.broadcast(x, th).shape))
        m1 = lambda r, th: 1.0 + h1(1.0 / r, th) / r**2
        m2 = lambda r, th: -h2(1.0 / r, th) / r
        m3 = lambda r, th: h3(1.0 / r, th) * np.ones(np.broadcast(r, th).shape)
        return ScatteringMetricSpec(m1, m2, m3, rates=(2.0, 1.0, 1.0), gamma=gamma, n=n)


def _fd4(f, x, h, axis_r=True):
    # 4th-order centered derivative of a two-argument rule, in r or theta
    if axis_r:
        return (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h)
    raise NotImplementedError


def metric_to_operator(g: ScatteringMetricSpec, cs: CrossSection, *,
                       dr: float = 0.02, r_max: float = 256.0):
    """Invert the metric block and build (CoefficientField, Psi, W).

    Returns a field with a1 = b1, a2 = b2, a3 = b3 and V = -W/2, which makes
    the assembled operator match -1/2 U Lap_g U^-1; the raw effective
    potential W (two-term formula, 4th-order centered differences at spacing
    ``dr``/the cross-section angle step) is returned alongside. Decay metadata
    is measured from the constructed rules, not assumed.
    """
    n = g.n
    H_rule = cs.H_rule if cs.H_rule is not None else (lambda th: np.ones_like(th))

    def block(r, th):
        m1 = g.m1(r, th) * np.ones(np.broadcast(r, th).shape)
        m2 = g.m2(r, th) * np.ones_like(m1)
        m3 = g.m3(r, th) * np.ones_like(m1)
        det2 = m1 * m3 - 0.25 * m2**2
        if np.any(det2 <= 0) or np.any(m3 <= 0):
            raise GeometryError("metric block is not positive definite")
        return m1, m2, m3, det2

    def b1(r, th):
        m1, m2, m3, det2 = block(r, th)
        return m3 / det2

    def b2(r, th):
        m1, m2, m3, det2 = block(r, th)
        return -m2 / det2

    def b3(r, th):
        m1, m2, m3, det2 = block(r, th)
        return m1 / det2

    def psi(r, th):
        m1, m2, m3, det2 = block(r, th)
        # sqrt(det g) = r^(n-1) m3^((n-2)/2) sqrt(det2); G = r^(n-1) H
        return (m3 ** ((n - 2) / 2.0) * np.sqrt(det2) / H_rule(th)) ** 0.5

    dth = cs.theta_nodes[1] - cs.theta_nodes[0] if cs.n_theta > 1 else 0.1

    def d_r(f, r, th, h=dr):
        return (f(r - 2 * h, th) - 8 * f(r - h, th) + 8 * f(r + h, th) - f(r + 2 * h, th)) / (12 * h)

    def d_th(f, r, th, h=dth):
        return (f(r, th - 2 * h) - 8 * f(r, th - h) + 8 * f(r, th + h) - f(r, th + 2 * h)) / (12 * h)

    def W(r, th):
        r = np.asarray(r, float)
        th = np.asarray(th, float)
        shape = np.broadcast(r, th).shape
        one = np.ones(shape)
        P = psi(r, th) * one
        Pr = d_r(psi, r, th)
        Pt = d_th(psi, r, th)
        g_rr = b1(r, th) * one
        g_rt = b2(r, th) * one / (2.0 * r)
        g_tt = b3(r, th) * one / r**2
        term1 = (g_rr * Pr**2 + 2.0 * g_rt * Pr * Pt + g_tt * Pt**2) / P**2

        def flux_r(rr, tt):
            PP = psi(rr, tt)
            return ((b1(rr, tt) * d_r(psi, rr, tt)
                     + b2(rr, tt) / (2.0 * rr) * d_th(psi, rr, tt))
                    * rr ** (n - 1) * H_rule(tt) / PP)

        def flux_t(rr, tt):
            PP = psi(rr, tt)
            return ((b2(rr, tt) / (2.0 * rr) * d_r(psi, rr, tt)
                     + b3(rr, tt) / rr**2 * d_th(psi, rr, tt))
                    * rr ** (n - 1) * H_rule(tt) / PP)

        G = r ** (n - 1) * H_rule(th) * one
        term2 = (d_r(flux_r, r, th) + d_th(flux_t, r, th)) / G
        return term1 + term2

    V_rule = lambda r, th: -0.5 * W(r, th)

    # measured decay metadata
    theta = cs.theta_nodes
    h_ref = cs.h_values if cs.h_values is not None else np.ones_like(theta)
    s1, *_ = measure_decay(lambda r, th: b1(r, th) - 1.0, theta, r_max)
    s2, *_ = measure_decay(b2, theta, r_max)
    s3, *_ = measure_decay(lambda r, th: b3(r, th) - h_ref[None, :], theta, r_max)
    sV, *_ = measure_decay(V_rule, theta, r_max)
    decay = DecayRates(mu1=-s1, mu2=max(-s2, 0.51), mu3=max(-s3, 0.01),
                       mu4=-sV, nu=-sV)

    # structure detection for the fast mode-decoupled paths
    r_s = np.array([[1.7], [3.3], [9.1]])
    th_s = theta[None, :]
    a2_zero = bool(np.max(np.abs(b2(r_s, th_s) * np.ones((3, theta.size)))) < 1e-13)
    var = 0.0
    for rule, ref in ((b1, None), (V_rule, None)):
        vals = rule(r_s, th_s) * np.ones((3, theta.size))
        var = max(var, float(np.max(np.abs(vals - vals.mean(axis=1, keepdims=True)))))
    vals3 = b3(r_s, th_s) * np.ones((3, theta.size)) / h_ref[None, :]
    var3 = float(np.max(np.abs(vals3 - vals3.mean(axis=1, keepdims=True))))
    separable = a2_zero and var < 1e-12 and var3 < 1e-12
    c3 = (lambda r: b3(np.asarray(r, float).reshape(-1, 1),
                       theta[:1][None, :]).reshape(np.shape(r)) / h_ref[0]) if separable else None

    field = CoefficientField(
        n=n, a1=b1, a2=b2, a3=b3, V=V_rule, decay=decay,
        name="from_metric", a2_zero=a2_zero, separable=separable, c3=c3,
    )
    return field, psi, W
