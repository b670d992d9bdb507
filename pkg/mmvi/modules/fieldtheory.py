"""Continuum field theory: densities, Sine-Gordon solitons and energies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.optimize
from scipy.special import roots_legendre

from ..base import DomainError, NoConvergence

Density = Callable[[np.ndarray, np.ndarray], np.ndarray]
CellPotential = Callable[[np.ndarray, np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]

TAYLOR_THRESHOLD = 1e-6
SINC_SERIES_THRESHOLD = 1e-2
BOUNCE_TOLERANCE = 1e-12


def _constant(value: float) -> Density:
    def density(phi_x, phi):
        return np.full(np.broadcast(phi_x, phi).shape, value, dtype=float)

    return density


@dataclass(frozen=True)
class DensitySpec:
    """Potential R(φ_X, φ) of a Lagrangian density ½φₜ² − R(φ_X, φ).

    The second derivatives make every stepper Jacobian analytic. When
    ``cell_potential`` is set, the per-cell integral of R along the linear
    interpolant is taken from it instead of Gauss-Legendre quadrature.
    """

    name: str
    R: Density
    dR_dphiX: Density
    dR_dphi: Density
    d2R_dphiX2: Density
    d2R_dphiX_dphi: Density
    d2R_dphi2: Density
    cell_potential: Optional[CellPotential] = None


@dataclass(frozen=True)
class SolitonParams:
    X0: float
    v: float
    Xmax: float

    def __post_init__(self):
        _check_speed(self.v)


def _check_speed(v: float) -> float:
    if not abs(v) < 1.0:
        raise DomainError(f"soliton speed must satisfy |v| < 1, got {v}")
    return float(np.sqrt(1.0 - v * v))


# === Densities ===


def sine_quotient(ya, yb):
    """(sin yb − sin ya)/(yb − ya), with cos(ȳ)(1 − Δ²/24) for |Δ| < 1e−6."""
    ya, yb = np.asarray(ya, dtype=float), np.asarray(yb, dtype=float)
    d = yb - ya
    small = np.abs(d) < TAYLOR_THRESHOLD
    exact = (np.sin(yb) - np.sin(ya)) / np.where(small, 1.0, d)
    series = np.cos(0.5 * (ya + yb)) * (1.0 - d * d / 24.0)
    return np.where(small, series, exact)


def _half_sinc(d):
    """σ(d) = sin(d/2)/(d/2) and its first two derivatives."""
    small = np.abs(d) < SINC_SERIES_THRESHOLD
    safe = np.where(small, 1.0, d)
    s, c = np.sin(0.5 * safe), np.cos(0.5 * safe)
    d2 = d * d
    sigma = np.sinc(d / (2.0 * np.pi))
    dsigma = np.where(small, -d / 12.0 + d * d2 / 480.0 - d * d2 * d2 / 53760.0, c / safe - 2.0 * s / safe**2)
    d2sigma = np.where(
        small,
        -1.0 / 12.0 + d2 / 160.0 - d2 * d2 / 10752.0,
        -s / (2.0 * safe) - 2.0 * c / safe**2 + 4.0 * s / safe**3,
    )
    return sigma, dsigma, d2sigma


_MIDPOINT_MAP = np.array([[0.5, 0.5, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def sine_gordon_cell(ya, yb, delta):
    """Closed-form cell potential ∫(½φ_X² + 1 − cos φ)dX over one linear cell.

    Returns the value, the gradient and the Hessian with respect to
    (y_a, y_b, δ); the last two have shapes (n, 3) and (n, 3, 3).
    """
    d = yb - ya
    m = 0.5 * (ya + yb)
    sigma, dsigma, d2sigma = _half_sinc(d)
    cm, sm = np.cos(m), np.sin(m)
    value = 0.5 * d * d / delta + delta * (1.0 - sine_quotient(ya, yb))

    # derivatives in (midpoint, difference, width)
    grad = np.stack(
        [delta * sm * sigma, d / delta - delta * cm * dsigma, -0.5 * d * d / delta**2 + 1.0 - cm * sigma],
        axis=-1,
    )
    h_mm = delta * cm * sigma
    h_md = delta * sm * dsigma
    h_mw = sm * sigma
    h_dd = 1.0 / delta - delta * cm * d2sigma
    h_dw = -d / delta**2 - cm * dsigma
    h_ww = d * d / delta**3
    hess = np.stack(
        [
            np.stack([h_mm, h_md, h_mw], axis=-1),
            np.stack([h_md, h_dd, h_dw], axis=-1),
            np.stack([h_mw, h_dw, h_ww], axis=-1),
        ],
        axis=-2,
    )
    P = _MIDPOINT_MAP
    return value, grad @ P, np.einsum("ai,nab,bj->nij", P, hess, P)


def sine_gordon_density() -> DensitySpec:
    """R(φ_X, φ) = ½φ_X² + 1 − cos φ."""
    return DensitySpec(
        name="sine_gordon",
        R=lambda p, phi: 0.5 * np.asarray(p) ** 2 + 1.0 - np.cos(phi),
        dR_dphiX=lambda p, phi: np.asarray(p, dtype=float) + 0.0 * np.asarray(phi),
        dR_dphi=lambda p, phi: np.sin(phi) + 0.0 * np.asarray(p),
        d2R_dphiX2=_constant(1.0),
        d2R_dphiX_dphi=_constant(0.0),
        d2R_dphi2=lambda p, phi: np.cos(phi) + 0.0 * np.asarray(p),
        cell_potential=sine_gordon_cell,
    )


def wave_density() -> DensitySpec:
    """R(φ_X, φ) = ½φ_X², the linear wave equation."""
    return DensitySpec(
        name="wave",
        R=lambda p, phi: 0.5 * np.asarray(p) ** 2 + 0.0 * np.asarray(phi),
        dR_dphiX=lambda p, phi: np.asarray(p, dtype=float) + 0.0 * np.asarray(phi),
        dR_dphi=_constant(0.0),
        d2R_dphiX2=_constant(1.0),
        d2R_dphiX_dphi=_constant(0.0),
        d2R_dphi2=_constant(0.0),
    )


# === Reference solutions ===


def soliton(X, t, p: SolitonParams):
    """Single kink 4 arctan exp((X − X0 − vt)/√(1−v²))."""
    g = _check_speed(p.v)
    with np.errstate(over="ignore"):
        return 4.0 * np.arctan(np.exp((np.asarray(X, dtype=float) - p.X0 - p.v * t) / g))


def soliton_X(X, t, p: SolitonParams):
    g = _check_speed(p.v)
    xi = (np.asarray(X, dtype=float) - p.X0 - p.v * t) / g
    with np.errstate(over="ignore"):
        return 2.0 / (g * np.cosh(xi))


def soliton_t(X, t, p: SolitonParams):
    return -p.v * soliton_X(X, t, p)


def two_soliton(X, t, v: float):
    """Soliton-antisoliton pair 4 arctan[v sinh(X/√(1−v²)) / cosh(vt/√(1−v²))]."""
    g = _check_speed(v)
    return 4.0 * np.arctan(v * np.sinh(np.asarray(X, dtype=float) / g) / np.cosh(v * t / g))


def two_soliton_X(X, t, v: float):
    g = _check_speed(v)
    X = np.asarray(X, dtype=float)
    c = np.cosh(v * t / g)
    z = v * np.sinh(X / g) / c
    return 4.0 / (1.0 + z * z) * v * np.cosh(X / g) / (g * c)


def two_soliton_t(X, t, v: float):
    g = _check_speed(v)
    X = np.asarray(X, dtype=float)
    c = np.cosh(v * t / g)
    z = v * np.sinh(X / g) / c
    return -4.0 / (1.0 + z * z) * z * np.tanh(v * t / g) * v / g


def nearly_exact_bounce(X, t: float, Xmax: float, v: float, T: float):
    """Single soliton bouncing between the walls of [0, Xmax], period 4T."""
    if t < 0:
        raise DomainError(f"bounce reference is defined for t >= 0, got {t}")
    tau = t - 4.0 * T * np.floor(t / (4.0 * T))
    X = np.asarray(X, dtype=float)
    if tau < 2.0 * T:
        return two_soliton(X - Xmax, tau - T, v) + 2.0 * np.pi
    return two_soliton(X, tau - 3.0 * T, v)


def find_bounce_time(Xmax: float, v: float) -> float:
    """Half-bounce time T with φ_SS(Xmax/2, T) = π."""
    g = _check_speed(v)
    if Xmax <= 0:
        raise DomainError(f"Xmax must be positive, got {Xmax}")
    half = 0.5 * Xmax

    def residual(t):
        return float(two_soliton(half, t, v)) - np.pi

    # cosh(v t / g) overflows past ~710
    upper = min(10.0 * Xmax, 600.0 * g) / abs(v)
    if residual(0.0) * residual(upper) > 0:
        raise NoConvergence(f"no bounce time bracketed in (0, {upper})")
    T = scipy.optimize.brentq(residual, 0.0, upper, xtol=1e-14, rtol=4.0 * np.finfo(float).eps, maxiter=200)
    if abs(residual(T)) >= BOUNCE_TOLERANCE:
        raise NoConvergence(f"bounce time residual {residual(T):.3e} above tolerance")
    return float(T)


# === Energy ===


def continuum_energy(
    profile: Callable,
    profile_t: Callable,
    density: DensitySpec,
    Xmax: float,
    nquad: int,
    profile_X: Optional[Callable] = None,
) -> float:
    """E = ∫₀^Xmax ½φₜ² + R(φ_X, φ) dX by composite 5-point Gauss-Legendre.

    ``profile_X`` defaults to a centered difference of ``profile``.
    """
    if nquad < 2:
        raise ValueError(f"nquad must be at least 2, got {nquad}")
    nodes, weights = roots_legendre(5)
    edges = np.linspace(0.0, Xmax, nquad + 1)
    half = 0.5 * np.diff(edges)
    X = (0.5 * (edges[:-1] + edges[1:]))[:, None] + half[:, None] * nodes[None, :]
    if profile_X is None:
        h = 1e-6 * (1.0 + Xmax)
        phi_x = (np.asarray(profile(X + h)) - np.asarray(profile(X - h))) / (2.0 * h)
    else:
        phi_x = np.asarray(profile_X(X))
    integrand = 0.5 * np.asarray(profile_t(X)) ** 2 + density.R(phi_x, np.asarray(profile(X)))
    return float(np.sum(half[:, None] * weights[None, :] * integrand))
