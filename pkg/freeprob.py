"""
Limiting spectral law of the projector product D = V U.

V projects onto an (n-k)-dimensional subspace and U onto an independent
(n-l)-dimensional one. With beta = k/n and eta = l/n the law is

    max(beta, eta) delta(x) + bulk on [x_l, x_u] + max(1 - beta - eta, 0) delta(x - 1)

where the bulk density is sqrt(-(x-(beta+eta))^2 - 4 beta eta (x-1)) / (2 pi (x - x^2)).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import logging
import math
from typing import Any, Callable, Dict, Optional, Tuple
import warnings

import numpy as np
from scipy import integrate, linalg

from config import THEORY_SETTINGS
from model import orthonormal_deviation

logger = logging.getLogger(__name__)

Weight = Optional[Callable[[np.ndarray], np.ndarray]]


class QuadratureError(RuntimeError):
    """Bulk quadrature failed to reach the requested tolerance."""


class StieltjesBranch(str, Enum):
    """Square-root branch used when evaluating the G-transform."""
    PLUS = "plus"
    MINUS = "minus"
    PHYSICAL = "physical"


def _check_ratios(beta: float, eta: float) -> None:
    if not (0.0 <= beta <= 1.0 and 0.0 <= eta <= 1.0):
        raise ValueError(f"ratios must lie in [0, 1], got beta={beta}, eta={eta}")


def branch_point(beta: float, eta: float) -> float:
    """Return x_c = beta + eta - 2 beta eta."""
    return beta + eta - 2.0 * beta * eta


def support_edges(beta: float, eta: float) -> Tuple[float, float]:
    """Return the bulk edges (x_l, x_u) = x_c -/+ sqrt(x_c^2 - (beta - eta)^2)."""
    _check_ratios(beta, eta)
    x_c = branch_point(beta, eta)
    disc = x_c * x_c - (beta - eta) ** 2
    if abs(disc) <= THEORY_SETTINGS.discriminant_clamp:
        disc = 0.0
    root = math.sqrt(max(disc, 0.0))
    x_l = max(x_c - root, 0.0)
    x_u = min(x_c + root, 1.0)
    return x_l, x_u


def delta_masses(beta: float, eta: float) -> Tuple[float, float]:
    """Return the point masses (f0, f1) at zero and at one."""
    _check_ratios(beta, eta)
    return max(beta, eta), max(1.0 - beta - eta, 0.0)


def _radicand(x: np.ndarray, beta: float, eta: float) -> np.ndarray:
    return -((x - (beta + eta)) ** 2) - 4.0 * beta * eta * (x - 1.0)


def bulk_density_grid(x: Any, beta: float, eta: float) -> np.ndarray:
    """Vectorized bulk density; zero outside (x_l, x_u) and at the delta locations."""
    _check_ratios(beta, eta)
    x = np.asarray(x, dtype=float)
    x_l, x_u = support_edges(beta, eta)
    out = np.zeros_like(x)
    inside = (x > 0.0) & (x < 1.0) & (x >= x_l) & (x <= x_u)
    if np.any(inside):
        xi = x[inside]
        out[inside] = np.sqrt(np.maximum(_radicand(xi, beta, eta), 0.0)) / (
            2.0 * np.pi * (xi - xi * xi)
        )
    return out


def bulk_density(x: float, beta: float, eta: float) -> float:
    """Evaluate the bulk density at a single point 0 < x < 1."""
    if not 0.0 < x < 1.0:
        raise ValueError(f"bulk density is defined on (0, 1) only, got x={x}")
    return float(bulk_density_grid(np.array([x]), beta, eta)[0])


def _theta_integrand(
    theta: np.ndarray,
    x_l: float,
    x_u: float,
    weight: Weight,
) -> np.ndarray:
    # x = c + r sin(theta): sqrt((x - x_l)(x_u - x)) dx becomes (x - x_l)(x_u - x) dtheta
    half = 0.5 * (x_u - x_l)
    s = np.sin(theta)
    below = half * (1.0 + s)
    above = half * (1.0 - s)
    x = x_l + below
    value = below * above / (2.0 * np.pi * x * ((1.0 - x_u) + above))
    if weight is not None:
        value = value * weight(x)
    return value


def _gauss_legendre(fn: Callable[[np.ndarray], np.ndarray], a: float, b: float) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(THEORY_SETTINGS.fallback_nodes)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return float(half * np.sum(weights * fn(mid + half * nodes)))


def bulk_integral(
    beta: float,
    eta: float,
    weight: Weight = None,
    upper: Optional[float] = None,
    epsrel: Optional[float] = None,
) -> float:
    """Integrate weight(x) * bulk density over [x_l, min(upper, x_u)].

    The sine substitution removes the square-root edge behaviour, so the
    transformed integrand is smooth and adaptive quadrature converges quickly.
    Falls back to high-order Gauss-Legendre when scipy reports trouble.
    """
    _check_ratios(beta, eta)
    x_l, x_u = support_edges(beta, eta)
    half = 0.5 * (x_u - x_l)
    if half <= 0.0:
        return 0.0
    theta_hi = 0.5 * np.pi
    if upper is not None:
        if upper <= x_l:
            return 0.0
        if upper < x_u:
            theta_hi = math.asin(min(max((upper - 0.5 * (x_l + x_u)) / half, -1.0), 1.0))
    theta_lo = -0.5 * np.pi
    rel = THEORY_SETTINGS.quad_epsrel if epsrel is None else epsrel

    def fn(theta):
        return _theta_integrand(np.asarray(theta, dtype=float), x_l, x_u, weight)

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, abserr = integrate.quad(
                lambda t: float(fn(t)),
                theta_lo,
                theta_hi,
                epsabs=0.0,
                epsrel=rel,
                limit=THEORY_SETTINGS.quad_limit,
            )
            if abserr <= max(10.0 * rel * abs(value), 1e-14):
                return float(value)
        except integrate.IntegrationWarning as exc:
            logger.warning("Adaptive bulk quadrature flagged (%s), using Gauss-Legendre", exc)
            value = None

    fallback = _gauss_legendre(fn, theta_lo, theta_hi)
    if not np.isfinite(fallback):
        raise QuadratureError(f"bulk quadrature diverged for beta={beta}, eta={eta}")
    if value is not None and abs(fallback - value) > 1e-6 * max(1.0, abs(fallback)):
        raise QuadratureError(
            f"bulk quadrature did not converge for beta={beta}, eta={eta}: "
            f"adaptive={value!r}, gauss-legendre={fallback!r}"
        )
    return fallback


def bulk_mass(beta: float, eta: float) -> float:
    """Return the bulk probability mass by quadrature."""
    return bulk_integral(beta, eta)


def bulk_cdf(x: float, beta: float, eta: float) -> float:
    """Return the bulk mass on [x_l, x]."""
    return bulk_integral(beta, eta, upper=x)


@dataclass(frozen=True)
class SpectralLaw:
    """Closed-form law of the projector product spectrum."""

    beta: float
    eta: float
    f0: float
    f1: float
    x_l: float
    x_u: float
    x_c: float

    @classmethod
    def from_ratios(cls, beta: float, eta: float) -> "SpectralLaw":
        f0, f1 = delta_masses(beta, eta)
        x_l, x_u = support_edges(beta, eta)
        return cls(
            beta=float(beta),
            eta=float(eta),
            f0=f0,
            f1=f1,
            x_l=x_l,
            x_u=x_u,
            x_c=branch_point(beta, eta),
        )

    @property
    def bulk_mass(self) -> float:
        return 1.0 - self.f0 - self.f1

    def density(self, x: Any) -> np.ndarray:
        return bulk_density_grid(x, self.beta, self.eta)

    def validate(self) -> None:
        if not 0.0 <= self.x_l <= self.x_u <= 1.0:
            raise ValueError(f"edges out of order: x_l={self.x_l}, x_u={self.x_u}")
        if not self.x_l - 1e-12 <= self.x_c <= self.x_u + 1e-12:
            raise ValueError(f"branch point {self.x_c} outside [{self.x_l}, {self.x_u}]")

    def to_dict(self) -> Dict[str, float]:
        self.validate()
        return {
            "beta": self.beta,
            "eta": self.eta,
            "f0": self.f0,
            "f1": self.f1,
            "x_l": self.x_l,
            "x_u": self.x_u,
            "x_c": self.x_c,
            "bulk_mass": self.bulk_mass,
        }


def _check_poles(z: np.ndarray) -> None:
    if np.any((z == 0) | (z == 1)):
        raise ValueError("G-transform has poles at z = 0 and z = 1")


def stieltjes_G(
    z: Any,
    beta: float,
    eta: float,
    branch: StieltjesBranch = StieltjesBranch.PHYSICAL,
) -> Any:
    """Evaluate the G-transform of the projector product law.

    ``plus``/``minus`` use the principal root of the full discriminant.
    ``physical`` uses sqrt(z - x_l) * sqrt(z - x_u), whose cut is exactly the
    bulk and which behaves like 1/z at infinity.
    """
    _check_ratios(beta, eta)
    branch = StieltjesBranch(branch)
    scalar = np.isscalar(z)
    zz = np.asarray(z, dtype=complex)
    _check_poles(zz)
    shift = zz - (beta + eta)
    if branch == StieltjesBranch.PHYSICAL:
        x_l, x_u = support_edges(beta, eta)
        root = np.sqrt(zz - x_l) * np.sqrt(zz - x_u)
    else:
        root = np.sqrt(shift * shift + 4.0 * beta * eta * (zz - 1.0))
        if branch == StieltjesBranch.MINUS:
            root = -root
    value = (shift + root) / (2.0 * (zz * zz - zz))
    return complex(value) if scalar else value


def density_from_G(x: Any, beta: float, eta: float, eps: float = 1e-6) -> np.ndarray:
    """Recover the density as -imag(G(x + i eps)) / pi on the physical branch."""
    x = np.asarray(x, dtype=float)
    g = stieltjes_G(x + 1j * eps, beta, eta, StieltjesBranch.PHYSICAL)
    return -np.imag(g) / np.pi


def projector_G(z: Any, beta: float) -> Any:
    """G-transform (z - beta) / (z^2 - z) of a projector with rank fraction 1 - beta."""
    zz = np.asarray(z, dtype=complex)
    _check_poles(zz)
    value = (zz - beta) / (zz * zz - zz)
    return complex(value) if np.isscalar(z) else value


def projector_S_transform(z: Any, beta: float) -> Any:
    """S-transform (z + 1) / (z + 1 - beta) of a projector with rank fraction 1 - beta."""
    zz = np.asarray(z, dtype=complex)
    if np.any(zz == beta - 1.0):
        raise ValueError(f"S-transform has a pole at z = beta - 1 = {beta - 1.0}")
    value = (zz + 1.0) / (zz + 1.0 - beta)
    return complex(value) if np.isscalar(z) else value


def product_S_transform(z: Any, beta: float, eta: float) -> Any:
    """S-transform of the product law, S_V(z) * S_U(z)."""
    return projector_S_transform(z, beta) * projector_S_transform(z, eta)


def psi_from_G(u: float, beta: float, eta: float) -> float:
    """Moment generating function psi(u) = z G(z) - 1 at z = 1/u, for 0 < u < 1."""
    if not 0.0 < u < 1.0:
        raise ValueError(f"psi is evaluated for 0 < u < 1 here, got u={u}")
    z = 1.0 / u
    return float(np.real(z * stieltjes_G(z, beta, eta)) - 1.0)


def empirical_product_spectrum(Vperp: np.ndarray, Uperp_d: np.ndarray) -> np.ndarray:
    """Return the n eigenvalues of V U in ascending order.

    The nonzero part is the squared singular values of the cross-Gram
    Vperp^T Uperp_d (squared cosines of the principal angles); the rest is zeros.
    """
    Vperp = np.asarray(Vperp, dtype=float)
    Uperp_d = np.asarray(Uperp_d, dtype=float)
    if Vperp.shape[0] != Uperp_d.shape[0]:
        raise ValueError(
            f"bases live in different spaces: {Vperp.shape[0]} vs {Uperp_d.shape[0]} rows"
        )
    tol = THEORY_SETTINGS.orthonormal_tol
    for name, basis in (("Vperp", Vperp), ("Uperp_d", Uperp_d)):
        deviation = orthonormal_deviation(basis)
        if deviation > tol:
            raise ValueError(f"{name} is not orthonormal (deviation {deviation:.3e})")
    n = Vperp.shape[0]
    values = np.zeros(n)
    if Vperp.shape[1] and Uperp_d.shape[1]:
        cosines = linalg.svdvals(Vperp.T @ Uperp_d)
        values[: cosines.size] = np.clip(cosines * cosines, 0.0, 1.0)
    return np.sort(values)
