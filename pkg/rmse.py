"""
Worst case residual error of the nuclear norm estimate.

theoretical_xi is the large-n closed form, residual_oracle its finite-n
counterpart on a sampled worst case instance, and scaled_rmse the
normalization both are reported in.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Any, Dict, Optional

import numpy as np
from scipy import linalg

from config import THEORY_SETTINGS
from equivalence import xi_wc
from freeprob import bulk_integral, delta_masses
from model import ShapeError, orthonormal_deviation

logger = logging.getLogger(__name__)


class NotRecoverableError(ValueError):
    """The instance sits above the worst case phase transition."""


def _inverse_square(x: np.ndarray) -> np.ndarray:
    return 1.0 / (x * x)


def theoretical_xi(beta: float, eta: float, sigma_eps: float) -> float:
    """Return the worst case scaled RMSE for ratios (beta, eta) and tail level sigma_eps.

    xi = sigma_eps * sqrt(int bulk(x) / x^2 dx + f1) / (sqrt(1 - beta) (1 - eta))

    The integral is finite only while x_l > 0, i.e. for beta < eta, and the
    value is meaningful up to and including the phase transition boundary.
    """
    if sigma_eps < 0:
        raise ValueError(f"sigma_eps must be >= 0, got {sigma_eps}")
    if not 0.0 < eta < 1.0:
        raise NotRecoverableError(f"eta must lie in (0, 1), got {eta}")
    if not 0.0 <= beta < eta:
        raise NotRecoverableError(
            f"need 0 <= beta < eta for a finite bound, got beta={beta}, eta={eta}"
        )
    slack = xi_wc(beta, eta)
    if slack > THEORY_SETTINGS.boundary_slack:
        raise NotRecoverableError(
            f"(beta={beta}, eta={eta}) lies above the phase transition "
            f"beta_wc={beta - slack:.6f}; the worst case error is unbounded"
        )
    weighted = bulk_integral(beta, eta, weight=_inverse_square)
    _, f1 = delta_masses(beta, eta)
    xi = sigma_eps * math.sqrt(weighted + f1) / (math.sqrt(1.0 - beta) * (1.0 - eta))
    logger.debug("xi(beta=%s, eta=%s, sigma_eps=%s) = %.6f", beta, eta, sigma_eps, xi)
    return xi


def residual_oracle(Vperp: np.ndarray, l: int, sigma_eps: float) -> float:
    """Return sigma_eps * sqrt(sum 1 / s_i^4) over the singular values s of Vperp[l:, :].

    This is the Frobenius norm of the optimal residual for the worst case
    symmetric instance with a flat tail.
    """
    Vperp = np.asarray(Vperp, dtype=float)
    n, width = Vperp.shape
    if not 0 <= l <= n:
        raise ShapeError(f"l must lie in [0, {n}], got {l}")
    if n - width > l:
        raise ShapeError(f"theory assumes k <= l, got k={n - width}, l={l}")
    deviation = orthonormal_deviation(Vperp)
    if deviation > THEORY_SETTINGS.orthonormal_tol:
        raise ShapeError(f"Vperp is not orthonormal (deviation {deviation:.3e})")
    if l == n:
        return 0.0
    singular = linalg.svdvals(Vperp[l:, :])
    if singular.size < n - l or singular[-1] < THEORY_SETTINGS.oracle_min_singular:
        smallest = singular[-1] if singular.size else 0.0
        raise NotRecoverableError(
            f"masked block of Vperp is rank deficient (smallest singular value {smallest:.3e}); "
            "the instance is at or above the phase transition"
        )
    return float(sigma_eps * math.sqrt(np.sum(singular ** -4.0)))


def scaled_rmse(raw: float, n: int, k: int, l: int) -> float:
    """Return n * raw / (sqrt(n - k) * (n - l))."""
    if k >= n or l >= n:
        raise ShapeError(f"scaled RMSE needs k < n and l < n, got n={n}, k={k}, l={l}")
    return n * raw / (math.sqrt(n - k) * (n - l))


@dataclass(frozen=True)
class RmseReport:
    """Residual of one completion next to its theoretical references."""

    n: int
    k: int
    l: int
    raw_frobenius: float
    scaled: float
    theory_xi: Optional[float] = None
    oracle_residual: Optional[float] = None

    @classmethod
    def from_residual(
        cls,
        raw: float,
        n: int,
        k: int,
        l: int,
        theory_xi: Optional[float] = None,
        oracle_residual: Optional[float] = None,
    ) -> "RmseReport":
        return cls(
            n=n,
            k=k,
            l=l,
            raw_frobenius=float(raw),
            scaled=scaled_rmse(raw, n, k, l),
            theory_xi=theory_xi,
            oracle_residual=oracle_residual,
        )

    @property
    def scaled_oracle(self) -> Optional[float]:
        if self.oracle_residual is None:
            return None
        return scaled_rmse(self.oracle_residual, self.n, self.k, self.l)

    def validate(self) -> None:
        if self.raw_frobenius < 0 or self.scaled < 0:
            raise ValueError("residual errors must be non-negative")
        if self.scaled != scaled_rmse(self.raw_frobenius, self.n, self.k, self.l):
            raise ValueError("scaled error does not match the raw error")

    def to_dict(self) -> Dict[str, Any]:
        self.validate()
        return {
            "n": self.n,
            "k": self.k,
            "l": self.l,
            "raw_frobenius": self.raw_frobenius,
            "scaled": self.scaled,
            "theory_xi": self.theory_xi,
            "oracle_residual": self.oracle_residual,
            "scaled_oracle": self.scaled_oracle,
        }
