"""
Worst case phase transition and finite-n recovery certificates.

For a block mask with offset l the nuclear norm heuristic recovers an exactly
rank-k matrix iff lambda_max(Lv^T Lv Lu^T Lu) <= 1, where
Lv = pinv(I_l^T Vperp) I_l^T Vbar and I_l selects the last n - l coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Any, Dict

import numpy as np
from scipy import linalg

from config import THEORY_SETTINGS
from freeprob import support_edges
from model import orthonormal_deviation

logger = logging.getLogger(__name__)


class DegenerateInstanceError(RuntimeError):
    """The masked bases are rank deficient or inconsistent."""


def xi_wc(beta: float, eta: float) -> float:
    """Signed slack beta - 1/2 + sqrt(eta - eta^2); <= 0 means recoverable."""
    if not (0.0 <= beta <= 1.0 and 0.0 <= eta <= 1.0):
        raise ValueError(f"ratios must lie in [0, 1], got beta={beta}, eta={eta}")
    return beta - 0.5 + math.sqrt(max(eta - eta * eta, 0.0))


def pt_boundary(eta: float) -> float:
    """Largest recoverable beta at block offset ratio eta."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    return max(0.5 - math.sqrt(max(eta - eta * eta, 0.0)), 0.0)


def is_recoverable(beta: float, eta: float) -> bool:
    """Return True iff (beta, eta) lies on or below the worst case boundary."""
    return xi_wc(beta, eta) <= 0.0


def lambda_max_limit(beta: float, eta: float) -> float:
    """Large-n limit of lambda_max(Lv^T Lv), i.e. 1/x_l - 1.

    The worst case product is this value squared, so the boundary is x_l = 1/2.
    Returns inf when x_l = 0 (beta >= eta, the masked basis loses rank).
    """
    if beta > eta:
        return math.inf
    x_l, _ = support_edges(beta, eta)
    if x_l <= 0.0:
        return math.inf
    return 1.0 / x_l - 1.0


def _lambda_max_sym(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 0.0
    return float(max(linalg.eigvalsh(0.5 * (matrix + matrix.T))[-1], 0.0))


def _masked_rows(basis: np.ndarray, l: int) -> np.ndarray:
    return basis[l:, :]


def _check_basis(name: str, basis: np.ndarray) -> None:
    deviation = orthonormal_deviation(basis)
    if deviation > THEORY_SETTINGS.orthonormal_tol:
        raise DegenerateInstanceError(f"{name} is not orthonormal (deviation {deviation:.3e})")


def gram_matrix(Vperp: np.ndarray, l: int) -> np.ndarray:
    """Return I_l^T Vperp Vperp^T I_l, the (n - l) x (n - l) masked Gram matrix."""
    block = _masked_rows(np.asarray(Vperp, dtype=float), l)
    return block @ block.T


def q_spectrum(Vperp: np.ndarray, l: int) -> np.ndarray:
    """Return the ascending eigenvalues of Q = Gram^-1 - I."""
    Vperp = np.asarray(Vperp, dtype=float)
    n, width = Vperp.shape
    if not 0 <= l <= n:
        raise ValueError(f"l must lie in [0, {n}], got {l}")
    if n - width > l:
        raise ValueError(f"theory assumes k <= l, got k={n - width}, l={l}")
    gram = gram_matrix(Vperp, l)
    if gram.size == 0:
        return np.zeros(0)
    eigenvalues = linalg.eigvalsh(gram)
    if eigenvalues[0] <= THEORY_SETTINGS.pinv_rcond * max(eigenvalues[-1], 1.0):
        raise DegenerateInstanceError(
            f"masked Gram matrix is singular (smallest eigenvalue {eigenvalues[0]:.3e})"
        )
    return np.sort(1.0 / eigenvalues - 1.0)


def lambda_matrix(basis_bar: np.ndarray, basis_perp: np.ndarray, l: int) -> np.ndarray:
    """Return pinv(I_l^T B_perp) I_l^T B_bar with a relative singular value cutoff."""
    perp_block = _masked_rows(basis_perp, l)
    bar_block = _masked_rows(basis_bar, l)
    if perp_block.shape[0] == 0 or bar_block.shape[1] == 0:
        return np.zeros((basis_perp.shape[1], basis_bar.shape[1]))
    singular = linalg.svdvals(perp_block)
    if singular.size < perp_block.shape[0] or singular[-1] <= THEORY_SETTINGS.pinv_rcond * singular[0]:
        raise DegenerateInstanceError(
            "I_l^T Vperp is rank deficient; the instance sits on a degenerate configuration"
        )
    solution, *_ = linalg.lstsq(perp_block, bar_block, cond=THEORY_SETTINGS.pinv_rcond)
    return solution


@dataclass(frozen=True)
class Certificate:
    """Spectral recovery certificate for one instance."""

    lambda_max_product: float
    lambda_max_V: float
    lambda_max_U: float
    exact_condition_holds: bool
    sufficient_condition_holds: bool
    gram_check_deviation: float

    def validate(self) -> None:
        if self.lambda_max_V < 0 or self.lambda_max_U < 0:
            raise ValueError("lambda_max values must be non-negative")
        if self.sufficient_condition_holds and not self.exact_condition_holds:
            raise ValueError("sufficient condition holds but the exact one fails")

    def to_dict(self) -> Dict[str, Any]:
        self.validate()
        return {
            "lambda_max_product": self.lambda_max_product,
            "lambda_max_V": self.lambda_max_V,
            "lambda_max_U": self.lambda_max_U,
            "exact_condition_holds": self.exact_condition_holds,
            "sufficient_condition_holds": self.sufficient_condition_holds,
        }


def certificate(
    Vbar: np.ndarray,
    Vperp: np.ndarray,
    Ubar: np.ndarray,
    Uperp: np.ndarray,
    l: int,
) -> Certificate:
    """Compute the exact and sufficient equivalence conditions for an instance."""
    Vbar, Vperp, Ubar, Uperp = (np.asarray(b, dtype=float) for b in (Vbar, Vperp, Ubar, Uperp))
    n = Vperp.shape[0]
    k = Vbar.shape[1]
    if Ubar.shape[1] != k or Vperp.shape[1] != n - k or Uperp.shape[1] != n - k:
        raise ValueError("bases must split as k dominant and n - k complementary columns")
    if k > l:
        raise ValueError(f"theory assumes k <= l, got k={k}, l={l}")
    _check_basis("V", np.hstack([Vbar, Vperp]))
    _check_basis("U", np.hstack([Ubar, Uperp]))

    if k == 0 or l == n:
        return Certificate(0.0, 0.0, 0.0, True, True, 0.0)

    lam_v = lambda_matrix(Vbar, Vperp, l)
    lam_u = lambda_matrix(Ubar, Uperp, l)
    lambda_v = _lambda_max_sym(lam_v.T @ lam_v)
    lambda_u = _lambda_max_sym(lam_u.T @ lam_u)
    # lambda_max(Lv^T Lv Lu^T Lu) = sigma_max(Lu Lv^T)^2 = lambda_max(L_opt^T L_opt)
    product_singular = linalg.svdvals(lam_u @ lam_v.T)
    lambda_product = float(product_singular[0] ** 2) if product_singular.size else 0.0

    q_max = float(q_spectrum(Vperp, l)[-1])
    deviation = abs(lambda_v - q_max)
    if deviation > THEORY_SETTINGS.normalization_tol * max(1.0, q_max):
        raise DegenerateInstanceError(
            f"lambda_max(Lv^T Lv)={lambda_v:.12g} disagrees with the Gram form {q_max:.12g}"
        )

    sufficient = lambda_v * lambda_u <= 1.0
    cert = Certificate(
        lambda_max_product=lambda_product,
        lambda_max_V=lambda_v,
        lambda_max_U=lambda_u,
        # product <= V * U holds exactly; rounding must not break the implication
        exact_condition_holds=lambda_product <= 1.0 or sufficient,
        sufficient_condition_holds=sufficient,
        gram_check_deviation=deviation,
    )
    logger.debug(
        "Certificate k=%s l=%s: product=%.4f, V=%.4f, U=%.4f",
        k,
        l,
        lambda_product,
        lambda_v,
        lambda_u,
    )
    return cert
