"""
Problem instances for block-missingness matrix completion.
Shapes, block masks, Haar factors, approximately low rank ground truths and
masked observations.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import logging

import numpy as np

from config import round_half_up

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Problem dimensions violate the theory preconditions."""


class FactorMode(str, Enum):
    """How the left and right singular bases are drawn."""
    WORST_CASE_SYMMETRIC = "worst_case_symmetric"
    ASYMMETRIC = "asymmetric"


class TailProfile(str, Enum):
    """Shape of the negligible part of the spectrum."""
    FLAT = "flat"
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


class DominantProfile(str, Enum):
    """Shape of the dominant part of the spectrum."""
    CONSTANT = "constant"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class ProblemShape:
    """Matrix side n, dominant rank k and untreated block offset l."""

    n: int
    k: int
    l: int

    @property
    def beta(self) -> float:
        return self.k / self.n

    @property
    def eta(self) -> float:
        return self.l / self.n

    def validate(self) -> None:
        """Validate 0 <= k <= l <= n and n >= 1."""
        if self.n < 1:
            raise ShapeError(f"n must be >= 1, got {self.n}")
        if self.k < 0:
            raise ShapeError(f"k must be >= 0, got {self.k}")
        if self.k > self.l:
            raise ShapeError(f"theory assumes k <= l, got k={self.k}, l={self.l}")
        if self.l > self.n:
            raise ShapeError(f"l must be <= n, got l={self.l}, n={self.n}")


@dataclass(frozen=True)
class Mask:
    """Block missingness pattern: the bottom-right (n-l1) x (n-l2) block is unobserved."""

    n_rows: int
    n_cols: int
    l1: int
    l2: int
    entries: np.ndarray

    @property
    def missing_count(self) -> int:
        return (self.n_rows - self.l1) * (self.n_cols - self.l2)

    @property
    def observed(self) -> np.ndarray:
        """Boolean view of the observed entries."""
        return self.entries.astype(bool)


@dataclass(frozen=True)
class SpectrumSpec:
    """Dominant and tail singular value settings."""

    sigma_mag: float = 50.0
    sigma_eps: float = 1.0
    tail_profile: TailProfile = TailProfile.FLAT
    normalize_tail_norm: bool = True
    dominant_profile: DominantProfile = DominantProfile.CONSTANT

    def __post_init__(self) -> None:
        object.__setattr__(self, "tail_profile", TailProfile(self.tail_profile))
        object.__setattr__(self, "dominant_profile", DominantProfile(self.dominant_profile))

    def validate(self) -> None:
        if not self.sigma_mag > 0:
            raise ShapeError(f"sigma_mag must be > 0, got {self.sigma_mag}")
        if self.sigma_eps < 0:
            raise ShapeError(f"sigma_eps must be >= 0, got {self.sigma_eps}")


@dataclass(frozen=True)
class GroundTruth:
    """Approximately low rank X_sol = U diag(sigma, eps_sigma) V^T."""

    shape: ProblemShape
    U: np.ndarray
    V: np.ndarray
    sigma: np.ndarray
    eps_sigma: np.ndarray
    X_sol: np.ndarray
    symmetric_factors: bool

    @property
    def Ubar(self) -> np.ndarray:
        return self.U[:, : self.shape.k]

    @property
    def Vbar(self) -> np.ndarray:
        return self.V[:, : self.shape.k]

    @property
    def Uperp(self) -> np.ndarray:
        return self.U[:, self.shape.k :]

    @property
    def Vperp(self) -> np.ndarray:
        return self.V[:, self.shape.k :]

    @property
    def spectrum(self) -> np.ndarray:
        """diag(sigma, eps_sigma) in block order."""
        return np.concatenate([self.sigma, self.eps_sigma])


@dataclass(frozen=True)
class Observation:
    """Masked data Y = M o X with the unobserved block stored as zeros."""

    Y: np.ndarray
    mask: Mask


def make_shape(n: int, k: int, l: int) -> ProblemShape:
    """Build a validated problem shape."""
    shape = ProblemShape(n=int(n), k=int(k), l=int(l))
    shape.validate()
    return shape


def build_mask(n: int, l1: int, l2: int) -> Mask:
    """Return the n x n mask whose entry (i, j) is zero iff i >= l1 and j >= l2 (0-based)."""
    if n < 1:
        raise ShapeError(f"n must be >= 1, got {n}")
    for name, value in (("l1", l1), ("l2", l2)):
        if not 0 <= value <= n:
            raise ShapeError(f"{name} must lie in [0, {n}], got {value}")
    entries = np.ones((n, n), dtype=np.int8)
    entries[l1:, l2:] = 0
    return Mask(n_rows=n, n_cols=n, l1=int(l1), l2=int(l2), entries=entries)


def sample_haar_basis(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an n x d orthonormal basis from the Haar measure.

    Orthonormalizes a standard Gaussian matrix by QR and flips column signs so
    that R has a positive diagonal, which makes the factorization unique and
    the result rotation invariant.
    """
    if not 1 <= d <= n:
        raise ShapeError(f"basis needs 1 <= d <= n, got d={d}, n={n}")
    gaussian = rng.standard_normal((n, d))
    q, r = np.linalg.qr(gaussian, mode="reduced")
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _draw_dominant(k: int, spec: SpectrumSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.dominant_profile == DominantProfile.UNIFORM:
        low = min(spec.sigma_eps, spec.sigma_mag)
        # uniform on (low, sigma_mag]
        return spec.sigma_mag - (spec.sigma_mag - low) * rng.random(k)
    return np.full(k, float(spec.sigma_mag))


def _draw_tail(size: int, spec: SpectrumSpec, rng: np.random.Generator) -> np.ndarray:
    if size == 0:
        return np.zeros(0)
    if spec.tail_profile == TailProfile.GAUSSIAN:
        tail = spec.sigma_eps * np.abs(rng.standard_normal(size))
    elif spec.tail_profile == TailProfile.UNIFORM:
        tail = spec.sigma_eps * rng.random(size)
    else:
        tail = np.full(size, float(spec.sigma_eps))
    if spec.normalize_tail_norm and spec.sigma_eps > 0:
        norm = np.linalg.norm(tail)
        if norm > 0:
            tail = tail * (np.sqrt(size) * spec.sigma_eps / norm)
    return tail


def build_ground_truth(
    shape: ProblemShape,
    spec: SpectrumSpec,
    mode: FactorMode,
    rng: np.random.Generator,
) -> GroundTruth:
    """Assemble X_sol from Haar factors and the requested spectrum."""
    shape.validate()
    spec.validate()
    mode = FactorMode(mode)
    if shape.k == shape.n and spec.sigma_eps > 0:
        raise ShapeError("k = n leaves no room for a nonzero tail")

    U = sample_haar_basis(shape.n, shape.n, rng)
    if mode == FactorMode.WORST_CASE_SYMMETRIC:
        V = U
    else:
        V = sample_haar_basis(shape.n, shape.n, rng)

    sigma = _draw_dominant(shape.k, spec, rng)
    eps_sigma = _draw_tail(shape.n - shape.k, spec, rng)
    spectrum = np.concatenate([sigma, eps_sigma])
    X_sol = (U * spectrum) @ V.T
    logger.debug(
        "Ground truth n=%s k=%s mode=%s tail=%s",
        shape.n,
        shape.k,
        mode.value,
        spec.tail_profile.value,
    )
    return GroundTruth(
        shape=shape,
        U=U,
        V=V,
        sigma=sigma,
        eps_sigma=eps_sigma,
        X_sol=X_sol,
        symmetric_factors=mode == FactorMode.WORST_CASE_SYMMETRIC,
    )


def apply_mask(mask: Mask, X: np.ndarray) -> Observation:
    """Zero the unobserved block of X."""
    X = np.asarray(X, dtype=float)
    if X.shape != mask.entries.shape:
        raise ShapeError(
            f"matrix shape {X.shape} does not match mask shape {mask.entries.shape}"
        )
    return Observation(Y=np.where(mask.observed, X, 0.0), mask=mask)


def shape_from_ratios(n: int, beta: float, eta: float) -> ProblemShape:
    """Round beta*n and eta*n half up and validate the resulting shape."""
    return make_shape(n, round_half_up(beta * n), round_half_up(eta * n))


def relative_error(X_hat: np.ndarray, X_ref: np.ndarray) -> float:
    """Return ||X_hat - X_ref||_F / ||X_ref||_F (or the absolute error on a zero reference)."""
    ref_norm = float(np.linalg.norm(X_ref))
    diff = float(np.linalg.norm(X_hat - X_ref))
    if ref_norm == 0.0:
        return diff
    return diff / ref_norm


def orthonormal_deviation(B: np.ndarray) -> float:
    """Return the operator-norm deviation ||B^T B - I||_2 of a column basis."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2:
        raise ShapeError(f"basis must be a 2-D array, got {B.ndim} dims")
    if B.shape[1] == 0:
        return 0.0
    gram = B.T @ B
    return float(np.linalg.norm(gram - np.eye(B.shape[1]), ord=2))
