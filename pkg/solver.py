"""
Nuclear norm completion: min ||X||_* subject to M o X = Y.

Douglas-Rachford splitting between the affine constraint (exact projection,
overwrite the observed entries) and the nuclear norm (singular value
thresholding). The data is scaled by its largest singular value first so the
default step works across signal magnitudes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
from scipy import linalg

from config import SOLVER_SETTINGS
from model import Observation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Iteration limits and splitting parameter."""

    max_iters: int = SOLVER_SETTINGS.max_iters
    rel_tol: float = SOLVER_SETTINGS.rel_tol
    step: float = SOLVER_SETTINGS.step
    log_every: int = SOLVER_SETTINGS.log_every
    stall_window: int = SOLVER_SETTINGS.stall_window

    @classmethod
    def from_dict(cls, raw: Optional[Mapping[str, Any]]) -> "SolverConfig":
        """Overlay a config-file ``solver`` section on the defaults."""
        config = cls()
        if raw:
            config = replace(config, **{key: raw[key] for key in raw})
        config.validate()
        return config

    def validate(self) -> None:
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be > 0, got {self.rel_tol}")
        if not self.step > 0:
            raise ValueError(f"step must be > 0, got {self.step}")
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")
        if self.stall_window < 1:
            raise ValueError(f"stall_window must be >= 1, got {self.stall_window}")

    def to_dict(self) -> Dict[str, Any]:
        self.validate()
        return {
            "max_iters": self.max_iters,
            "rel_tol": self.rel_tol,
            "step": self.step,
            "log_every": self.log_every,
        }


@dataclass(frozen=True)
class Completion:
    """Solver output; observed entries of X_hat equal Y exactly."""

    X_hat: np.ndarray
    iterations_used: int
    converged: bool
    nuclear_norm_value: float
    feasibility_gap: float
    # (iteration, objective, fixed-point residual) every log_every iterations
    objective_trace: Tuple[Tuple[int, float, float], ...] = field(default_factory=tuple)


def nuclear_norm(X: np.ndarray) -> float:
    """Return the sum of singular values."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return 0.0
    return float(np.sum(linalg.svdvals(X)))


def _shrink(X: np.ndarray, tau: float) -> Tuple[np.ndarray, float]:
    u, s, vt = linalg.svd(X, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0.0
    if not np.any(keep):
        return np.zeros_like(X), 0.0
    return (u[:, keep] * s[keep]) @ vt[keep, :], float(np.sum(s))


def svt(X: np.ndarray, tau: float) -> np.ndarray:
    """Soft-threshold the singular values of X by tau."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    X = np.asarray(X, dtype=float)
    if tau == 0 or X.size == 0:
        return X.copy()
    return _shrink(X, tau)[0]


def _residual(W: np.ndarray, X: np.ndarray) -> Tuple[float, float]:
    """Absolute and relative fixed-point residual ||W - X||_F."""
    absolute = float(np.linalg.norm(W - X))
    return absolute, absolute / max(float(np.linalg.norm(X)), np.finfo(float).tiny)


def complete(observation: Observation, config: Optional[SolverConfig] = None) -> Completion:
    """Solve the completion program for one masked observation.

    Stops once the Douglas-Rachford fixed-point residual ||W - X||_F / ||X||_F
    stays below ``rel_tol`` for ``stall_window`` iterations. The residual is
    the step length of the governing sequence Z, so it vanishes only at the
    optimum.
    """
    config = config or SolverConfig()
    config.validate()
    observed = observation.mask.observed
    Y = np.asarray(observation.Y, dtype=float)
    if Y.shape != observed.shape or Y.shape[0] != Y.shape[1]:
        raise ValueError(f"observation must be square and match its mask, got {Y.shape}")
    # entries outside the mask never enter the iteration
    Y = np.where(observed, Y, 0.0)

    scale = float(linalg.svdvals(Y)[0]) if Y.size else 0.0
    if scale == 0.0 or np.all(observed):
        return Completion(
            X_hat=Y.copy(),
            iterations_used=0,
            converged=True,
            nuclear_norm_value=nuclear_norm(Y),
            feasibility_gap=0.0,
        )
    data = Y / scale

    def project(Z: np.ndarray) -> np.ndarray:
        return np.where(observed, data, Z)

    Z = data.copy()
    X = project(Z)
    W = X
    trace = []
    stalled = 0
    converged = False
    iteration = 0
    residual = 0.0
    for iteration in range(1, config.max_iters + 1):
        W, shrunk_norm = _shrink(2.0 * X - Z, config.step)
        residual, relative = _residual(W, X)
        Z = Z + W - X
        if iteration % config.log_every == 0:
            objective = scale * nuclear_norm(X)
            trace.append((iteration, objective, scale * residual))
            logger.debug(
                "iter %s: objective=%.10g, residual=%.3e, shrunk=%.6g",
                iteration,
                objective,
                relative,
                scale * shrunk_norm,
            )
        X = project(Z)
        stalled = stalled + 1 if relative < config.rel_tol else 0
        if stalled >= config.stall_window:
            converged = True
            break

    if not converged:
        logger.warning(
            "Solver stopped after %s iterations without reaching rel_tol=%g",
            iteration,
            config.rel_tol,
        )

    X_hat = scale * project(W)
    X_hat[observed] = Y[observed]
    value = nuclear_norm(X_hat)
    if not trace or trace[-1][0] != iteration:
        trace.append((iteration, value, scale * residual))
    gap = float(np.max(np.abs(X_hat[observed] - Y[observed])))
    return Completion(
        X_hat=X_hat,
        iterations_used=iteration,
        converged=converged,
        nuclear_norm_value=value,
        feasibility_gap=gap,
        objective_trace=tuple(trace),
    )
