"""Tests for singular value thresholding and the completion solver."""
from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from model import (
    FactorMode,
    SpectrumSpec,
    apply_mask,
    build_ground_truth,
    build_mask,
    make_shape,
    relative_error,
)
from rmse import residual_oracle, scaled_rmse
from solver import SolverConfig, complete, nuclear_norm, svt


def _instance(seed: int, mode=FactorMode.ASYMMETRIC, sigma_eps: float = 0.0, n: int = 40, k: int = 4, l: int = 36):
    rng = np.random.default_rng(seed)
    spec = SpectrumSpec(sigma_mag=50.0 if sigma_eps else 1.0, sigma_eps=sigma_eps)
    truth = build_ground_truth(make_shape(n, k, l), spec, mode, rng)
    return truth, apply_mask(build_mask(n, l, l), truth.X_sol)


def test_nuclear_norm_examples():
    assert nuclear_norm(np.eye(3)) == pytest.approx(3.0)
    assert nuclear_norm(np.diag([3.0, -4.0])) == pytest.approx(7.0)
    u = np.array([0.6, 0.8])
    assert nuclear_norm(np.outer(u, u)) == pytest.approx(1.0)


def test_svt_examples():
    assert np.allclose(svt(np.diag([3.0, 1.0]), 2.0), np.diag([1.0, 0.0]))
    X = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(svt(X, 0.0), X)
    assert np.allclose(svt(X, 100.0), 0.0)
    with pytest.raises(ValueError):
        svt(X, -1.0)


def test_solver_config_from_dict():
    config = SolverConfig.from_dict({"max_iters": 10, "rel_tol": 1e-6})
    assert config.max_iters == 10
    assert config.step == SolverConfig().step
    assert SolverConfig.from_dict(None) == SolverConfig()
    with pytest.raises(ValueError):
        SolverConfig.from_dict({"step": 0.0})
    assert "stall_window" not in config.to_dict()


def test_fully_observed_matrix_is_returned_unchanged(rng):
    X = rng.standard_normal((8, 8))
    completion = complete(apply_mask(build_mask(8, 8, 8), X))
    assert np.array_equal(completion.X_hat, X)
    assert completion.converged


def test_zero_data_completes_to_zero():
    completion = complete(apply_mask(build_mask(5, 3, 3), np.zeros((5, 5))))
    assert np.array_equal(completion.X_hat, np.zeros((5, 5)))
    assert completion.iterations_used == 0


def test_exact_recovery_below_the_boundary():
    truth, observation = _instance(21)
    completion = complete(observation)
    assert completion.converged
    assert relative_error(completion.X_hat, truth.X_sol) < 1e-6


def test_observed_entries_are_kept_exactly():
    _, observation = _instance(22, sigma_eps=1.0)
    completion = complete(observation)
    observed = observation.mask.observed
    assert np.array_equal(completion.X_hat[observed], observation.Y[observed])
    assert completion.feasibility_gap == 0.0


def test_entries_outside_the_mask_are_ignored():
    _, observation = _instance(23, sigma_eps=1.0)
    tampered = observation.Y.copy()
    tampered[36:, 36:] = 1e3
    first = complete(observation).X_hat
    second = complete(dataclasses.replace(observation, Y=tampered)).X_hat
    assert np.array_equal(first, second)


def test_objective_trace_ends_at_the_minimum():
    _, observation = _instance(24, sigma_eps=1.0)
    completion = complete(observation, SolverConfig(log_every=10))
    iterations = [it for it, _, _ in completion.objective_trace]
    assert iterations == sorted(iterations)
    assert iterations[-1] == completion.iterations_used
    # every trace point is feasible, so none can beat the optimum
    floor = completion.nuclear_norm_value * (1.0 - 1e-6)
    assert all(value >= floor for _, value, _ in completion.objective_trace)


def test_fixed_point_residual_never_increases():
    _, observation = _instance(26, sigma_eps=1.0)
    completion = complete(observation, SolverConfig(log_every=5))
    residuals = [residual for _, _, residual in completion.objective_trace]
    assert len(residuals) > 2
    for before, after in zip(residuals, residuals[1:]):
        assert after <= before * (1.0 + 1e-9) + 1e-12
    assert completion.converged
    assert residuals[-1] <= residuals[0] * 1e-6


def test_default_solve_reaches_the_optimum():
    _, observation = _instance(3, sigma_eps=1.0)
    default = complete(observation)
    reference = complete(observation, SolverConfig(max_iters=50000, rel_tol=1e-11, step=0.3))
    assert default.converged
    gap = abs(default.nuclear_norm_value - reference.nuclear_norm_value)
    assert gap <= 1e-6 * reference.nuclear_norm_value
    # the completed block agrees too, not just the objective
    assert relative_error(default.X_hat, reference.X_hat) < 1e-4


def test_iteration_cap_returns_last_feasible_iterate():
    _, observation = _instance(25, sigma_eps=1.0)
    completion = complete(observation, SolverConfig(max_iters=3))
    assert not completion.converged
    assert completion.iterations_used == 3
    observed = observation.mask.observed
    assert np.array_equal(completion.X_hat[observed], observation.Y[observed])


def _oracle_gap(seed: int) -> float:
    truth, observation = _instance(seed, FactorMode.WORST_CASE_SYMMETRIC, sigma_eps=1.0)
    completion = complete(observation)
    scaled = scaled_rmse(float(np.linalg.norm(completion.X_hat - truth.X_sol)), 40, 4, 36)
    oracle = scaled_rmse(residual_oracle(truth.Vperp, 36, 1.0), 40, 4, 36)
    return abs(scaled - oracle) / oracle


def test_worst_case_error_matches_the_oracle():
    for seed in (31, 32, 33):
        assert _oracle_gap(seed) <= 0.02


@pytest.mark.slow
def test_worst_case_error_matches_the_oracle_across_seeds():
    gaps = [_oracle_gap(seed) for seed in range(100, 120)]
    assert max(gaps) <= 0.02


@pytest.mark.slow
def test_recovery_agrees_with_the_certificate():
    from equivalence import certificate

    agree = 0
    for seed in range(20):
        truth, observation = _instance(200 + seed, FactorMode.WORST_CASE_SYMMETRIC, n=20, k=2, l=18)
        completion = complete(observation)
        recovered = relative_error(completion.X_hat, truth.X_sol) < 1e-3
        holds = certificate(truth.Vbar, truth.Vperp, truth.Ubar, truth.Uperp, 18).exact_condition_holds
        agree += recovered == holds
    assert agree >= 18
