"""Tests for problem shapes, masks, Haar factors and ground truths."""
from __future__ import annotations

import numpy as np
import pytest

from model import (
    FactorMode,
    ShapeError,
    SpectrumSpec,
    TailProfile,
    apply_mask,
    build_ground_truth,
    build_mask,
    make_shape,
    orthonormal_deviation,
    relative_error,
    sample_haar_basis,
    shape_from_ratios,
)


def test_make_shape_ratios():
    shape = make_shape(40, 4, 36)
    assert shape.beta == pytest.approx(0.1)
    assert shape.eta == pytest.approx(0.9)
    assert make_shape(10, 0, 10).l == 10


@pytest.mark.parametrize("n, k, l", [(0, 0, 0), (10, -1, 5), (10, 6, 5), (10, 2, 11)])
def test_make_shape_rejects_invalid(n, k, l):
    with pytest.raises(ShapeError):
        make_shape(n, k, l)


def test_shape_from_ratios_rounds_half_up():
    shape = shape_from_ratios(40, 0.05, 0.9)
    assert (shape.k, shape.l) == (2, 36)
    shape = shape_from_ratios(10, 0.25, 0.75)
    assert (shape.k, shape.l) == (3, 8)


def test_mask_small_example():
    mask = build_mask(3, 2, 2)
    expected = np.ones((3, 3), dtype=np.int8)
    expected[2, 2] = 0
    assert np.array_equal(mask.entries, expected)
    assert mask.missing_count == 1


@pytest.mark.parametrize("l1, l2", [(0, 0), (3, 0), (0, 5), (5, 5), (2, 4)])
def test_mask_zero_count(l1, l2):
    mask = build_mask(5, l1, l2)
    assert int(np.sum(mask.entries == 0)) == (5 - l1) * (5 - l2)
    assert mask.missing_count == (5 - l1) * (5 - l2)


def test_mask_rejects_offsets_outside_range():
    with pytest.raises(ShapeError):
        build_mask(4, 5, 0)


def test_haar_basis_is_orthonormal_and_reproducible():
    first = sample_haar_basis(5, 5, np.random.default_rng(11))
    second = sample_haar_basis(5, 5, np.random.default_rng(11))
    assert np.array_equal(first, second)
    assert np.allclose(first.T @ first, np.eye(5), atol=1e-10)
    tall = sample_haar_basis(30, 7, np.random.default_rng(3))
    assert orthonormal_deviation(tall) < 1e-10


def test_haar_first_column_is_uniform_on_the_sphere():
    rng = np.random.default_rng(5)
    n, samples = 100, 200
    squares = np.array([sample_haar_basis(n, 30, rng)[:, 0] ** 2 for _ in range(samples)])
    means = squares.mean(axis=0)
    # each squared coordinate has mean 1/n and variance about 2/n^2
    stderr = np.sqrt(2.0) / n / np.sqrt(samples)
    assert np.max(np.abs(means - 1.0 / n)) < 5.0 * stderr


def test_haar_basis_rejects_wide_request():
    with pytest.raises(ShapeError):
        sample_haar_basis(3, 4, np.random.default_rng(0))


def test_ground_truth_flat_tail(rng):
    shape = make_shape(40, 4, 36)
    truth = build_ground_truth(shape, SpectrumSpec(sigma_mag=50.0, sigma_eps=1.0), "worst_case_symmetric", rng)
    assert truth.symmetric_factors
    assert truth.V is truth.U
    assert np.linalg.norm(truth.eps_sigma) == pytest.approx(6.0, abs=1e-12)
    assert truth.sigma.min() >= truth.eps_sigma.max()
    rebuilt = truth.U @ np.diag(truth.spectrum) @ truth.V.T
    assert relative_error(rebuilt, truth.X_sol) <= 1e-12
    assert truth.Vbar.shape == (40, 4)
    assert truth.Uperp.shape == (40, 36)


def test_ground_truth_gaussian_tail_is_normalized(rng):
    shape = make_shape(40, 4, 36)
    spec = SpectrumSpec(sigma_mag=50.0, sigma_eps=1.0, tail_profile=TailProfile.GAUSSIAN)
    truth = build_ground_truth(shape, spec, FactorMode.ASYMMETRIC, rng)
    assert np.linalg.norm(truth.eps_sigma) == pytest.approx(np.sqrt(36.0), abs=1e-12)
    assert not truth.symmetric_factors
    assert orthonormal_deviation(truth.V) < 1e-10


def test_ground_truth_without_tail_normalization(rng):
    spec = SpectrumSpec(sigma_mag=5.0, sigma_eps=2.0, tail_profile="uniform", normalize_tail_norm=False)
    truth = build_ground_truth(make_shape(20, 2, 18), spec, "asymmetric", rng)
    assert np.all(truth.eps_sigma <= 2.0)
    assert np.all(truth.eps_sigma >= 0.0)


def test_uniform_dominant_profile_stays_above_tail(rng):
    spec = SpectrumSpec(sigma_mag=10.0, sigma_eps=1.0, dominant_profile="uniform")
    truth = build_ground_truth(make_shape(20, 5, 18), spec, "asymmetric", rng)
    assert np.all(truth.sigma <= 10.0)
    assert np.all(truth.sigma >= 1.0)


def test_full_rank_dominant_part_needs_zero_tail(rng):
    with pytest.raises(ShapeError):
        build_ground_truth(make_shape(6, 6, 6), SpectrumSpec(sigma_eps=1.0), "asymmetric", rng)
    truth = build_ground_truth(make_shape(6, 6, 6), SpectrumSpec(sigma_eps=0.0), "asymmetric", rng)
    assert truth.eps_sigma.size == 0


def test_apply_mask_zeroes_the_block():
    mask = build_mask(2, 1, 1)
    observation = apply_mask(mask, np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert np.array_equal(observation.Y, np.array([[1.0, 2.0], [3.0, 0.0]]))


def test_apply_mask_is_idempotent(rng):
    mask = build_mask(6, 3, 4)
    X = rng.standard_normal((6, 6))
    once = apply_mask(mask, X).Y
    assert np.array_equal(apply_mask(mask, once).Y, once)


def test_apply_mask_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        apply_mask(build_mask(3, 1, 1), np.zeros((2, 3)))


def test_relative_error_with_zero_reference():
    assert relative_error(np.ones((2, 2)), np.zeros((2, 2))) == pytest.approx(2.0)
    assert relative_error(np.eye(2), np.eye(2)) == 0.0
