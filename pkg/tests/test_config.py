"""Tests for settings, thread resolution and experiment config validation."""
from __future__ import annotations

import pytest

from config import (
    HARNESS_SETTINGS,
    THREADS_ENV,
    ConfigError,
    resolve_threads,
    round_half_up,
    validate_config,
)


def _rmse_config(**overrides):
    raw = {
        "kind": "rmse_table",
        "n": 40,
        "master_seed": 1,
        "eta": 0.9,
        "beta_list": [0.05, 0.1],
    }
    raw.update(overrides)
    return raw


def test_round_half_up():
    assert round_half_up(0.5) == 1
    assert round_half_up(2.5) == 3
    assert round_half_up(0.1 * 40) == 4
    assert round_half_up(0.9 * 40) == 36
    assert round_half_up(1.49) == 1


def test_valid_config_is_returned_unchanged():
    raw = _rmse_config()
    assert validate_config(raw) is raw


def test_all_errors_are_collected():
    raw = _rmse_config(n=0, mode="sideways", colour="blue", solver={"max_iters": 0, "tol": 1})
    with pytest.raises(ConfigError) as info:
        validate_config(raw)
    messages = " | ".join(info.value.errors)
    assert len(info.value.errors) >= 5
    assert "n: expected an integer >= 1" in messages
    assert "mode:" in messages
    assert "colour: unknown key" in messages
    assert "solver.max_iters" in messages
    assert "solver.tol: unknown key" in messages


def test_unknown_kind_is_rejected():
    with pytest.raises(ConfigError, match="kind"):
        validate_config({"kind": "table9"})


def test_rounding_that_breaks_k_le_l_is_rejected():
    raw = _rmse_config(n=10, eta=0.2, beta_list=[0.3])
    with pytest.raises(ConfigError, match="k=3 > l=2"):
        validate_config(raw)


def test_rmse_experiments_need_a_missing_block():
    with pytest.raises(ConfigError, match="l < n"):
        validate_config(_rmse_config(eta=1.0))


def test_magnitude_sweep_needs_one_beta_and_ratios():
    raw = _rmse_config(kind="magnitude_sweep", ratios=[1, -2])
    with pytest.raises(ConfigError) as info:
        validate_config(raw)
    messages = " | ".join(info.value.errors)
    assert "ratios[1]" in messages
    assert "exactly one beta" in messages


def test_pt_sweep_keys():
    raw = {
        "kind": "pt_sweep",
        "n": 40,
        "master_seed": 3,
        "beta_grid": [0.1, 0.3],
        "eta_grid": [0.9, 1.0],
        "success_threshold": 1e-3,
    }
    assert validate_config(raw) is raw
    raw["tail_profile"] = "flat"
    with pytest.raises(ConfigError, match="tail_profile: unknown key"):
        validate_config(raw)


def test_spectrum_check_requires_large_n():
    raw = {"kind": "spectrum_check", "n": 100, "beta": 0.1, "eta": 0.8}
    with pytest.raises(ConfigError, match=f"n >= {HARNESS_SETTINGS.min_spectrum_n}"):
        validate_config(raw)


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads() == HARNESS_SETTINGS.default_threads
    assert resolve_threads(3) == 3
    monkeypatch.setenv(THREADS_ENV, "6")
    assert resolve_threads() == 6
    assert resolve_threads(2) == 2
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        resolve_threads()


def test_shipped_configs_validate():
    from pathlib import Path

    from export import load_config

    paths = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.json"))
    assert paths
    for path in paths:
        assert load_config(path)["kind"] in {"rmse_table", "magnitude_sweep", "pt_sweep", "spectrum_check"}
