"""Tests for result payloads, CSV schemas and the run manifest."""
from __future__ import annotations

import pytest

import records
from harness import SweepCell, SweepResult, TrialOutcome


def _trial(cell_index, trial_index, value, oracle=None, holds=None):
    return TrialOutcome(
        cell_index=cell_index,
        trial_index=trial_index,
        seed=1000 + trial_index,
        value=value,
        relative_error=value / 100.0,
        converged=trial_index != 1,
        iterations=42,
        scaled_oracle=oracle,
        certificate_holds=holds,
    )


def _rmse_result():
    cell = SweepCell(
        cell_index=0,
        beta=0.1,
        eta=0.9,
        n=40,
        k=4,
        l=36,
        trials=(_trial(0, 0, 3.5, 3.6), _trial(0, 1, 3.9, 4.0)),
        theory_xi=3.776,
    )
    return SweepResult(kind="rmse_table", cells=(cell,))


def test_columns_lead_with_run_id():
    for kind, columns in records.RESULT_COLUMNS.items():
        assert columns[0] == "run_id", kind
        assert len(set(columns)) == len(columns)
    assert records.MAGNITUDE_SWEEP_COLUMNS[2] == "ratio"
    assert records.TRIAL_COLUMNS[0] == "run_id"


def test_run_id_is_stable_and_versioned():
    config = {"kind": "rmse_table", "n": 40, "beta_list": [0.1]}
    reordered = {"beta_list": [0.1], "n": 40, "kind": "rmse_table"}
    assert records.compute_run_id(config, "1.0") == records.compute_run_id(reordered, "1.0")
    assert records.compute_run_id(config, "1.0") != records.compute_run_id(config, "1.1")
    assert len(records.compute_run_id(config)) == 16


def test_rmse_payload_aggregates_the_cell():
    payloads = records.cell_payloads(_rmse_result(), "abc")
    row = payloads[0].to_dict()
    assert row["run_id"] == "abc"
    assert row["mean_scaled_rmse"] == pytest.approx(3.7)
    assert row["mean_scaled_oracle"] == pytest.approx(3.8)
    assert row["converged_trials"] == 1
    assert row["trials"] == 2
    assert "ratio" not in row
    assert set(row) <= set(records.RMSE_TABLE_COLUMNS)


def test_oracle_mean_missing_when_any_trial_lacks_it():
    cell = SweepCell(
        cell_index=0, beta=0.1, eta=0.9, n=40, k=4, l=36,
        trials=(_trial(0, 0, 3.5, 3.6), _trial(0, 1, 3.9)),
    )
    row = records.RmseCellPayload.from_cell(cell, "abc").to_dict()
    assert row["mean_scaled_oracle"] is None


def test_pt_payload_rates():
    cell = SweepCell(
        cell_index=0, beta=0.3, eta=0.9, n=40, k=12, l=36,
        trials=(_trial(0, 0, 0.0, holds=True), _trial(0, 1, 50.0, holds=False)),
        success_threshold=1e-3,
    )
    row = records.PtCellPayload.from_cell(cell, "abc").to_dict()
    assert row["success_rate"] == pytest.approx(0.5)
    assert row["certificate_rate"] == pytest.approx(0.5)
    assert set(row) == set(records.PT_SWEEP_COLUMNS)


def test_payload_rejects_inconsistent_shape():
    payload = records.RmseCellPayload(
        run_id="abc", cell_index=0, beta=0.5, eta=0.1, n=10, k=5, l=1, trials=1,
        converged_trials=1, mean_scaled_rmse=1.0, std_error=0.0, theory_xi=None,
        mean_scaled_oracle=None,
    )
    with pytest.raises(ValueError):
        payload.to_dict()


def test_sweep_payload_lists_every_trial():
    payload = records.sweep_payload(_rmse_result(), "abc")
    assert payload["schema_version"] == records.CSV_SCHEMA_VERSION
    assert [row["trial_index"] for row in payload["trials"]] == [0, 1]
    assert all(row["run_id"] == "abc" for row in payload["trials"])
    assert payload["trials"][1]["seed"] == 1001


def test_manifest_round_trip_fields():
    config = {"kind": "rmse_table", "n": 40, "master_seed": 5}
    manifest = records.RunManifest.create("run", config, ("rmse_table.csv",))
    payload = manifest.to_dict()
    assert payload["run_id"] == records.compute_run_id(config)
    assert payload["master_seed"] == 5
    assert payload["outputs"] == ["rmse_table.csv"]
    assert payload["config"] == config


def test_manifest_requires_kind():
    with pytest.raises(ValueError):
        records.RunManifest.create("run", {"n": 4}).to_dict()
