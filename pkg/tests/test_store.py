"""Tests for the SQLite run ledger."""
from __future__ import annotations

import pytest

import store


@pytest.fixture
def conn(tmp_path):
    connection = store.get_connection(tmp_path / "ledger.db")
    yield connection
    connection.close()


def _summary(cell_index, **extra):
    summary = {
        "cell_index": cell_index,
        "beta": 0.1,
        "eta": 0.9,
        "ratio": None,
        "mean_value": 3.7512345678901234,
        "std_error": 0.05,
        "theory_xi": 3.776,
        "success_rate": None,
        "trial_count": 2,
    }
    summary.update(extra)
    return summary


def _trials(cell_index):
    return [
        {
            "cell_index": cell_index,
            "trial_index": idx,
            "seed": 2 ** 64 - 1 - idx,
            "value": 3.7,
            "relative_error": 0.01,
            "converged": True,
            "iterations": 120,
        }
        for idx in range(2)
    ]


def test_run_lifecycle(conn, tmp_path):
    config = {"kind": "rmse_table", "n": 40, "master_seed": 2 ** 64 - 1}
    run_pk = store.start_run(conn, "abcd", "run", config, "0.1.0", tmp_path)
    run = store.get_run(conn, run_pk)
    assert run.kind == "rmse_table"
    assert run.master_seed == str(2 ** 64 - 1)
    assert run.config == config
    assert not run.is_complete

    store.add_cell(conn, run_pk, _summary(0), _trials(0))
    store.add_cell(conn, run_pk, _summary(1, ratio=6.0), _trials(1))
    store.end_run(conn, run_pk)

    assert store.get_run(conn, run_pk).is_complete
    cells = store.get_cells(conn, run_pk)
    assert [cell.cell_index for cell in cells] == [0, 1]
    assert cells[1].ratio == 6.0
    assert cells[0].mean_value == pytest.approx(3.751234567890, abs=1e-12)
    assert store.get_trial_count(conn, run_pk) == 4
    seeds = [row["seed"] for row in conn.execute("SELECT seed FROM trials ORDER BY id")]
    assert seeds[0] == str(2 ** 64 - 1)


def test_runs_are_listed_newest_first(conn, tmp_path):
    first = store.start_run(conn, "a", "run", {"kind": "pt_sweep"}, "0.1.0", tmp_path)
    second = store.start_run(conn, "b", "run", {"kind": "spectrum_check", "seed": 3}, "0.1.0", tmp_path)
    runs = store.get_all_runs(conn)
    assert [run.id for run in runs] == [second, first]
    assert runs[0].master_seed == "3"
    assert len(store.get_all_runs(conn, limit=1)) == 1


def test_delete_run_removes_children(conn, tmp_path):
    run_pk = store.start_run(conn, "a", "run", {"kind": "rmse_table"}, "0.1.0", tmp_path)
    store.add_cell(conn, run_pk, _summary(0), _trials(0))
    store.delete_run(conn, run_pk)
    assert store.get_run(conn, run_pk) is None
    assert store.get_cells(conn, run_pk) == []
    assert store.get_trial_count(conn, run_pk) == 0
