from data_results import SEED_COLUMNS, list_runs, load_seed_rows, save_run


def _row(seed, coverage=3):
    return {"seed": seed, "element_coverage": coverage, "interactions": 8, "update_interactions": 4,
            "interaction_ratio": 0.5, "bug_detection": 2, "bugs": "O01,O02", "total_test_time": 0.0,
            "avg_steps": 2.0, "test_cases": 2}


def test_save_and_load_rows(tmp_path):
    db = tmp_path / "results.db"
    run_id = save_run(db, "overcooked_lite", "klpeg", "mock", 10, 14, [_row(2), _row(1)])
    (run,) = list_runs(db)
    assert run["id"] == run_id
    assert (run["coverage_max"], run["bug_max"], run["seed_count"]) == (10, 14, 2)
    rows = load_seed_rows(db, run_id)
    assert [r["seed"] for r in rows] == [1, 2]
    assert set(rows[0].keys()) == set(SEED_COLUMNS)
    assert rows[0]["bugs"] == "O01,O02"


def test_same_key_replaces_earlier_run(tmp_path):
    db = tmp_path / "results.db"
    save_run(db, "overcooked_lite", "random", "mock", 10, 14, [_row(1), _row(2)])
    run_id = save_run(db, "overcooked_lite", "random", "mock", 10, 14, [_row(7, coverage=5)])
    (run,) = list_runs(db)
    assert run["id"] == run_id
    assert [(r["seed"], r["element_coverage"]) for r in load_seed_rows(db, run_id)] == [(7, 5)]


def test_list_runs_filters_and_orders(tmp_path):
    db = tmp_path / "results.db"
    save_run(db, "overcooked_lite", "random", "mock", 10, 14, [_row(1)])
    save_run(db, "craftworld", "klpeg", "mock", 30, 12, [_row(1)])
    save_run(db, "overcooked_lite", "klpeg", "gpt-4o", 10, 14, [])
    assert [(r["method"], r["gateway"]) for r in list_runs(db, "overcooked_lite")] == [
        ("klpeg", "gpt-4o"), ("random", "mock"),
    ]
    assert [r["env"] for r in list_runs(db)] == ["overcooked_lite", "craftworld", "overcooked_lite"]
    assert list_runs(db, "overcooked_lite")[0]["seed_count"] == 0
