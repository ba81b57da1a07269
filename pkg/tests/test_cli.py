import json

from cli import main


def _run_config(tmp_path):
    path = tmp_path / "random.toml"
    path.write_text(
        "[experiment]\n"
        'env = "overcooked_lite"\n'
        'method = "random"\n'
        "seeds = [1, 2]\n"
        'updates = ["v1.2.1"]\n'
        'output_dir = "out"\n'
        'timing = "off"\n'
        "\n[random]\nmax_steps = 5\n",
        encoding="utf-8",
    )
    return path


def test_unknown_subcommand_is_a_usage_error():
    assert main(["teleport"]) == 2
    assert main(["impact", "--k", "two"]) == 2


def test_impact_prints_one_report(capsys):
    code = main(["impact", "--env", "craftworld", "--item", "Iron Ore", "--k", "1"])
    doc = json.loads(capsys.readouterr().out)
    assert code == 0
    assert "hop_distance" not in doc
    assert set(doc["inferred_related_items"]) == {
        "furnace", "iron ingot", "craft iron sword", "iron pickaxe", "stone pickaxe",
    }


def test_impact_without_items_is_a_config_error(capsys):
    assert main(["impact"]) == 2
    assert "missing --item" in capsys.readouterr().err


def test_gen_tests_prints_cases(capsys):
    assert main(["gen-tests", "--version", "v1.2.1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["test_cases"]) == 4
    assert doc["errors"] == []


def test_unknown_update_version_is_a_pipeline_error():
    assert main(["gen-tests", "--version", "v9.9.9"]) == 3


def test_build_graph_reports_stats(capsys):
    assert main(["build-graph", "--env", "craftworld"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["errors"] == []
    assert doc["stats"]["version_tag"] == "v1.0.0"


def test_run_writes_report_and_report_rereads_it(tmp_path, capsys):
    config = _run_config(tmp_path)
    assert main(["run", "--config", str(config), "--seed", "2"]) == 0
    printed = capsys.readouterr().out
    assert printed.startswith("| Method | Gateway |")
    assert (tmp_path / "out" / "report.md").read_text(encoding="utf-8") == printed
    assert (tmp_path / "out" / "traces" / "random" / "seed_2.jsonl").exists()
    assert not (tmp_path / "out" / "traces" / "random" / "seed_1.jsonl").exists()

    assert main(["report", "--dir", str(tmp_path / "out")]) == 0
    assert capsys.readouterr().out == printed


def test_run_needs_a_readable_config(tmp_path):
    assert main(["run"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 2
    assert main(["report", "--dir", str(tmp_path)]) == 2
