import json

import pytest

from mccgraph.cli import cli_main
from mccgraph.graph import read_graph
from mccgraph.stats import read_csv_table

TINY = {"n_patients": 64, "k_variants": 3, "iterations": 3, "repeats": 3, "gvae_epochs": 8,
        "gnn_epochs": 8}


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(TINY))
    return p


def test_help_exits_zero(capsys):
    assert cli_main(["--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_missing_config_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert cli_main(["run", "--config", str(missing), "--out-dir", str(tmp_path)]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_unknown_flag_exit_2(capsys):
    assert cli_main(["stats", "--in", ".", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_config_value_exit_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"iterations": 0}))
    assert cli_main(["run", "--config", str(p), "--out-dir", str(tmp_path)]) == 2


def test_runtime_failure_exit_1(tmp_path, config, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr("mccgraph.cli.run_comparison", boom)
    assert cli_main(["run", "--config", str(config), "--out-dir", str(tmp_path / "o")]) == 1


def test_synth(tmp_path):
    assert cli_main(["synth", "--n", "70", "--seed", "2", "--out-dir", str(tmp_path)]) == 0
    g, names = read_graph(tmp_path)
    assert g.n == 70 and len(names) == 12 and g.n_edges() == 70 * 69 // 2


def test_run_and_stats(tmp_path, config):
    out = tmp_path / "o"
    assert cli_main(["run", "--config", str(config), "--method", "mab", "--out-dir", str(out)]) == 0
    assert (out / "run_mab_3" / "records.csv").is_file()
    summary = json.loads((out / "run_mab_3" / "summary.json").read_text())
    assert summary["method"] == "mab" and len(summary["repeats"]) == 3
    assert cli_main(["stats", "--in", str(out), "--out-dir", str(tmp_path / "s")]) == 0
    assert len(read_csv_table(tmp_path / "s" / "curves.csv")) == 3


def test_compare_multiple_budgets(tmp_path, config):
    out = tmp_path / "o"
    assert cli_main(["compare", "--config", str(config), "--iterations", "2,3",
                     "--out-dir", str(out)]) == 0
    for m in ("egreedy", "mab", "cb"):
        for k in (2, 3):
            assert (out / f"run_{m}_{k}" / "records.csv").is_file()
    assert len(read_csv_table(out / "pvalues.csv")) == 6


def test_stats_missing_input(tmp_path):
    assert cli_main(["stats", "--in", str(tmp_path / "none")]) == 2
