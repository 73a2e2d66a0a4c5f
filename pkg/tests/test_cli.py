import json

import yaml

from cohort_matcher.cli import main


def config_file(tmp_path, **extra):
    raw = {"seed": 5, "synthetic": {"n": 500}, "gammas": [1.0, 1.5, 2.0], "out": str(tmp_path / "out")}
    raw.update(extra)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_init_writes_template_once(tmp_path, capsys):
    target = tmp_path / "c.yaml"
    assert main(["init", "--out", str(target)]) == 0
    assert target.exists()
    assert main(["init", "--out", str(target)]) == 2
    assert main(["init", "--out", str(target), "--force"]) == 0


def test_simulate_writes_csv_and_schema(tmp_path):
    cfg = config_file(tmp_path)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")]) == 0
    names = sorted(p.suffix for p in (tmp_path / "sim").iterdir())
    assert names == [".csv", ".yaml"]


def test_run_then_report(tmp_path, capsys):
    cfg = config_file(tmp_path)
    assert main(["run", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    assert (out / "manifest.json").exists()
    capsys.readouterr()
    assert main(["report", "--config", str(cfg)]) == 0
    printed = capsys.readouterr().out
    assert printed == (out / "report.md").read_text()


def test_report_flags_edited_table(tmp_path):
    cfg = config_file(tmp_path)
    assert main(["run", "--config", str(cfg)]) == 0
    path = tmp_path / "out" / "composition.csv"
    path.write_text("something,else\n1,2\n")
    assert main(["report", "--out", str(tmp_path / "out")]) == 3


def test_report_without_bundle(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 3


def test_empty_outcomes_exit_two(tmp_path, capsys):
    cfg = config_file(tmp_path, outcomes=[])
    assert main(["run", "--config", str(cfg)]) == 2
    assert "outcome" in capsys.readouterr().err


def test_unknown_outcome_flag(tmp_path):
    cfg = config_file(tmp_path, outcomes=["pain"])
    assert main(["estimate", "--config", str(cfg), "--outcome", "max_bmi"]) == 2


def test_partial_subcommand_writes_its_tables(tmp_path):
    cfg = config_file(tmp_path)
    out = tmp_path / "partial"
    assert main(["match", "--config", str(cfg), "--out", str(out), "--comparison", "fb-sc"]) == 0
    names = {p.name for p in out.iterdir()}
    assert "matching_fb-sc.csv" in names
    assert "k_selection.csv" in names
    assert not any(n.startswith("results") for n in names)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["report"] is None


def test_estimate_single_outcome(tmp_path):
    cfg = config_file(tmp_path)
    out = tmp_path / "est"
    assert main(["estimate", "--config", str(cfg), "--out", str(out), "--outcome", "max_bmi"]) == 0
    import pandas as pd

    results = pd.read_csv(out / "results.csv")
    assert set(results["outcome"]) == {"max_bmi"}
    assert len(results) == 4


def test_data_error_exit_three(tmp_path):
    csv = tmp_path / "bad.csv"
    csv.write_text("id,other\n1,2\n")
    cfg = config_file(tmp_path, input=str(csv))
    assert main(["run", "--config", str(cfg)]) == 3
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["status"] == "failed"
