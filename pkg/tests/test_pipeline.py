import json
from dataclasses import replace

import pandas as pd
import pytest
import yaml

from nullsim import null_runs
from cohort_matcher.config import RunConfig, config_from_dict, load_config, write_template
from cohort_matcher.errors import ConfigError, PipelineError
from cohort_matcher.pipeline import run_analysis, run_pipeline
from cohort_matcher.synthetic import SyntheticSpec, generate_synthetic


def test_empty_outcomes_rejected():
    with pytest.raises(ConfigError):
        RunConfig(outcomes=())
    with pytest.raises(ConfigError):
        config_from_dict({"outcomes": []})


@pytest.mark.parametrize(
    "raw",
    [
        {"outcomes": ["height"]},
        {"outcomes": ["pain", "pain"]},
        {"comparisons": ["FB_vs_everyone"]},
        {"k_range": [1, 2]},
        {"alpha": 1.5},
        {"gammas": [0.5, 1.0]},
        {"workers": 0},
        {"caliper_width": 0},
        {"colour": "blue"},
        {"synthetic": {"n": 100, "flavour": 1}},
    ],
)
def test_bad_configs_rejected(raw):
    with pytest.raises(ConfigError):
        cfg = config_from_dict(raw)
        cfg.synthetic_spec()


def test_yaml_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"seed": 4, "comparisons": ["fb-sc"], "k_range": {"min": 2, "max": 4}, "input": "data.csv"}))
    cfg = load_config(path, seed=9)
    assert cfg.seed == 9
    assert cfg.comparisons == ("FB_vs_SC",)
    assert cfg.k_range == (2, 3, 4)
    assert cfg.input == str(tmp_path / "data.csv")


def test_template_loads_to_defaults(tmp_path):
    path = write_template(tmp_path / "t.yaml")
    cfg, default = load_config(path), RunConfig()
    # the template spells out the simulator defaults instead of leaving them empty
    assert cfg.synthetic_spec() == default.synthetic_spec()
    assert replace(cfg, synthetic={}) == default


def test_missing_config_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.yaml")


def test_parallel_matches_serial():
    base = dict(seed=8, synthetic={"n": 700}, gammas=(1.0, 1.5, 2.0))
    a = run_pipeline(RunConfig(workers=1, **base))
    b = run_pipeline(RunConfig(workers=2, **base))
    for ta, tb in zip(a.tables, b.tables):
        pd.testing.assert_frame_equal(ta.frame, tb.frame)


def test_restricted_run_keeps_requested_comparison():
    res = run_analysis(RunConfig(seed=2, synthetic={"n": 600}, comparisons=("FB_vs_SC",), outcomes=("self_rated_health", "max_bmi")))
    assert list(res.comparisons) == ["FB_vs_SC"]
    assert set(res.comparisons["FB_vs_SC"].estimates) == {"self_rated_health", "max_bmi"}


def test_failure_writes_partial_manifest(tmp_path):
    csv_path, schema_path = generate_synthetic(SyntheticSpec(n=200), 0, tmp_path / "data")
    frame = pd.read_csv(csv_path, dtype=str, keep_default_na=False)
    frame.drop(columns=["srbmi"]).to_csv(csv_path, index=False)
    cfg = RunConfig(input=str(csv_path), schema=str(schema_path))
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg, str(tmp_path / "out"))
    assert info.value.exit_code == 3
    assert info.value.module == "cohort"
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert manifest["failed_at"]["module"] == "cohort"
    assert "srbmi" in manifest["failed_at"]["error"]


def test_bundle_manifest_lists_every_table(tmp_path):
    bundle = run_pipeline(RunConfig(seed=3, synthetic={"n": 600}), str(tmp_path))
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert [t["name"] for t in manifest["tables"]] == [t.name for t in bundle.tables]
    assert all(t["schema_ok"] for t in manifest["tables"])
    assert (tmp_path / "report.md").read_text().strip()


@pytest.mark.slow
def test_null_primary_outcome_ci_coverage():
    runs = null_runs()[:100]
    covered = [c for r in runs for c in r.primary_covers.values()]
    # each comparison's interval covers the null in at least 90% of seeds
    assert sum(covered) / len(covered) >= 0.90
    for name in runs[0].primary_covers:
        assert sum(r.primary_covers[name] for r in runs) >= 90


def test_report_states_reference_drop_counts():
    bundle = run_pipeline(RunConfig(seed=1, synthetic={"n": 500}, gammas=(1.0, 2.0)))
    drops = bundle.table("primary_outcome_drops").set_index("Group")["Dropped"]
    text = bundle.markdown
    assert f"{drops['football']} football players" in text
    assert "573 controls" in text and "sum to 575" in text
