import json

import yaml
from click.testing import CliRunner

from intervgap.cli import EXIT_FAILED, EXIT_INVALID, main

from conftest import MINIMAL_CONFIG
from test_oracle import IE_OBS_M1, hand_scm


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def test_validate_ok(analysis_dir):
    res = invoke("validate", "--config", analysis_dir())
    assert res.exit_code == 0, res.output
    assert "ok" in res.output


def test_validate_names_an_undeclared_mediator(analysis_dir):
    cfg = analysis_dir((MINIMAL_CONFIG % {"b": 0}).replace("target: [M]", "target: [M7]"))
    res = invoke("validate", "--config", cfg)
    assert res.exit_code == EXIT_INVALID
    assert "M7" in res.output


def test_validate_reports_missing_columns_and_files(analysis_dir, tmp_path):
    text = (MINIMAL_CONFIG % {"b": 0}).replace("covariates: [C]", "covariates: [C, C2]")
    res = invoke("validate", "--config", analysis_dir(text))
    assert res.exit_code == EXIT_INVALID and "C2" in res.output
    text = (MINIMAL_CONFIG % {"b": 0}).replace("data.tsv", "nowhere.tsv")
    res = invoke("validate", "--config", analysis_dir(text))
    assert res.exit_code == EXIT_INVALID and "not found" in res.output


def test_causal_query_without_assertions_warns(analysis_dir):
    text = (MINIMAL_CONFIG % {"b": 0}).replace(
        "assumptions: [consistency, positivity, A2]", "assumptions: []").replace(
        "    kind: IE_obs\n    target: [M]\n    source: {type: pooled}",
        "    kind: IIE\n    exposure_set_to: 1\n    population: whole\n    target: [M]\n"
        "    source: {type: counterfactual_group, group: 0}")
    res = invoke("validate", "--config", analysis_dir(text))
    assert res.exit_code == 0, res.output
    assert "warning" in res.output and "cumulative" in res.output and "exogeneity" in res.output


def test_run_writes_outputs(analysis_dir, tmp_path):
    out = tmp_path / "res"
    res = invoke("run", "--config", analysis_dir(b=0), "--out", out)
    assert res.exit_code == 0, res.output
    rep = json.loads((out / "report.json").read_text())
    assert "ci" not in rep["estimates"]["align"]
    assert (out / "sweep_single.tsv").exists() and (out / "run_meta.json").exists()
    assert "disparity" in res.output


def test_run_default_out_dir(analysis_dir):
    cfg = analysis_dir(b=0)
    assert invoke("run", "--config", cfg).exit_code == 0
    assert (cfg.parent / "out" / "report.json").exists()


def test_run_with_a_failed_query_exits_1(analysis_dir, tmp_path):
    text = (MINIMAL_CONFIG % {"b": 0}).replace(
        "source: {type: pooled}", "source: {type: fix_constant, values: {M: 50}}", 1)
    out = tmp_path / "res"
    res = invoke("run", "--config", analysis_dir(text), "--out", out)
    assert res.exit_code == EXIT_FAILED
    rep = json.loads((out / "report.json").read_text())
    assert rep["failures"] == ["align"]
    assert "outside" in rep["estimates"]["align"]["error"]


def test_run_with_invalid_config_exits_2(analysis_dir):
    res = invoke("run", "--config", analysis_dir("version: 2\n"))
    assert res.exit_code == EXIT_INVALID


NULL_DGP = """\
version: 1
seed: 3
equations:
  - {name: C, role: C, intercept: 0.3}
  - {name: A, role: A, coefs: {C: 0.8}}
  - {name: M, role: M, intercept: -0.2, coefs: {C: 0.5}}
  - {name: Y, role: Y, family: linear, intercept: 1.0, coefs: {C: 0.4, M: 0.9}}
"""


def test_simulate_null_model_has_zero_effects(tmp_path):
    (tmp_path / "dgp.yaml").write_text(NULL_DGP)
    res = invoke("simulate", "--config", tmp_path / "dgp.yaml", "--n", 50, "--out", tmp_path / "d.tsv")
    assert res.exit_code == 0, res.output
    truth = json.loads((tmp_path / "d.tsv.truth.json").read_text())["truth"]
    for name in ("TE", "IIE[all]", "IE[all]", "IE_obs[all]"):
        assert abs(truth[name]["value"]) < 1e-14, name
    # C confounds A and Y, so the observed groups still differ
    assert abs(truth["disparity"]["value"]) > 0.01
    assert len((tmp_path / "d.tsv").read_text().splitlines()) == 51


def test_simulate_discrete_model_reports_exact_truth(tmp_path):
    cfg = {"version": 1, "seed": 1, "scm": hand_scm().to_dict()}
    (tmp_path / "scm.yaml").write_text(yaml.safe_dump(cfg))
    res = invoke("simulate", "--config", tmp_path / "scm.yaml", "--n", 20, "--out", tmp_path / "s.tsv")
    assert res.exit_code == 0, res.output
    truth = json.loads((tmp_path / "s.tsv.truth.json").read_text())["truth"]
    assert abs(truth["IE_obs[M1]"]["value"] - IE_OBS_M1) < 1e-14
    assert abs(truth["IE_obs[M1]"]["identified"] - IE_OBS_M1) < 1e-14


def test_simulate_rejects_empty_samples(tmp_path):
    (tmp_path / "dgp.yaml").write_text(NULL_DGP)
    res = invoke("simulate", "--config", tmp_path / "dgp.yaml", "--n", 0, "--out", tmp_path / "d.tsv")
    assert res.exit_code == EXIT_INVALID


def test_version():
    res = invoke("--version")
    assert res.exit_code == 0 and "intervgap" in res.output
