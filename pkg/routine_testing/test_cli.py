import json

import pandas as pd
import pytest
from click.testing import CliRunner

from relembed.app.main import cli
from relembed.services.datasets import blobs

BAD_TYPE = """
relations:
  - name: hd
    level: global
    type: geodesic
losses: []
training phases: []
"""

MISSING_KEY = """
losses:
  - type: position
    func: mse
    keys:
      data: [main, targets]
training phases:
  - epochs: 1
    loss:
      components: position
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def data_csv(tmp_path):
    return str(blobs(n_items=60, n_features=4, seed=0).export_csv(tmp_path / "blobs.csv"))


def _run_mds(runner, data_csv, out_dir, *extra):
    args = ["run", "--preset", "mds", "--set", "epochs=2", "--data", data_csv, "--schema", "labels=label",
            "--hidden", "8", "--out", str(out_dir), "--no-progress", *extra]
    return runner.invoke(cli, args)


def test_run_writes_artifacts(runner, data_csv, tmp_path):
    result = _run_mds(runner, data_csv, tmp_path / "out")
    assert result.exit_code == 0, result.output
    out = tmp_path / "out"
    for name in ("routine.yaml", "training_log.csv", "embedding.csv", "model.json"):
        assert (out / name).exists()
    embedding = pd.read_csv(out / "embedding.csv")
    assert list(embedding.columns) == ["index", "x", "y"]
    assert len(embedding) == 60
    log = pd.read_csv(out / "training_log.csv")
    assert list(log["epoch"]) == [0, 1]
    assert "✓" in result.output


def test_run_is_deterministic(runner, data_csv, tmp_path):
    _run_mds(runner, data_csv, tmp_path / "a", "--seed", "3")
    _run_mds(runner, data_csv, tmp_path / "b", "--seed", "3")
    assert (tmp_path / "a" / "embedding.csv").read_text() == (tmp_path / "b" / "embedding.csv").read_text()


def test_run_with_checkpoints(runner, data_csv, tmp_path):
    result = _run_mds(runner, data_csv, tmp_path / "out", "--checkpoint-every", "1")
    assert result.exit_code == 0, result.output
    saved = sorted(p.name for p in (tmp_path / "out" / "checkpoints").iterdir())
    assert saved == ["phase0_epoch0.json", "phase0_epoch1.json"]


def test_run_from_bundled_source(runner, tmp_path):
    result = runner.invoke(cli, ["run", "--preset", "mds", "--set", "epochs=1", "--source", "blobs",
                                 "--source-options", "n_items=40,n_features=3", "--hidden", "",
                                 "--out", str(tmp_path), "--no-progress"])
    assert result.exit_code == 0, result.output
    assert len(pd.read_csv(tmp_path / "embedding.csv")) == 40


def test_bad_document_exits_2(runner, tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(BAD_TYPE)
    result = runner.invoke(cli, ["run", str(path), "--source", "blobs", "--out", str(tmp_path)])
    assert result.exit_code == 2
    assert "geodesic" in result.stderr
    check = runner.invoke(cli, ["spec", "check", str(path)])
    assert check.exit_code == 2 and "relations[0].type" in check.stderr


def test_missing_data_key_exits_3(runner, data_csv, tmp_path):
    path = tmp_path / "routine.yaml"
    path.write_text(MISSING_KEY)
    result = runner.invoke(cli, ["run", str(path), "--data", data_csv, "--out", str(tmp_path), "--no-progress"])
    assert result.exit_code == 3
    assert "targets" in result.stderr


def test_run_needs_exactly_one_routine(runner, tmp_path):
    assert runner.invoke(cli, ["run", "--source", "blobs"]).exit_code == 2
    assert runner.invoke(cli, ["run", "--preset", "mds", "--set", "perplexity=5", "--source", "blobs"]).exit_code == 2


def test_apply_matches_training_embedding(runner, data_csv, tmp_path):
    _run_mds(runner, data_csv, tmp_path / "out")
    applied = tmp_path / "applied.csv"
    result = runner.invoke(cli, ["apply", str(tmp_path / "out" / "model.json"), "--data", data_csv,
                                 "--schema", "labels=label", "--out", str(applied)])
    assert result.exit_code == 0, result.output
    trained = pd.read_csv(tmp_path / "out" / "embedding.csv")
    pd.testing.assert_frame_equal(pd.read_csv(applied), trained)


def test_apply_rejects_direct_model_and_wrong_width(runner, data_csv, tmp_path):
    _run_mds(runner, data_csv, tmp_path / "direct", "--direct")
    result = runner.invoke(cli, ["apply", str(tmp_path / "direct" / "model.json"), "--data", data_csv,
                                 "--schema", "labels=label"])
    assert result.exit_code == 2
    _run_mds(runner, data_csv, tmp_path / "net")
    result = runner.invoke(cli, ["apply", str(tmp_path / "net" / "model.json"), "--data", data_csv])
    assert result.exit_code == 3


def test_plot_draws_every_point(runner, data_csv, tmp_path):
    _run_mds(runner, data_csv, tmp_path / "out")
    svg = tmp_path / "plot.svg"
    result = runner.invoke(cli, ["plot", str(tmp_path / "out" / "embedding.csv"), "--labels", data_csv,
                                 "--color-by", "labels", "--title", "blobs <mds>", "--out", str(svg)])
    assert result.exit_code == 0, result.output
    text = svg.read_text()
    assert text.count("<circle") == 60
    assert "blobs &lt;mds&gt;" in text


def test_eval_writes_metrics(runner, data_csv, tmp_path):
    _run_mds(runner, data_csv, tmp_path / "out")
    out = tmp_path / "metrics.csv"
    result = runner.invoke(cli, ["eval", str(tmp_path / "out" / "embedding.csv"), "--data", data_csv,
                                 "--schema", "labels=label", "-k", "5", "--out", str(out)])
    assert result.exit_code == 0, result.output
    row = pd.read_csv(out).iloc[0]
    assert row["n_items"] == 60
    assert 0.0 <= row["trustworthiness_5"] <= 1.0
    assert "silhouette" in row.index


def test_presets_list_and_show(runner):
    listed = runner.invoke(cli, ["presets", "list"])
    assert listed.exit_code == 0
    assert "tsne" in listed.output and "umap" in listed.output
    shown = runner.invoke(cli, ["presets", "show", "tsne", "--set", "perplexity=100"])
    assert shown.exit_code == 0
    assert "perplexity: 100" in shown.output
    assert runner.invoke(cli, ["presets", "show", "isomap"]).exit_code == 2


def test_spec_check_counts(runner, tmp_path):
    shown = runner.invoke(cli, ["presets", "show", "tsne", "--format", "json"])
    path = tmp_path / "tsne.json"
    path.write_text(shown.output)
    result = runner.invoke(cli, ["spec", "check", str(path)])
    assert result.exit_code == 0
    assert "relations=2" in result.output and "phases=2" in result.output


def test_apply_with_broken_checkpoint_exits_3(runner, data_csv, tmp_path):
    garbage = tmp_path / "garbage.json"
    garbage.write_text("{ half a checkpoint")
    result = runner.invoke(cli, ["apply", str(garbage), "--data", data_csv, "--schema", "labels=label"])
    assert result.exit_code == 3
    assert "cannot read checkpoint" in result.stderr

    _run_mds(runner, data_csv, tmp_path / "out")
    model_path = tmp_path / "out" / "model.json"
    payload = json.loads(model_path.read_text())
    payload["version"] = 99
    model_path.write_text(json.dumps(payload))
    result = runner.invoke(cli, ["apply", str(model_path), "--data", data_csv, "--schema", "labels=label"])
    assert result.exit_code == 3
    assert "unsupported checkpoint version 99" in result.stderr
