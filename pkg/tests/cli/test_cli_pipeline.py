import json
import math

import pytest
from typer.testing import CliRunner

from main import app
from report.tables import read_table

runner = CliRunner()

EXPERIMENT = """
seed = 0
output_dir = "{output}"
methods = ["full_rank", "galore", "cola", "relora"]
targets = "targets.csv"

[train]
steps = 4
checkpoint_every = 2
batch_size = 2
lr = 1e-2
rank = 2
galore_refresh_T = 2
relora_reset_T = 2

[grids]
num_offsets = 1
directions = 2
pca_top_k = 1
beta_points = 3
activation_rows = 4

[[sizes]]
name = "xs"

[sizes.model]
vocab_size = 256
d_model = 8
n_layers = 2
n_heads = 2
d_ff = 16
max_seq_len = 8
"""

METRIC_COMMANDS = ("landscape", "pca", "interp", "spectra", "activations")


def _experiment(tmp_path, output):
    targets = tmp_path / "targets.csv"
    lines = ["method,size,step,target"]
    for i, method in enumerate(("full_rank", "galore", "cola", "relora")):
        lines += [f"{method},xs,2,{0.30 + 0.02 * i}", f"{method},xs,4,{0.35 + 0.01 * i}"]
    targets.write_text("\n".join(lines) + "\n")
    path = tmp_path / f"{output}.toml"
    path.write_text(EXPERIMENT.format(output=output))
    return path


def _invoke(*args):
    result = runner.invoke(app, [str(arg) for arg in args])
    assert result.exit_code == 0, result.output
    return result


@pytest.mark.slow
def test_pipeline_end_to_end(tmp_path):
    """Train, every metric, predict, report and verify on a four-method desk run."""
    config = _experiment(tmp_path, "out")
    out = tmp_path / "out"
    _invoke("train", config)
    assert sorted(p.name for p in (out / "runs" / "xs").iterdir()) == [
        "cola-s0", "full_rank-s0", "galore-s0", "relora-s0"]
    for command in METRIC_COMMANDS:
        _invoke(command, config)
    _invoke("predict", config, "--scheme", "lomo",
            "--feature", "val_loss", "--feature", "barrier_consec")
    _invoke("report", out)
    _invoke("verify", out)

    manifest = json.loads((out / "manifest.json").read_text())
    for name in ("metrics/runs.csv", "metrics/ccbh.csv", "metrics/imbh.csv",
                 "metrics/spectra.csv", "metrics/predictions.csv", "plots/barriers.svg"):
        assert name in manifest["files"]
    _, landscape = read_table(out / "metrics" / "landscape.csv")
    assert landscape and all(math.isfinite(float(row["sigma_max"])) and float(row["sigma_max"]) > 0
                             for row in landscape)
    imbh = (out / "metrics" / "imbh.csv").read_text()
    assert "cola" not in imbh
    predictor = json.loads((out / "metrics" / "predictor.json").read_text())
    assert predictor["rows"] == 8


@pytest.mark.slow
def test_training_is_reproducible_across_invocations(tmp_path):
    """Two experiments with the same seed write identical checkpoint bytes."""
    for output in ("first", "second"):
        _invoke("train", _experiment(tmp_path, output), "--method", "galore")
    first = sorted((tmp_path / "first" / "runs").rglob("*.lrl"))
    second = sorted((tmp_path / "second" / "runs").rglob("*.lrl"))
    assert [p.name for p in first] == ["ckpt-000000.lrl", "ckpt-000002.lrl", "ckpt-000004.lrl"]
    assert [p.read_bytes() for p in first] == [p.read_bytes() for p in second]
