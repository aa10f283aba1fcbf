import pytest

from exceptions import ConfigError, MissingInputs, SchemaError
from experiment.service import Experiment, RunKey, _owned, read_targets
from report.model import LandscapeRow
from report.tables import read_table
from trainers.model import Method


@pytest.fixture
def experiment(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text('seed = 0\noutput_dir = "out"\nmethods = ["full_rank", "cola"]\n')
    exp = Experiment.load(path)
    yield exp
    exp.close()


def _row(method, step, sharpness):
    return LandscapeRow(method=method, size="desk", seed=0, step=step, sharpness=sharpness,
                        direction_variance=0.0, sigma_max=None, diverged=False)


def test_selection_narrows_and_validates(experiment):
    """Selectors keep config order and unknown names are config errors."""
    assert experiment.selection() == [RunKey("desk", Method.full_rank, 0),
                                      RunKey("desk", Method.cola, 0)]
    assert experiment.selection(methods=["cola"]) == [RunKey("desk", Method.cola, 0)]
    with pytest.raises(ConfigError) as exc_info:
        experiment.selection(methods=["galore"], sizes=["xl"])
    assert len(exc_info.value.violations) == 2


def test_runs_without_training(experiment):
    """Selected runs without run.json point back to train."""
    with pytest.raises(MissingInputs) as exc_info:
        experiment.runs(experiment.selection())
    assert exc_info.value.missing == ["runs/desk/full_rank-s0/run.json",
                                      "runs/desk/cola-s0/run.json"]


def test_write_rows_merges_other_runs(experiment):
    """A rerun for one method replaces its rows and keeps the others."""
    keys = experiment.selection()
    experiment.write_rows("landscape", [_row("full_rank", 0, 0.1), _row("cola", 0, 0.2)],
                          _owned(keys))
    cola_only = experiment.selection(methods=["cola"])
    experiment.write_rows("landscape", [_row("cola", 0, 0.9)], _owned(cola_only))
    header, rows = read_table(experiment.layout.table("landscape"))
    assert header["config_hash"] == experiment.config_hash
    assert [(r["method"], r["sharpness"], r["sigma_max"]) for r in rows] == [
        ("cola", "0.9", ""), ("full_rank", "0.1", "")]


def test_read_targets(tmp_path):
    """Targets are keyed by (method, size, step); bad files are schema errors."""
    path = tmp_path / "targets.csv"
    path.write_text("method,size,step,target\ncola,xs,100,0.41\n")
    assert read_targets(path) == {("cola", "xs", 100): 0.41}
    path.write_text("method,size,target\ncola,xs,0.41\n")
    with pytest.raises(SchemaError):
        read_targets(path)
    path.write_text("method,size,step,target\ncola,xs,100,high\n")
    with pytest.raises(SchemaError) as exc_info:
        read_targets(path)
    assert exc_info.value.detail["line"] == 2
