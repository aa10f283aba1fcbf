from collections import defaultdict
from pathlib import Path

import pytest
from typer.testing import CliRunner

from main import app
from report.tables import read_table

runner = CliRunner()

SMOKE = Path(__file__).parents[2] / 'configs' / 'smoke.toml'


def _invoke(*args):
    result = runner.invoke(app, [str(arg) for arg in args])
    assert result.exit_code == 0, result.output
    return result


def _series(rows: list[dict], group: tuple[str, ...]) -> dict[tuple, list[tuple[int, float]]]:
    series = defaultdict(list)
    for row in rows:
        series[tuple(row[name] for name in group)].append((int(row["step"]), float(row["barrier"])))
    return {key: sorted(points) for key, points in series.items()}


@pytest.fixture(scope='module')
def smoke_metrics(tmp_path_factory):
    """Trains the bundled smoke experiment and computes its barrier tables."""
    root = tmp_path_factory.mktemp("smoke")
    config = root / "smoke.toml"
    config.write_text(f'include = ["{SMOKE.as_posix()}"]\noutput_dir = "out"\n')
    _invoke("train", config)
    _invoke("interp", config)
    metrics = root / "out" / "metrics"
    return {name: read_table(metrics / f"{name}.csv")[1] for name in ("runs", "ccbh", "imbh")}


@pytest.mark.slow
def test_every_run_cuts_validation_loss_by_a_fifth(smoke_metrics):
    """Each method and size ends at least 20% below its initial validation loss."""
    losses = defaultdict(dict)
    for row in smoke_metrics["runs"]:
        losses[(row["method"], row["size"], row["seed"])][int(row["step"])] = float(row["val_loss"])
    assert len(losses) == 12
    for key, by_step in losses.items():
        first, last = by_step[min(by_step)], by_step[max(by_step)]
        assert last <= 0.8 * first, key


@pytest.mark.slow
def test_consecutive_barriers_decay(smoke_metrics):
    """For every run the last consecutive-checkpoint barrier is at most the first."""
    series = _series(smoke_metrics["ccbh"], ("method", "size", "seed"))
    assert len(series) == 12
    for key, points in series.items():
        assert len(points) == 4
        assert points[-1][1] <= points[0][1], key


@pytest.mark.slow
def test_inter_method_barriers_grow(smoke_metrics):
    """At least 80% of method pairs end with a barrier no lower than at their first shared step."""
    series = _series(smoke_metrics["imbh"], ("method_a", "method_b", "size", "seed"))
    assert series
    growing = [points[-1][1] >= points[0][1] for points in series.values()]
    assert sum(growing) >= 0.8 * len(growing)
