from pathlib import Path

import pytest

from exceptions import ConfigError
from experiment.loader import deep_merge, defaults_toml, load_config
from experiment.model import ExperimentConfig
from trainers.model import Method

CONFIG_DIR = Path(__file__).parents[2] / 'configs'


def _write(path: Path, text: str) -> Path:
    path.write_text(text, encoding='utf-8')
    return path


def test_deep_merge_overrides_nested_keys():
    """Nested tables merge key by key; scalars and lists are replaced."""
    merged = deep_merge({"train": {"lr": 1.0, "steps": 10}, "methods": ["a"]},
                       {"train": {"lr": 2.0}, "methods": ["b"]})
    assert merged == {"train": {"lr": 2.0, "steps": 10}, "methods": ["b"]}


def test_defaults_round_trip(tmp_path):
    """The printed defaults load back into the same experiment."""
    path = _write(tmp_path / "defaults.toml", defaults_toml(seed=3))
    config, base = load_config(path)
    assert config == ExperimentConfig(seed=3)
    assert base == tmp_path.resolve()
    assert config.config_hash() == ExperimentConfig(seed=3).config_hash()


def test_includes_merge_with_later_files_winning(tmp_path):
    """An included file supplies defaults that the including file overrides."""
    _write(tmp_path / "base.toml", "seed = 1\n[train]\nsteps = 100\ncheckpoint_every = 50\nlr = 0.5\n")
    path = _write(tmp_path / "child.toml", 'include = ["base.toml"]\n[train]\nlr = 0.25\n')
    config, _ = load_config(path)
    assert config.seed == 1
    assert (config.train.steps, config.train.lr) == (100, 0.25)


def test_include_cycle_is_a_config_error(tmp_path):
    """Mutual includes are reported instead of recursing."""
    _write(tmp_path / "a.toml", 'include = ["b.toml"]\nseed = 0\n')
    _write(tmp_path / "b.toml", 'include = ["a.toml"]\n')
    with pytest.raises(ConfigError) as exc_info:
        load_config(tmp_path / "a.toml")
    assert exc_info.value.exit_code == 2
    assert "include cycle" in exc_info.value.violations[0]


def test_every_violation_is_listed(tmp_path):
    """Several bad values are reported together."""
    path = _write(tmp_path / "bad.toml", "seed = 0\n[train]\nlr = -1.0\n[grids]\ndirections = 0\n")
    with pytest.raises(ConfigError) as exc_info:
        load_config(path)
    violations = exc_info.value.violations
    assert any(v.startswith("train.lr") for v in violations)
    assert any(v.startswith("grids.directions") for v in violations)


def test_missing_seed_and_files(tmp_path):
    """The seed is mandatory and referenced files must exist."""
    with pytest.raises(ConfigError) as exc_info:
        load_config(_write(tmp_path / "noseed.toml", "[train]\nlr = 0.1\n"))
    assert any(v.startswith("seed") for v in exc_info.value.violations)
    with pytest.raises(ConfigError) as exc_info:
        load_config(_write(tmp_path / "corpus.toml", 'seed = 0\ncorpus = "absent.txt"\n'))
    assert exc_info.value.violations[0].startswith("corpus: file not found")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nowhere.toml")


def test_rank_must_fit_the_sizes(tmp_path):
    """A factored rank larger than a layer dimension is rejected."""
    text = 'seed = 0\n[train]\nrank = 64\n[[sizes]]\nname = "xs"\n[sizes.model]\nd_model = 32\nd_ff = 64\nn_heads = 2\n'
    with pytest.raises(ConfigError) as exc_info:
        load_config(_write(tmp_path / "rank.toml", text))
    assert "exceeds the layer dims" in " ".join(exc_info.value.violations)


def test_method_overrides_apply_per_method():
    """Overrides change only their own method's training config."""
    config = ExperimentConfig(seed=0, method_overrides={Method.relora: {"relora_rewarmup_steps": 7}})
    assert config.train_config(Method.relora).relora_rewarmup_steps == 7
    assert config.train_config(Method.galore).relora_rewarmup_steps == 0
    assert config.train_config(Method.galore, seed=4).seed == 4
    assert config.run_seeds == [0]


def test_bundled_smoke_config_is_valid():
    """The shipped smoke experiment loads with two sizes and six methods."""
    config, _ = load_config(CONFIG_DIR / "smoke.toml")
    assert [size.name for size in config.sizes] == ["xs", "s"]
    assert config.methods == list(Method)
    assert config.train.checkpoint_steps == [0, 100, 200, 300, 400]
