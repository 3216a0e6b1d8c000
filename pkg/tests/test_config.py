import pytest

from tmegraph.config import RunConfig, load_config, parse_config_text
from tmegraph.labels import TUMOR


def test_defaults_round_trip_through_flat():
    cfg = RunConfig()
    flat = cfg.flat()
    assert flat["builder.epsilon_px"] == 1500.0 and flat["train.lr"] == 1e-3
    assert cfg.with_values({k: str(v) for k, v in flat.items()}) == cfg


def test_overrides_and_types(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("builder.high_relevance_set=tumor,9\ntrain.early_stop_loss=none\nbuilder.inclusive_threshold=yes\n")
    cfg = load_config(path, {"train.lr": "5e-4", "model.hidden": None})
    assert cfg.builder.high_relevance_set == frozenset({TUMOR})
    assert cfg.train.early_stop_loss is None and cfg.builder.inclusive_threshold is True
    assert cfg.train.lr == 5e-4 and cfg.model.hidden == 256


def test_unknown_and_bad_values():
    with pytest.raises(KeyError):
        RunConfig().with_values({"train.momentum": "0.9"})
    with pytest.raises(KeyError):
        RunConfig().with_values({"nothing": "1"})
    with pytest.raises(ValueError):
        RunConfig().with_values({"train.epochs": "many"})
    with pytest.raises(ValueError):
        parse_config_text("just words")
