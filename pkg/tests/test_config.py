import pytest

from longitrack.config import dataclass_from_kv, dataclass_to_kv, parse_kv_file
from longitrack.errors import ConfigError
from longitrack.synth import CohortSpec
from longitrack.training import TrainConfig


def test_parse_comments_and_blanks(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# header\n\nepochs = 3  # short\nlr=0.01\n")
    assert parse_kv_file(path) == {"epochs": "3", "lr": "0.01"}


@pytest.mark.parametrize("text", ["epochs 3\n", "= 3\n", "lr = 1\nlr = 2\n"])
def test_parse_errors(tmp_path, text):
    path = tmp_path / "c.txt"
    path.write_text(text)
    with pytest.raises(ConfigError):
        parse_kv_file(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_kv_file(tmp_path / "none.txt")


def test_typed_values():
    cfg = dataclass_from_kv(TrainConfig, {"epochs": "3", "lr": "0.01",
                                          "augment_perturb": "yes"})
    assert cfg.epochs == 3 and cfg.lr == 0.01 and cfg.augment_perturb is True
    spec = dataclass_from_kv(CohortSpec, {"gender_probs": "0.5, 0.5, 0"})
    assert spec.gender_probs == (0.5, 0.5, 0.0)
    with pytest.raises(ConfigError):
        dataclass_from_kv(TrainConfig, {"nonsense": "1"})
    with pytest.raises(ConfigError):
        dataclass_from_kv(TrainConfig, {"epochs": "many"})
    with pytest.raises(ConfigError):
        dataclass_from_kv(TrainConfig, {"augment_perturb": "maybe"})


def test_round_trip_through_file(tmp_path):
    cfg = TrainConfig(epochs=7, lr=0.002, batching="window")
    path = tmp_path / "c.txt"
    path.write_text(dataclass_to_kv(cfg))
    assert TrainConfig.from_file(path) == cfg
