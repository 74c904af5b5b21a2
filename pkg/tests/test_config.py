import json

import pytest

from pregrasp.config import ConfigError, RunConfig, load_config
from pregrasp.energy import EnergyWeights
from pregrasp.sampler import MalaParams


def test_defaults_round_trip():
    cfg = RunConfig()
    assert RunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    assert load_config(None).digest() == cfg.digest()


def test_toml_and_json_agree(tmp_path):
    (tmp_path / "a.toml").write_text("seed = 3\n[mala]\nchains = 8\ninit_distance = [0.1, 0.2]\n[energy]\npenetration = 50.0\n")
    (tmp_path / "a.json").write_text(json.dumps({"seed": 3, "mala": {"chains": 8, "init_distance": [0.1, 0.2]}, "energy": {"penetration": 50.0}}))
    a, b = load_config(tmp_path / "a.toml"), load_config(tmp_path / "a.json")
    assert a.digest() == b.digest()
    assert a.mala == MalaParams(chains=8, init_distance=(0.1, 0.2))
    assert a.energy == EnergyWeights(penetration=50.0)
    assert a.seed == 3


@pytest.mark.parametrize(
    "text",
    [
        "[mala]\nchain = 8\n",
        "[bogus]\nx = 1\n",
        "[energy]\npenetration = -1.0\n",
        "seed = -4\n",
        "[paths]\nout = 3\n",
        "not toml at all = = \n",
    ],
)
def test_invalid_configs(tmp_path, text):
    (tmp_path / "c.toml").write_text(text)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.toml")


def test_with_seed_sets_sampler_seed():
    cfg = RunConfig().with_seed(17)
    assert cfg.seed == 17 and cfg.mala.seed == 17
    assert cfg.digest() != RunConfig().digest()
