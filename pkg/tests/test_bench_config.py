import json
from pathlib import Path

import pytest

from bench_config import (CONFIG_ENV, DEFAULTS, KEYS, BenchConfig, load_config, parse_conf_file,
                          profile_values)
from device.emulated_device import Backing, StorageLabel
from engine.storage_engine import EngineKind
from errors import ConfigError
from prefetch.topology import MappingScheme

CONFIG_DIR = Path(__file__).parent.parent / "config"

# key -> (value written to the file, value given as a flag, parsed flag value)
LAYERS = {
    "dataset.seed": ("7", "9", 9),
    "dataset.sf": ("0.1", "0.002", "0.002"),
    "dataset.page_size": ("4096", "16384", 16384),
    "dataset.dir": ("data/a", "data/b", "data/b"),
    "device.storage": ("disk_emu", "nvm-emu", StorageLabel.NVM_EMU),
    "device.latency.disk_read_us": ("20", "30.5", 30.5),
    "device.latency.disk_write_us": ("20", "31", 31.0),
    "device.latency.nvm_write_us": ("1", "2", 2.0),
    "device.backing": ("file", "ram", Backing.RAM),
    "buffer.capacity_slots": ("64", "128", 128),
    "buffer.auto_size": ("off", "on", True),
    "engine.kind": ("se1", "se2", EngineKind.SE2),
    "engine.se2_adhoc_prefetch": ("on", "off", False),
    "prefetch.scheme": ("m1", "m3", MappingScheme.M3),
    "prefetch.capacity": ("32", "128", 128),
    "prefetch.stride": ("128", "256", 256),
    "prefetch.compute_core": ("1", "0", 0),
    "prefetch.helper_cores": ("1,2", "3", (3,)),
    "prefetch.helpers": ("2", "3", 3),
    "run.query": ("qs2", "QS4", "qs4"),
    "run.reps": ("5", "2", 2),
    "run.timeout_s": ("10", "0", 0.0),
    "run.out": ("a.csv", "b.csv", "b.csv"),
}


def _field(key):
    return KEYS[key][0]


def test_every_key_is_covered():
    assert set(LAYERS) == set(KEYS)


def test_defaults():
    config = BenchConfig()
    assert DEFAULTS["dataset.seed"] == 42
    assert DEFAULTS["device.storage"] == "nvm_emu"
    assert config.latency().per_block_read_ns == 0
    assert config.reps == 3 and config.capacity_slots == 1024


@pytest.mark.parametrize("key", sorted(LAYERS))
def test_file_overrides_default_and_flag_overrides_file(tmp_path, key):
    file_value, flag_value, parsed = LAYERS[key]
    conf = tmp_path / "nvmse.conf"
    conf.write_text(f"# test\n{key} = {file_value}\n")

    from_file = load_config(str(conf))
    assert getattr(from_file, _field(key)) != getattr(BenchConfig(), _field(key))
    assert from_file == BenchConfig().with_values({key: file_value})

    from_flag = load_config(str(conf), {key: flag_value})
    assert getattr(from_flag, _field(key)) == parsed


def test_env_names_the_config_file(tmp_path, monkeypatch):
    conf = tmp_path / "env.conf"
    conf.write_text("run.reps=4\n")
    monkeypatch.setenv(CONFIG_ENV, str(conf))
    assert load_config().reps == 4
    assert load_config(flags={"run.reps": 1}).reps == 1


def test_profile_sits_between_file_and_flags(tmp_path):
    conf = tmp_path / "nvmse.conf"
    conf.write_text("engine.kind=se1\nrun.reps=5\n")
    with open(CONFIG_DIR / "engine-config.json") as f:
        profiles = json.load(f)
    profile = profile_values(profiles, "nvm_se2")
    config = load_config(str(conf), {"run.reps": 1}, profile)
    assert config.engine is EngineKind.SE2
    assert config.storage is StorageLabel.NVM_EMU
    assert config.reps == 1
    with pytest.raises(ConfigError):
        profile_values(profiles, "tape")


@pytest.mark.parametrize("key, value", [
    ("engine.kind", "se3"), ("prefetch.scheme", "m4"), ("run.reps", "0"), ("dataset.page_size", "1000"),
    ("buffer.auto_size", "maybe"), ("dataset.sf", "-1"), ("device.latency.disk_read_us", "-2"),
    ("run.query", "qs5"), ("prefetch.helper_cores", "a-b"),
])
def test_invalid_values(key, value):
    with pytest.raises(ConfigError):
        load_config(flags={key: value})


def test_zero_scale_factor_is_accepted():
    assert load_config(flags={"dataset.sf": "0"}).sf == "0"


def test_unknown_key(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("engine.color=red\n")
    with pytest.raises(ConfigError):
        parse_conf_file(conf)
    with pytest.raises(ConfigError):
        load_config(flags={"engine.color": "red"})


def test_malformed_line(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("engine.kind se2\n")
    with pytest.raises(ConfigError):
        parse_conf_file(conf)
    with pytest.raises(ConfigError):
        parse_conf_file(tmp_path / "missing.conf")


def test_shipped_conf_matches_defaults():
    values = parse_conf_file(CONFIG_DIR / "nvmse.conf")
    assert set(values) == set(KEYS)
    shipped = load_config(str(CONFIG_DIR / "nvmse.conf"))
    assert shipped == BenchConfig(data_dir="data/sf0.01")


def test_disk_latency_profile():
    config = BenchConfig().with_values({"device.storage": "disk-emu", "device.latency.disk_read_us": "10"})
    assert config.latency().per_block_read_ns == 10_000
