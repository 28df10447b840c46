"""
BenchConfig - Layered run configuration

Defaults < key=value file (--config or NVMSE_CONFIG) < command-line flags.
Every value is parsed and range-checked when a layer is applied, so a bad
enum never reaches a run.
"""
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

from device.emulated_device import Backing, LatencyProfile, StorageLabel
from engine.storage_engine import EngineKind
from errors import ConfigError
from prefetch.topology import MappingScheme, parse_cpuset
from storage.page_format import validate_page_size

CONFIG_ENV = "NVMSE_CONFIG"

_TRUE = {"on", "true", "yes", "1"}
_FALSE = {"off", "false", "no", "0"}


def _bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"expected on/off, got {value!r}")


def _enum(cls) -> Callable[[Any], Any]:
    def parse(value):
        return cls(str(value).strip().lower().replace("-", "_"))
    return parse


def _positive(parse):
    def check(value):
        v = parse(value)
        if v < 1:
            raise ValueError(f"must be >= 1, got {v}")
        return v
    return check


def _non_negative(value) -> float:
    v = float(value)
    if v < 0:
        raise ValueError(f"must be >= 0, got {v}")
    return v


def _page_size(value) -> int:
    return validate_page_size(int(value))


def _sf(value) -> str:
    text = str(value).strip()
    if float(text) < 0:
        raise ValueError(f"scale factor must not be negative, got {text}")
    return text


def _cores(value) -> Tuple[int, ...]:
    if isinstance(value, (tuple, list)):
        return tuple(int(v) for v in value)
    return tuple(parse_cpuset(str(value)))


def _query(value) -> str:
    label = str(value).strip().lower()
    if label not in ("qs1", "qs2", "qs3", "qs4"):
        raise ValueError(f"expected one of qs1..qs4, got {value!r}")
    return label


@dataclass(frozen=True)
class BenchConfig:
    seed: int = 42
    sf: str = "0.01"
    page_size: int = 8192
    data_dir: str = "data"
    storage: StorageLabel = StorageLabel.NVM_EMU
    disk_read_us: float = 13.333
    disk_write_us: float = 13.333
    nvm_write_us: float = 0.0
    backing: Backing = Backing.RAM
    capacity_slots: int = 1024
    auto_size: bool = True
    engine: EngineKind = EngineKind.BASE
    se2_adhoc_prefetch: bool = False
    scheme: MappingScheme = MappingScheme.NONE
    prefetch_capacity: int = 64
    prefetch_stride: int = 64
    compute_core: int = -1
    helper_cores: Tuple[int, ...] = ()
    helpers: int = 1
    query: str = "qs1"
    reps: int = 3
    timeout_s: float = 600.0
    out: str = "results.csv"

    def latency(self) -> LatencyProfile:
        if self.storage is StorageLabel.DISK_EMU:
            return LatencyProfile.disk_emu(self.disk_read_us, self.disk_write_us)
        return LatencyProfile.nvm_emu(self.nvm_write_us)

    def with_values(self, values: Mapping[str, Any]) -> "BenchConfig":
        """Apply a layer of dotted keys or field names"""
        changes = {}
        for key, raw in values.items():
            if raw is None:
                continue
            name, parse = _resolve(key)
            try:
                changes[name] = parse(raw)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"invalid value for {key}: {e}") from None
        return replace(self, **changes)

    def as_keys(self) -> Dict[str, Any]:
        out = {}
        for key, (name, _) in KEYS.items():
            value = getattr(self, name)
            out[key] = value.value if hasattr(value, "value") else value
        return out


# dotted key -> (BenchConfig field, parser)
KEYS: Dict[str, Tuple[str, Callable[[Any], Any]]] = {
    "dataset.seed": ("seed", int),
    "dataset.sf": ("sf", _sf),
    "dataset.page_size": ("page_size", _page_size),
    "dataset.dir": ("data_dir", str),
    "device.storage": ("storage", _enum(StorageLabel)),
    "device.latency.disk_read_us": ("disk_read_us", _non_negative),
    "device.latency.disk_write_us": ("disk_write_us", _non_negative),
    "device.latency.nvm_write_us": ("nvm_write_us", _non_negative),
    "device.backing": ("backing", _enum(Backing)),
    "buffer.capacity_slots": ("capacity_slots", _positive(int)),
    "buffer.auto_size": ("auto_size", _bool),
    "engine.kind": ("engine", _enum(EngineKind)),
    "engine.se2_adhoc_prefetch": ("se2_adhoc_prefetch", _bool),
    "prefetch.scheme": ("scheme", _enum(MappingScheme)),
    "prefetch.capacity": ("prefetch_capacity", _positive(int)),
    "prefetch.stride": ("prefetch_stride", _positive(int)),
    "prefetch.compute_core": ("compute_core", int),
    "prefetch.helper_cores": ("helper_cores", _cores),
    "prefetch.helpers": ("helpers", _positive(int)),
    "run.query": ("query", _query),
    "run.reps": ("reps", _positive(int)),
    "run.timeout_s": ("timeout_s", _non_negative),
    "run.out": ("out", str),
}
_BY_FIELD = {name: (name, parse) for name, parse in KEYS.values()}

DEFAULTS = BenchConfig().as_keys()


def _resolve(key: str) -> Tuple[str, Callable[[Any], Any]]:
    if key in KEYS:
        return KEYS[key]
    if key in _BY_FIELD:
        return _BY_FIELD[key]
    raise ConfigError(f"unknown configuration key '{key}'")


def parse_conf_file(path: Path) -> Dict[str, str]:
    """Read key=value lines; '#' starts a comment"""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got '{line}'")
        key = key.strip()
        _resolve(key)
        values[key] = value.strip()
    return values


def profile_values(engine_config: Mapping[str, Any], name: str) -> Dict[str, Any]:
    """Keys of one named storage configuration from engine-config.json"""
    if name not in engine_config:
        raise ConfigError(f"storage configuration '{name}' not found (known: {', '.join(engine_config)})")
    profile = engine_config[name]
    values = {"engine": profile["engine"], "storage": profile["storage"]}
    values.update(profile.get("config", {}))
    for key in values:
        _resolve(key)
    return values


def load_config(config_file: Optional[str] = None, flags: Optional[Mapping[str, Any]] = None,
                profile: Optional[Mapping[str, Any]] = None) -> BenchConfig:
    """Build the effective configuration; flags win over a profile, a profile over the file"""
    config = BenchConfig()
    path = config_file or os.environ.get(CONFIG_ENV)
    if path:
        config = config.with_values(parse_conf_file(Path(path)))
    if profile:
        config = config.with_values(profile)
    if flags:
        config = config.with_values(flags)
    return config
