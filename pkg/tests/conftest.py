import json
from pathlib import Path

import numpy as np
import pytest

from bench_config import BenchConfig
from dataset.dataset_generator import ScaleSpec, generate_dataset, generate_rows
from device.emulated_device import Backing, LatencyProfile, open_device
from storage.page_format import PageBuilder

GOLDEN_DIR = Path(__file__).parent / "golden"
SEED = 42


@pytest.fixture(scope="session")
def tiny_catalog(tmp_path_factory):
    """seed 42, sf 0.001: 6,000 lineitem rows, 1,500 orders rows"""
    out = tmp_path_factory.mktemp("sf0.001")
    return generate_dataset(SEED, ScaleSpec.of("0.001"), 8192, out)


@pytest.fixture(scope="session")
def small_catalog(tmp_path_factory):
    """seed 42, sf 0.01: 60,000 lineitem rows"""
    out = tmp_path_factory.mktemp("sf0.01")
    return generate_dataset(SEED, ScaleSpec.of("0.01"), 8192, out)


@pytest.fixture
def file_config():
    """Defaults with ordinary-file backing so tests never depend on /dev/shm"""
    return BenchConfig(backing=Backing.FILE, reps=1, timeout_s=0)


def write_pages(path: Path, page_count: int, page_size: int = 8192, seed: int = 7) -> Path:
    """Heap file of page_count full pages of generated rows"""
    rows = generate_rows(seed, page_count * page_size)
    builder = PageBuilder(page_size)
    with open(path, "wb") as f:
        for _ in range(page_count):
            for row in rows:
                if not builder.add(row):
                    f.write(builder.finish())
                    builder.add(row)
                    break
    return path


@pytest.fixture
def heap_file(tmp_path):
    return write_pages(tmp_path / "rel.heap", 10)


@pytest.fixture
def nvm_device(heap_file):
    device = open_device(heap_file, 8192, LatencyProfile.nvm_emu())
    yield device
    device.close()


@pytest.fixture
def region():
    """Four pages of distinct bytes for helper-thread tests"""
    return (np.arange(4 * 8192) % 251).astype(np.uint8)


def golden(name: str):
    """Frozen value from tests/golden/<name>.json"""
    path = GOLDEN_DIR / f"{name}.json"
    if not path.exists():
        pytest.fail(f"golden file {path} is missing")
    return json.loads(path.read_text())
