import random
import shutil

import pytest

from buffer.buffer_pool import BufferPool
from conftest import write_pages
from device.emulated_device import LatencyProfile, open_device
from engine.storage_engine import EngineKind, StorageEngine
from errors import LengthMismatch, StalePageRef, TupleNotFound
from storage.fnv import file_digest
from storage.page_format import FIXED_COLUMNS, decode_page, locate_tuple


def _engine(kind, path, capacity=4):
    device = open_device(path, 8192, LatencyProfile.nvm_emu())
    return StorageEngine(kind, BufferPool(capacity, 8192), {"rel": device}), device


@pytest.mark.parametrize("kind, copies", [(EngineKind.BASE, 2), (EngineKind.SE1, 1), (EngineKind.SE2, 0)])
def test_cold_read_copy_cost(kind, copies, heap_file):
    engine, device = _engine(kind, heap_file)
    ref = engine.read_page("rel", 3)
    assert engine.counters().copies == copies
    assert decode_page(ref.data(), 8192)
    assert ref.slot.redirected == (kind is EngineKind.SE2)
    engine.release(ref)

    warm = engine.read_page("rel", 3)
    assert engine.counters().copies == copies
    assert engine.pool.stats.hits == 1
    engine.release(warm)
    device.close()


@pytest.mark.parametrize("kind", list(EngineKind))
def test_data_movement_is_the_device_load_time(kind, heap_file):
    engine, device = _engine(kind, heap_file, capacity=2)
    for page_no in range(6):
        engine.release(engine.read_page("rel", page_no))
    # pool bookkeeping and hits are never charged
    assert engine.dm_ns == device.counters().dm_ns
    if kind is EngineKind.SE2:
        assert engine.dm_ns == 0
    else:
        assert engine.dm_ns > 0

    engine.adhoc_ns = 500
    assert engine.dm_ns == device.counters().dm_ns + 500
    device.close()


def test_stale_page_ref(heap_file):
    engine, device = _engine(EngineKind.SE1, heap_file, capacity=1)
    ref = engine.read_page("rel", 0)
    engine.release(ref)
    engine.release(engine.read_page("rel", 1))
    with pytest.raises(StalePageRef):
        ref.data()
    device.close()


def test_se2_write_copies_back(heap_file):
    engine, device = _engine(EngineKind.SE2, heap_file)
    before = file_digest(heap_file)
    ref = engine.read_page("rel", 2)
    _, length = locate_tuple(ref.data(), 0)
    engine.release(ref)

    engine.write_tuple("rel", (2, 0), bytes(length))
    slot = engine.pool.slots[engine.pool.page_table[("rel", 2)]]
    assert not slot.redirected
    assert slot.dirty
    assert engine.counters().copies == 1
    assert engine.copybacks == 1
    assert file_digest(heap_file) == before

    assert engine.flush() == 1
    assert engine.flush() == 0
    device.close()
    assert decode_page(open(heap_file, "rb").read()[2 * 8192:3 * 8192])[0].key == 0


def test_base_write_on_cached_page(heap_file):
    engine, device = _engine(EngineKind.BASE, heap_file)
    before = file_digest(heap_file)
    engine.release(engine.read_page("rel", 0))
    copies = engine.counters().copies
    ref = engine.read_page("rel", 0)
    _, length = locate_tuple(ref.data(), 1)
    engine.release(ref)
    engine.write_tuple("rel", (0, 1), b"\x01" * length)
    assert engine.counters().copies == copies
    assert file_digest(heap_file) == before
    device.close()


def test_write_errors(heap_file):
    engine, device = _engine(EngineKind.SE1, heap_file)
    with pytest.raises(TupleNotFound):
        engine.write_tuple("rel", (0, 10_000), b"")
    with pytest.raises(LengthMismatch):
        engine.write_tuple("rel", (0, 0), b"short")
    # a failed write leaves nothing pinned
    assert all(s.pin_count == 0 for s in engine.pool.slots)
    device.close()


@pytest.mark.parametrize("kind", list(EngineKind))
def test_write_flush_reread(kind, heap_file):
    engine, device = _engine(kind, heap_file, capacity=2)
    ref = engine.read_page("rel", 5)
    original = decode_page(ref.data())[3]
    engine.release(ref)
    body = FIXED_COLUMNS.pack(original.key, 12, 34, original.ship_date) + original.comment
    engine.write_tuple("rel", (5, 3), body)
    engine.flush()
    device.close()

    engine, device = _engine(kind, heap_file, capacity=2)
    ref = engine.read_page("rel", 5)
    updated = decode_page(ref.data())[3]
    assert (updated.quantity, updated.price_cents) == (12, 34)
    engine.release(ref)
    device.close()


def _update_history(seed, page_count, count=200):
    rng = random.Random(seed)
    return [((rng.randrange(page_count), rng.randrange(20)), rng.randrange(256)) for _ in range(count)]


def _replay(kind, path, history):
    engine, device = _engine(kind, path, capacity=3)
    for tid, fill in history:
        ref = engine.read_page("rel", tid[0])
        _, length = locate_tuple(ref.data(), tid[1])
        engine.release(ref)
        engine.write_tuple("rel", tid, bytes([fill]) * length)
    engine.flush()
    device.close()
    return file_digest(path)


def test_identical_file_state_across_engines(tmp_path):
    source = write_pages(tmp_path / "src.heap", 10)
    history = _update_history(5, 10)
    digests = set()
    for kind in EngineKind:
        path = tmp_path / f"{kind.value}.heap"
        shutil.copyfile(source, path)
        digests.add(_replay(kind, path, history))
    assert len(digests) == 1
    assert digests != {file_digest(source)}


def interleave_se2(path, seed, capacity, ops):
    """Random reads and writes on SE2; checks the write-path invariants as it goes"""
    engine, device = _engine(EngineKind.SE2, path, capacity=capacity)
    rng = random.Random(seed)
    before = file_digest(path)
    first_writes = 0
    for _ in range(ops):
        page_no = rng.randrange(8)
        if rng.random() < 0.8:
            engine.release(engine.read_page("rel", page_no))
        else:
            tag = ("rel", page_no)
            index = engine.pool.page_table.get(tag)
            cached = index is not None
            if not cached or engine.pool.slots[index].redirected:
                first_writes += 1
            slot_index = rng.randrange(5)
            ref = engine.read_page("rel", page_no)
            _, length = locate_tuple(ref.data(), slot_index)
            engine.release(ref)
            engine.write_tuple("rel", (page_no, slot_index), bytes([rng.randrange(256)]) * length)
        for slot in engine.pool.slots:
            assert not (slot.dirty and slot.redirected)
    engine.pool.check_consistency()
    if capacity >= 8:
        # nothing was evicted, so nothing reached the file yet
        assert engine.pool.stats.writebacks == 0
        assert file_digest(path) == before
    assert engine.copybacks == first_writes
    engine.flush()
    device.close()


@pytest.mark.parametrize("seed, capacity", [(11, 8), (12, 3)])
def test_se2_random_interleavings(seed, capacity, tmp_path):
    interleave_se2(write_pages(tmp_path / "rel.heap", 8), seed, capacity, 20_000)
