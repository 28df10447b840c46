import random

import numpy as np
import pytest

from buffer.buffer_pool import BufferPool
from device.emulated_device import LatencyProfile, open_device
from errors import (DirtyRedirected, DirtySlot, NotRedirected, PoolExhausted, SlotNotPinned)


def _touch(pool, rel, page_no):
    slot, hit = pool.get_slot(rel, page_no)
    pool.unpin(slot)
    return slot, hit


def test_hits_and_misses():
    pool = BufferPool(2, 512)
    for page in ("A", "B", "A"):
        _touch(pool, page, 0)
    assert (pool.stats.hits, pool.stats.misses) == (1, 2)


def test_all_pinned_exhausts():
    pool = BufferPool(1, 512)
    pool.get_slot("A", 0)
    with pytest.raises(PoolExhausted):
        pool.get_slot("B", 0)


def test_clock_second_chance_evicts_b():
    pool = BufferPool(3, 512)
    for page in ("A", "B", "C", "A"):
        _touch(pool, page, 0)
    slot, hit = _touch(pool, "D", 0)
    assert not hit
    assert slot.index == 1
    assert ("B", 0) not in pool.page_table
    assert {("A", 0), ("C", 0), ("D", 0)} == set(pool.page_table)


def test_dirty_victim_is_written_back_first():
    written = []
    pool = BufferPool(1, 512, writeback=lambda slot: written.append(slot.page_tag))
    slot, _ = pool.get_slot("A", 0)
    pool.mark_dirty(slot)
    pool.unpin(slot)
    _touch(pool, "B", 0)
    assert written == [("A", 0)]
    assert pool.stats.writebacks == 1


def test_unpin_unpinned():
    pool = BufferPool(1, 512)
    slot, _ = _touch(pool, "A", 0)
    with pytest.raises(SlotNotPinned):
        pool.unpin(slot)


def test_redirect_and_unredirect(nvm_device):
    pool = BufferPool(2, 8192)
    slot, _ = pool.get_slot("rel", 4)
    view = nvm_device.mapped_ref(4)
    pool.redirect(slot, view)
    assert slot.data is view
    pool.unredirect(slot)
    assert slot.data is slot.frame
    with pytest.raises(NotRedirected):
        pool.unredirect(slot)


def test_redirect_dirty_slot(nvm_device):
    pool = BufferPool(1, 8192)
    slot, _ = pool.get_slot("rel", 0)
    pool.mark_dirty(slot)
    with pytest.raises(DirtySlot):
        pool.redirect(slot, nvm_device.mapped_ref(0))


def test_copyback_restores_private_frame(nvm_device):
    pool = BufferPool(1, 8192)
    slot, _ = pool.get_slot("rel", 6)
    pool.redirect(slot, nvm_device.mapped_ref(6))
    with pytest.raises(DirtyRedirected):
        pool.mark_dirty(slot)

    before = nvm_device.counters()
    pool.unredirect_with_copyback(slot, nvm_device)
    delta = nvm_device.counters() - before
    assert (delta.copies, delta.bytes_copied) == (1, 8192)
    assert np.array_equal(slot.frame, nvm_device.mapped_ref(6))
    assert not slot.redirected
    pool.mark_dirty(slot)
    with pytest.raises(NotRedirected):
        pool.unredirect_with_copyback(slot, nvm_device)


def test_flush_all(heap_file):
    with open_device(heap_file, 8192, LatencyProfile.nvm_emu()) as device:
        pool = BufferPool(4, 8192, writeback=lambda s: device.block_write(s.page_tag[1], s.frame))
        assert pool.flush_all() == 0

        slot, _ = pool.get_slot("rel", 2)
        device.block_read(2, slot.frame)
        slot.frame[100] ^= 0xFF
        pool.mark_dirty(slot)
        # pinned dirty pages are flushed too
        assert pool.flush_all() == 1
        assert pool.flush_all() == 0
        assert heap_file.read_bytes()[2 * 8192 + 100] == int(slot.frame[100])


def test_evicting_clean_redirected_slot_drops_view(nvm_device):
    pool = BufferPool(1, 8192)
    slot, _ = pool.get_slot("rel", 0)
    pool.redirect(slot, nvm_device.mapped_ref(0))
    pool.unpin(slot)
    slot, _ = _touch(pool, "rel", 1)
    assert not slot.redirected
    assert nvm_device.counters().copies == 0


def exercise_pool(device, seed, ops):
    """Random pins, unpins, redirects and writes; pool invariants hold after every step"""
    rng = random.Random(seed)
    capacity = rng.choice([1, 2, 3, 8])
    pool = BufferPool(capacity, 8192, writeback=lambda s: None)
    pinned = []
    for _ in range(ops):
        op = rng.random()
        if op < 0.5:
            try:
                slot, _ = pool.get_slot("rel", rng.randrange(10))
            except PoolExhausted:
                assert all(s.pin_count > 0 for s in pool.slots)
                continue
            pinned.append(slot)
        elif op < 0.8 and pinned:
            pool.unpin(pinned.pop(rng.randrange(len(pinned))))
        elif op < 0.9 and pinned:
            slot = rng.choice(pinned)
            if not slot.redirected and not slot.dirty:
                pool.redirect(slot, device.mapped_ref(slot.page_tag[1]))
        elif pinned:
            slot = rng.choice(pinned)
            if slot.redirected:
                pool.unredirect_with_copyback(slot, device)
            pool.mark_dirty(slot)
        pool.check_consistency()
        assert pool.stats.max_victim_scan <= 2 * capacity
    assert pool.stats.hits + pool.stats.misses > 0


@pytest.mark.parametrize("seed", [1, 2, 3, 4])
def test_random_operations_keep_pool_invariants(seed, nvm_device):
    exercise_pool(nvm_device, seed, 10_000)


def test_never_evicts_pinned():
    rng = random.Random(99)
    pool = BufferPool(4, 512)
    pinned = {}
    for _ in range(20_000):
        page = rng.randrange(16)
        try:
            slot, _ = pool.get_slot("rel", page)
        except PoolExhausted:
            assert len({id(s) for s in pinned.values()}) == 4
            tag, victim = pinned.popitem()
            pool.unpin(victim)
            continue
        if slot.pin_count > 1 or rng.random() < 0.5:
            pool.unpin(slot)
        else:
            pinned[slot.page_tag] = slot
        for tag, held in pinned.items():
            assert held.page_tag == tag
