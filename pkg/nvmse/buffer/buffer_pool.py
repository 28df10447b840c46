"""
BufferPool - Fixed-capacity page cache with pinning, CLOCK replacement,
dirty tracking and slot redirection into a mapped device region
"""
import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from errors import (DirtyRedirected, DirtySlot, NotRedirected, PoolExhausted,
                    SlotNotPinned)

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 1024

PageTag = Tuple[str, int]


class BufferSlot:
    """One frame of the pool; `data` is the redirectable handle"""

    __slots__ = ("index", "frame", "page_tag", "pin_count", "dirty", "ref_bit", "region_view", "generation")

    def __init__(self, index: int, frame: np.ndarray):
        self.index = index
        self.frame = frame
        self.page_tag: Optional[PageTag] = None
        self.pin_count = 0
        self.dirty = False
        self.ref_bit = False
        self.region_view: Optional[np.ndarray] = None
        self.generation = 0

    @property
    def redirected(self) -> bool:
        return self.region_view is not None

    @property
    def data(self) -> np.ndarray:
        return self.region_view if self.region_view is not None else self.frame

    def __repr__(self):
        state = "redirected" if self.redirected else ("dirty" if self.dirty else "clean")
        return f"BufferSlot({self.index}, {self.page_tag}, pins={self.pin_count}, {state})"


@dataclass
class PoolStats:
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    writebacks: int = 0
    copybacks: int = 0
    # Slots visited by the longest victim search so far
    max_victim_scan: int = 0


WritePath = Callable[[BufferSlot], None]


class BufferPool:
    def __init__(self, capacity: int = DEFAULT_CAPACITY, page_size: int = 8192,
                 writeback: Optional[WritePath] = None):
        if capacity <= 0:
            raise ValueError(f"buffer capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.page_size = page_size
        self._frames = np.zeros((capacity, page_size), dtype=np.uint8)
        self.slots: List[BufferSlot] = [BufferSlot(i, self._frames[i]) for i in range(capacity)]
        self.page_table: Dict[PageTag, int] = {}
        self.clock_hand = 0
        self.stats = PoolStats()
        self.writeback = writeback
        self._free = deque(range(capacity))

    def get_slot(self, rel: str, page_no: int) -> Tuple[BufferSlot, bool]:
        """Pin the slot caching (rel, page_no); on a miss the frame is NOT loaded"""
        tag = (rel, page_no)
        index = self.page_table.get(tag)
        if index is not None:
            slot = self.slots[index]
            slot.pin_count += 1
            slot.ref_bit = True
            self.stats.hits += 1
            return slot, True

        slot = self.slots[self._free.popleft()] if self._free else self._evict(self._find_victim())

        slot.page_tag = tag
        slot.pin_count = 1
        slot.ref_bit = False
        slot.dirty = False
        slot.region_view = None
        slot.generation += 1
        self.page_table[tag] = slot.index
        self.stats.misses += 1
        return slot, False

    def _find_victim(self) -> BufferSlot:
        """CLOCK second chance; two sweeps always suffice"""
        for visited in range(1, 2 * self.capacity + 1):
            slot = self.slots[self.clock_hand]
            self.clock_hand = (self.clock_hand + 1) % self.capacity
            if slot.pin_count > 0:
                continue
            if slot.ref_bit:
                slot.ref_bit = False
                continue
            self.stats.max_victim_scan = max(self.stats.max_victim_scan, visited)
            return slot
        raise PoolExhausted(f"all {self.capacity} buffer slots are pinned")

    def _evict(self, slot: BufferSlot) -> BufferSlot:
        if slot.dirty:
            self._write(slot)
        # A clean redirected slot just drops its view
        slot.region_view = None
        del self.page_table[slot.page_tag]
        slot.page_tag = None
        self.stats.evictions += 1
        return slot

    def _write(self, slot: BufferSlot, write_page: Optional[WritePath] = None):
        write_page = write_page or self.writeback
        if write_page is None:
            raise RuntimeError("buffer pool has no write path bound for dirty pages")
        write_page(slot)
        slot.dirty = False
        self.stats.writebacks += 1

    def discard(self, slot: BufferSlot):
        """Forget a slot whose load failed so the page table stays consistent"""
        if slot.page_tag is not None:
            self.page_table.pop(slot.page_tag, None)
        slot.page_tag = None
        slot.pin_count = 0
        slot.dirty = False
        slot.region_view = None
        self._free.append(slot.index)

    def redirect(self, slot: BufferSlot, region_view: np.ndarray):
        """Point the slot handle at a mapped-region page instead of its frame"""
        if slot.pin_count == 0:
            raise SlotNotPinned(f"{slot!r} must be pinned to be redirected")
        if slot.dirty:
            raise DirtySlot(f"{slot!r} holds unflushed changes")
        slot.region_view = region_view

    def unredirect(self, slot: BufferSlot):
        if not slot.redirected:
            raise NotRedirected(f"{slot!r} is not redirected")
        slot.region_view = None

    def unredirect_with_copyback(self, slot: BufferSlot, device):
        """Copy the region page into the private frame, then restore the handle"""
        if not slot.redirected:
            raise NotRedirected(f"{slot!r} is not redirected")
        if slot.pin_count == 0:
            raise SlotNotPinned(f"{slot!r} must be pinned for copy-back")
        device.mapped_copy(slot.page_tag[1], slot.frame)
        slot.region_view = None
        self.stats.copybacks += 1

    def unpin(self, slot: BufferSlot):
        if slot.pin_count == 0:
            raise SlotNotPinned(f"{slot!r} is not pinned")
        slot.pin_count -= 1

    def mark_dirty(self, slot: BufferSlot):
        if slot.redirected:
            raise DirtyRedirected(f"{slot!r} must be copied back before it is modified")
        slot.dirty = True

    def flush_all(self, write_page: Optional[WritePath] = None) -> int:
        """Write every dirty page (pinned ones included); returns the count"""
        count = 0
        for slot in self.slots:
            if slot.dirty:
                self._write(slot, write_page)
                count += 1
        return count

    def check_consistency(self):
        """Page table maps exactly the occupied slots back to their own index"""
        occupied = {s.page_tag: s.index for s in self.slots if s.page_tag is not None}
        assert occupied == self.page_table, "page table diverged from slot tags"
        for s in self.slots:
            assert s.pin_count >= 0
            assert not (s.dirty and s.redirected), f"{s!r} is dirty and redirected"
        assert 0 <= self.clock_hand < self.capacity
