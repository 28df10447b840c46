"""
StorageEngine - The three read/write paths behind one interface

  base  block facade: region -> kernel buffer -> slot frame (2 copies per miss)
  se1   mapped facade: region -> slot frame (1 copy per miss)
  se2   slot redirected onto the mapped page (0 copies per miss); the first
        write copies the page back and undoes the redirection
"""
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Tuple

import numpy as np

from buffer.buffer_pool import BufferPool, BufferSlot
from device.emulated_device import Device, DeviceCounters
from errors import LengthMismatch, StalePageRef
from storage.page_format import locate_tuple, restamp_checksum


class EngineKind(str, Enum):
    BASE = "base"
    SE1 = "se1"
    SE2 = "se2"

    @property
    def read_copies(self) -> int:
        return {EngineKind.BASE: 2, EngineKind.SE1: 1, EngineKind.SE2: 0}[self]


@dataclass(frozen=True)
class PageRef:
    slot: BufferSlot
    generation: int

    @property
    def rel(self) -> str:
        return self.slot.page_tag[0]

    @property
    def page_no(self) -> int:
        return self.slot.page_tag[1]

    def data(self) -> np.ndarray:
        """Page bytes: the private frame or the mapped region view"""
        if self.slot.generation != self.generation or self.slot.pin_count == 0:
            raise StalePageRef(f"{self.slot!r} no longer backs generation {self.generation}")
        return self.slot.data


class StorageEngine:
    def __init__(self, kind: EngineKind, pool: BufferPool, devices: Mapping[str, Device],
                 adhoc_prefetch: bool = False):
        self.kind = EngineKind(kind)
        self.pool = pool
        self.devices = dict(devices)
        self.adhoc_prefetch = adhoc_prefetch and self.kind is EngineKind.SE2
        self.adhoc_ns = 0
        self.copybacks = 0
        pool.writeback = self._write_slot

    def read_page(self, rel: str, page_no: int) -> PageRef:
        slot, hit = self.pool.get_slot(rel, page_no)
        if not hit:
            device = self.devices[rel]
            try:
                if self.kind is EngineKind.BASE:
                    device.block_read(page_no, slot.frame)
                elif self.kind is EngineKind.SE1:
                    device.mapped_copy(page_no, slot.frame)
                else:
                    self.pool.redirect(slot, device.mapped_ref(page_no))
            except Exception:
                self.pool.discard(slot)
                raise
        return PageRef(slot, slot.generation)

    @property
    def dm_ns(self) -> int:
        """Time spent moving page bytes: device loads, copy-backs and in-engine prefetch touches"""
        return sum(d.counters().dm_ns for d in self.devices.values()) + self.adhoc_ns

    def release(self, ref: PageRef):
        self.pool.unpin(ref.slot)

    def write_tuple(self, rel: str, tid: Tuple[int, int], new_bytes: bytes):
        """In-place, equal-length update; only the private frame is modified"""
        page_no, slot_index = tid
        ref = self.read_page(rel, page_no)
        try:
            slot = ref.slot
            offset, length = locate_tuple(ref.data(), slot_index)
            if len(new_bytes) != length:
                raise LengthMismatch(f"tuple {tid} is {length} bytes, update carries {len(new_bytes)}")
            if slot.redirected:
                self.pool.unredirect_with_copyback(slot, self.devices[rel])
                self.copybacks += 1
            slot.frame[offset:offset + length] = np.frombuffer(new_bytes, dtype=np.uint8)
            restamp_checksum(slot.frame)
            self.pool.mark_dirty(slot)
        finally:
            self.release(ref)

    def _write_slot(self, slot: BufferSlot):
        rel, page_no = slot.page_tag
        if self.kind is EngineKind.BASE:
            self.devices[rel].block_write(page_no, slot.frame)
        else:
            self.devices[rel].mapped_write(page_no, slot.frame)

    def flush(self) -> int:
        count = self.pool.flush_all()
        for device in self.devices.values():
            device.flush_region()
        return count

    def counters(self) -> DeviceCounters:
        total = DeviceCounters()
        for device in self.devices.values():
            total = total + device.counters()
        return total
