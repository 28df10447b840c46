"""
EmulatedDevice - Latency-injected block facade and byte-addressable mapped
region over one backing file

The block facade routes every page through a single staging frame (the
kernel buffer analog): two copies per block, injected latency, one caller at
a time. The mapped facade copies once (mapped_copy) or not at all (mapped_ref).
"""
import logging
import mmap
import os
import shutil
import tempfile
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from errors import DeviceIoError, MappingDisabled, Misaligned, OutOfRange, ReadOnlyDevice
from storage.fnv import fnv1a64

logger = logging.getLogger(__name__)

# 1 s / 75k IOPS (500 MB/s class SSD)
DISK_READ_US_DEFAULT = 1e6 / 75_000
DISK_WRITE_US_DEFAULT = DISK_READ_US_DEFAULT
# Below this, sleeping is too coarse; spin on the clock instead
BUSY_WAIT_LIMIT_NS = 50_000
RAM_BACKING_DIR = Path("/dev/shm")


class StorageLabel(str, Enum):
    DISK_EMU = "disk_emu"
    NVM_EMU = "nvm_emu"


class Backing(str, Enum):
    RAM = "ram"
    FILE = "file"


@dataclass(frozen=True)
class LatencyProfile:
    per_block_read_ns: int
    per_block_write_ns: int
    label: StorageLabel

    def __post_init__(self):
        if self.per_block_read_ns < 0 or self.per_block_write_ns < 0:
            raise ValueError("latencies must be >= 0")
        if self.label is StorageLabel.NVM_EMU and self.per_block_read_ns != 0:
            raise ValueError("nvm_emu reads are direct access and carry no latency")

    @classmethod
    def disk_emu(cls, read_us: float = DISK_READ_US_DEFAULT, write_us: float = DISK_WRITE_US_DEFAULT):
        return cls(round(read_us * 1000), round(write_us * 1000), StorageLabel.DISK_EMU)

    @classmethod
    def nvm_emu(cls, write_us: float = 0.0):
        return cls(0, round(write_us * 1000), StorageLabel.NVM_EMU)


@dataclass
class DeviceCounters:
    copies: int = 0
    bytes_copied: int = 0
    block_reads: int = 0
    block_writes: int = 0
    mapped_copies: int = 0
    mapped_writes: int = 0
    dm_ns: int = 0

    def __sub__(self, other: "DeviceCounters") -> "DeviceCounters":
        return DeviceCounters(*(a - b for a, b in zip(self.__dict__.values(), other.__dict__.values())))

    def __add__(self, other: "DeviceCounters") -> "DeviceCounters":
        return DeviceCounters(*(a + b for a, b in zip(self.__dict__.values(), other.__dict__.values())))


def spin_wait_ns(duration_ns: int):
    """Inject latency: calibrated busy-wait for short waits, sleep for long ones"""
    if duration_ns <= 0:
        return
    deadline = time.perf_counter_ns() + duration_ns
    if duration_ns >= BUSY_WAIT_LIMIT_NS:
        time.sleep((duration_ns - BUSY_WAIT_LIMIT_NS // 2) / 1e9)
    while time.perf_counter_ns() < deadline:
        pass


def _as_frame(buf) -> np.ndarray:
    if isinstance(buf, np.ndarray):
        return buf.reshape(-1).view(np.uint8)
    return np.frombuffer(buf, dtype=np.uint8)


class Device:
    def __init__(self, path: Path, page_size: int, latency: LatencyProfile,
                 read_only: bool = False, block_io_enabled: bool = True, mapped_enabled: bool = True):
        self.path = Path(path)
        self.page_size = page_size
        self.latency = latency
        self.read_only = read_only
        self.block_io_enabled = block_io_enabled
        self.mapped_enabled = mapped_enabled

        self.region_length = 0
        self.closed = False
        self._counters = DeviceCounters()
        self._staging = np.zeros(page_size, dtype=np.uint8)
        self._block_lock = threading.Lock()
        self._file = None
        self._ro_map: Optional[mmap.mmap] = None
        self._rw_map: Optional[mmap.mmap] = None
        self._ro_pages: Optional[np.ndarray] = None
        self._rw_pages: Optional[np.ndarray] = None

    def _open(self):
        try:
            length = self.path.stat().st_size
        except OSError as e:
            raise DeviceIoError(f"cannot open device {self.path}: {e}") from e
        if length % self.page_size:
            raise Misaligned(f"{self.path} is {length} bytes, not a multiple of {self.page_size}")

        self.region_length = length
        if length == 0:
            return
        try:
            self._file = open(self.path, "rb" if self.read_only else "r+b")
            fd = self._file.fileno()
            # Views handed out by mapped_ref come from the read-only mapping,
            # so a stray write through a redirected slot raises instead of
            # reaching the file.
            self._ro_map = mmap.mmap(fd, length, access=mmap.ACCESS_READ)
            self._ro_pages = np.frombuffer(self._ro_map, dtype=np.uint8).reshape(-1, self.page_size)
            if not self.read_only:
                self._rw_map = mmap.mmap(fd, length, access=mmap.ACCESS_WRITE)
                self._rw_pages = np.frombuffer(self._rw_map, dtype=np.uint8).reshape(-1, self.page_size)
        except OSError as e:
            self.close()
            raise DeviceIoError(f"cannot map {self.path}: {e}") from e

    @property
    def page_count(self) -> int:
        return self.region_length // self.page_size

    def counters(self) -> DeviceCounters:
        return replace(self._counters)

    def _check_page(self, page_no: int):
        if self.closed:
            raise DeviceIoError(f"device {self.path} is closed")
        if not 0 <= page_no < self.page_count:
            raise OutOfRange(f"page {page_no} outside device of {self.page_count} pages")

    def _check_mapped(self, page_no: int):
        if not self.mapped_enabled:
            raise MappingDisabled(f"mapped access disabled on {self.path}")
        self._check_page(page_no)

    def _check_block(self, page_no: int):
        if not self.block_io_enabled:
            raise DeviceIoError(f"block I/O disabled on {self.path}")
        self._check_page(page_no)

    def _account(self, copies: int, started_ns: int):
        c = self._counters
        c.copies += copies
        c.bytes_copied += copies * self.page_size
        c.dm_ns += time.perf_counter_ns() - started_ns

    # --- block facade ---

    def block_read(self, page_no: int, dest_frame):
        """Region -> staging -> dest: two copies plus the per-block read latency"""
        started = time.perf_counter_ns()
        dest = _as_frame(dest_frame)
        with self._block_lock:
            self._check_block(page_no)
            np.copyto(self._staging, self._ro_pages[page_no])
            np.copyto(dest, self._staging)
            spin_wait_ns(self.latency.per_block_read_ns)
            self._counters.block_reads += 1
            self._account(2, started)

    def block_write(self, page_no: int, src_frame):
        """src -> staging -> region: the read path mirrored"""
        started = time.perf_counter_ns()
        src = _as_frame(src_frame)
        with self._block_lock:
            self._check_block(page_no)
            if self.read_only:
                raise ReadOnlyDevice(f"{self.path} is read-only")
            np.copyto(self._staging, src)
            np.copyto(self._rw_pages[page_no], self._staging)
            spin_wait_ns(self.latency.per_block_write_ns)
            self._counters.block_writes += 1
            self._account(2, started)

    # --- mapped facade ---

    def mapped_copy(self, page_no: int, dest_frame):
        """One copy straight out of the mapped region, no injected latency"""
        started = time.perf_counter_ns()
        self._check_mapped(page_no)
        np.copyto(_as_frame(dest_frame), self._ro_pages[page_no])
        self._counters.mapped_copies += 1
        self._account(1, started)

    def mapped_ref(self, page_no: int) -> np.ndarray:
        """Read-only view aliasing the region page; copies nothing, counts nothing"""
        self._check_mapped(page_no)
        return self._ro_pages[page_no]

    def mapped_write(self, page_no: int, src_frame):
        """One copy into the mapped region; durable after flush_region"""
        started = time.perf_counter_ns()
        self._check_mapped(page_no)
        if self.read_only:
            raise ReadOnlyDevice(f"{self.path} is read-only")
        np.copyto(self._rw_pages[page_no], _as_frame(src_frame))
        spin_wait_ns(self.latency.per_block_write_ns)
        self._counters.mapped_writes += 1
        self._account(1, started)

    def flush_region(self):
        if self.closed:
            raise DeviceIoError(f"device {self.path} is closed")
        try:
            if self._rw_map is not None:
                self._rw_map.flush()
        except OSError as e:
            raise DeviceIoError(f"flushing {self.path}: {e}") from e

    def region_digest(self) -> str:
        if self._ro_pages is None:
            return f"{fnv1a64(b''):016x}"
        return f"{fnv1a64(self._ro_pages):016x}"

    def region_array(self) -> np.ndarray:
        """The whole mapped region as one read-only byte array"""
        if not self.mapped_enabled:
            raise MappingDisabled(f"mapped access disabled on {self.path}")
        if self._ro_pages is None:
            return np.zeros(0, dtype=np.uint8)
        return self._ro_pages.reshape(-1)

    def region_address(self, page_no: int) -> int:
        return self.mapped_ref(page_no).__array_interface__["data"][0]

    def close(self):
        if self.closed:
            return
        self.closed = True
        self._ro_pages = self._rw_pages = None
        for m in (self._rw_map, self._ro_map):
            if m is None:
                continue
            try:
                m.close()
            except BufferError:
                # A view is still held somewhere (e.g. a redirected slot);
                # the mapping goes away with its last reference.
                logger.debug("mapping of %s still exported, leaving it to the collector", self.path)
        self._rw_map = self._ro_map = None
        if self._file is not None:
            self._file.close()
            self._file = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_device(path: Union[str, Path], page_size: int, latency: LatencyProfile, *,
                read_only: bool = False, block_io_enabled: bool = True,
                mapped_enabled: bool = True) -> Device:
    device = Device(Path(path), page_size, latency, read_only, block_io_enabled, mapped_enabled)
    device._open()
    return device


@contextmanager
def staged_backing(source: Path, backing: Backing = Backing.RAM,
                   scratch_dir: Optional[Path] = None) -> Iterator[Path]:
    """Private copy of a heap file for one run; RAM-backed when possible"""
    target_dir = scratch_dir
    if backing is Backing.RAM:
        if RAM_BACKING_DIR.is_dir() and os.access(RAM_BACKING_DIR, os.W_OK):
            target_dir = RAM_BACKING_DIR
        else:
            logger.warning("%s unavailable, NVM emulation falls back to an ordinary file", RAM_BACKING_DIR)
    if target_dir is None:
        target_dir = Path(source).parent

    fd, name = tempfile.mkstemp(prefix=f"nvmse-{Path(source).stem}-", suffix=".heap", dir=target_dir)
    os.close(fd)
    staged = Path(name)
    try:
        shutil.copyfile(source, staged)
        yield staged
    finally:
        staged.unlink(missing_ok=True)
