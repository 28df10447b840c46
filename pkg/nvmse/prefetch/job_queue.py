"""
JobQueue - Bounded ring of prefetch jobs with per-cell sequence stamps

Producers and consumers claim positions by compare-and-exchange on the tail
and head counters; a cell's stamp says whose turn it is. CPython offers no
hardware CAS, so AtomicInt emulates one with a tiny lock held only for the
compare itself.
"""
import threading
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

from errors import InvalidCapacity

DEFAULT_CAPACITY = 64


class AtomicInt:
    """Integer with atomic load and compare-and-exchange"""

    __slots__ = ("_value", "_lock")

    def __init__(self, initial: int = 0):
        self._value = initial
        self._lock = threading.Lock()

    def load(self) -> int:
        return self._value

    def compare_exchange(self, expected: int, desired: int) -> Tuple[bool, int]:
        with self._lock:
            actual = self._value
            if actual == expected:
                self._value = desired
                return True, actual
            return False, actual


@dataclass(frozen=True)
class PrefetchJob:
    region_id: int
    base: int
    length: int
    job_id: int = -1


class EnqueueResult(Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"


class _Cell:
    __slots__ = ("sequence", "job")

    def __init__(self, sequence: int):
        self.sequence = sequence
        self.job: Optional[PrefetchJob] = None


class JobQueue:
    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity <= 0 or capacity & (capacity - 1):
            raise InvalidCapacity(f"queue capacity must be a positive power of two, got {capacity}")
        self.capacity = capacity
        self._mask = capacity - 1
        self._cells: List[_Cell] = [_Cell(i) for i in range(capacity)]
        self._tail = AtomicInt(0)
        self._head = AtomicInt(0)
        self.enqueued = 0
        self.rejected = 0

    def try_enqueue(self, job: PrefetchJob, count_rejection: bool = True) -> bool:
        """Never blocks; False means the ring is full"""
        while True:
            pos = self._tail.load()
            cell = self._cells[pos & self._mask]
            lag = cell.sequence - pos
            if lag == 0:
                claimed, _ = self._tail.compare_exchange(pos, pos + 1)
                if claimed:
                    break
            elif lag < 0:
                if count_rejection:
                    self.rejected += 1
                return False
        cell.job = job
        cell.sequence = pos + 1
        self.enqueued += 1
        return True

    def try_dequeue(self) -> Optional[PrefetchJob]:
        while True:
            pos = self._head.load()
            cell = self._cells[pos & self._mask]
            lag = cell.sequence - (pos + 1)
            if lag == 0:
                claimed, _ = self._head.compare_exchange(pos, pos + 1)
                if claimed:
                    break
            elif lag < 0:
                return None
        job = cell.job
        cell.job = None
        # Hand the cell to the producer one lap ahead
        cell.sequence = pos + self.capacity
        return job

    def __len__(self):
        return self._tail.load() - self._head.load()
