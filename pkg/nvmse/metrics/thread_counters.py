"""
ThreadCounters - Page faults and kernel CPU time of the calling thread
"""
import logging
import os
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional

logger = logging.getLogger(__name__)

try:
    import resource
    RUSAGE_THREAD = getattr(resource, "RUSAGE_THREAD", None)
except ImportError:
    resource = None
    RUSAGE_THREAD = None

THREAD_STAT = "/proc/thread-self/stat"


@dataclass(frozen=True)
class ThreadCounters:
    minor_faults: int = 0
    major_faults: int = 0
    kernel_ns: int = 0
    user_ns: int = 0

    def __sub__(self, other: "ThreadCounters") -> "ThreadCounters":
        return ThreadCounters(self.minor_faults - other.minor_faults,
                              self.major_faults - other.major_faults,
                              self.kernel_ns - other.kernel_ns,
                              self.user_ns - other.user_ns)

    def __add__(self, other: "ThreadCounters") -> "ThreadCounters":
        return ThreadCounters(self.minor_faults + other.minor_faults,
                              self.major_faults + other.major_faults,
                              self.kernel_ns + other.kernel_ns,
                              self.user_ns + other.user_ns)


def _from_rusage() -> ThreadCounters:
    usage = resource.getrusage(RUSAGE_THREAD)
    return ThreadCounters(usage.ru_minflt, usage.ru_majflt,
                          round(usage.ru_stime * 1e9), round(usage.ru_utime * 1e9))


def _from_proc() -> ThreadCounters:
    with open(THREAD_STAT) as f:
        # comm may contain spaces; fields resume after its closing paren
        fields = f.read().rpartition(")")[2].split()
    tick_ns = 1e9 / os.sysconf("SC_CLK_TCK")
    return ThreadCounters(int(fields[7]), int(fields[9]),
                          round(int(fields[12]) * tick_ns), round(int(fields[11]) * tick_ns))


Sampler = Callable[[], ThreadCounters]


def _pick_sampler() -> Optional[Sampler]:
    if RUSAGE_THREAD is not None:
        return _from_rusage
    if os.path.exists(THREAD_STAT):
        return _from_proc
    return None


_sampler = _pick_sampler()


def available() -> bool:
    """Whether the platform exposes per-thread fault counters"""
    return _sampler is not None


def sample() -> Optional[ThreadCounters]:
    return _sampler() if _sampler is not None else None


class FaultMeter:
    """
    Accumulates counter deltas of one thread over explicit windows.

    The executor opens a window only around data access, so faults raised by
    interpreter bookkeeping between pages are not charged to the scan.
    """

    def __init__(self, sampler: Optional[Sampler] = None):
        self.sampler = sampler if sampler is not None else _sampler
        self.owner = threading.get_ident()
        self.total = ThreadCounters()
        self.windows = 0
        self.wall_ns = 0

    @property
    def enabled(self) -> bool:
        return self.sampler is not None

    @contextmanager
    def window(self):
        if self.sampler is None:
            yield
            return
        if threading.get_ident() != self.owner:
            raise RuntimeError("a FaultMeter measures only the thread that created it")
        before = self.sampler()
        started = time.perf_counter_ns()
        try:
            yield
        finally:
            self.wall_ns += time.perf_counter_ns() - started
            self.total = self.total + (self.sampler() - before)
            self.windows += 1

    def result(self) -> Optional[ThreadCounters]:
        return self.total if self.enabled else None
