"""
HelperPool - Helper threads that consume prefetch jobs and touch mapped
memory so the compute thread finds it resident

Services: creating helper threads per computation thread, assigning work by
enqueueing jobs, and mapping threads to cores (schemes M1/M2/M3).
"""
import logging
import os
import sys
import threading
import time
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numba
import numpy as np

from errors import InvalidCapacity, OutOfRange, PoolStopped, SpawnFailure
from prefetch.job_queue import DEFAULT_CAPACITY, EnqueueResult, JobQueue, PrefetchJob
from prefetch.topology import CpuTopology, MappingPlan, MappingScheme, plan_mapping

logger = logging.getLogger(__name__)

DEFAULT_STRIDE = 64
# Empty polls before a helper parks on its wakeup signal
SPIN_LIMIT = 32
PARK_TIMEOUT_S = 0.001
# GIL hand-off interval while helpers run; the default 5 ms would let the
# compute thread reach page k+1 long before a helper is scheduled
SWITCH_INTERVAL_S = 50e-6

CompletionHook = Callable[[int, PrefetchJob], None]
StallHook = Callable[[int, PrefetchJob], None]


class RegionRegistry:
    """Mapped regions helpers may read, by small integer id"""

    def __init__(self):
        self._regions: Dict[int, np.ndarray] = {}

    def register(self, region_id: int, region: np.ndarray):
        self._regions[region_id] = region.reshape(-1).view(np.uint8)

    def get(self, region_id: int) -> np.ndarray:
        try:
            return self._regions[region_id]
        except KeyError:
            raise OutOfRange(f"region {region_id} is not registered") from None

    def __contains__(self, region_id: int):
        return region_id in self._regions


_sink = 0


@numba.njit(cache=True, nogil=True)
def _touch(window, stride):
    acc = np.uint64(0)
    for i in range(0, window.shape[0], stride):
        acc += np.uint64(window[i])
    return acc + np.uint64(window[window.shape[0] - 1])


# Compile at import, for writable and read-only regions, so a helper never pays for it mid-scan
_touch(np.zeros(1, dtype=np.uint8), 1)
_touch(np.frombuffer(b"\0", dtype=np.uint8), 1)


def touch_region(region: np.ndarray, base: int, length: int, stride: int = DEFAULT_STRIDE) -> int:
    """Read one byte every stride bytes plus the last one; returns ceil(length / stride)"""
    global _sink
    if length <= 0 or base < 0 or base + length > region.shape[0]:
        raise OutOfRange(f"[{base}, {base + length}) outside region of {region.shape[0]} bytes")
    _sink ^= int(_touch(region[base:base + length], stride))
    return -(-length // stride)


class PoolState(Enum):
    RUNNING = "running"
    DRAINING = "draining"
    STOPPED = "stopped"


@dataclass(frozen=True)
class PoolStats:
    scheme: str
    enqueued: int
    accepted: int
    rejected: int
    completed_per_helper: Tuple[int, ...]
    # "<helper name>: <exception>" for every helper that stopped early
    errors: Tuple[str, ...] = ()

    @property
    def completed(self) -> int:
        return sum(self.completed_per_helper)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["completed_per_helper"] = list(self.completed_per_helper)
        doc["errors"] = list(self.errors)
        return doc


class HelperThread(threading.Thread):
    def __init__(self, index: int, pool: "PrefetchPool", inbox: JobQueue, inbox_signal: threading.Event,
                 outbox: Optional[JobQueue] = None, outbox_signal: Optional[threading.Event] = None,
                 cpu: Optional[int] = None):
        super().__init__(name=f"prefetch-helper-{index}", daemon=True)
        self.index = index
        self.pool = pool
        self.inbox = inbox
        self.inbox_signal = inbox_signal
        self.outbox = outbox
        self.outbox_signal = outbox_signal
        self.cpu = cpu
        # M3 stage-one helper: the thread draining outbox
        self.downstream: Optional["HelperThread"] = None
        self.completed = 0
        self.touches = 0
        self.finish = threading.Event()
        self.error: Optional[BaseException] = None

    def _pin(self):
        if self.cpu is None:
            return
        try:
            os.sched_setaffinity(0, {self.cpu})
        except (AttributeError, OSError) as e:
            logger.warning("%s could not be pinned to cpu %s: %s", self.name, self.cpu, e)

    def _next_job(self) -> Optional[PrefetchJob]:
        """Spin briefly, then park until woken; None once told to finish and empty"""
        spins = 0
        while True:
            job = self.inbox.try_dequeue()
            if job is not None:
                return job
            if self.finish.is_set() and len(self.inbox) == 0:
                return None
            if spins < SPIN_LIMIT:
                spins += 1
                time.sleep(0)
                continue
            self.inbox_signal.clear()
            job = self.inbox.try_dequeue()
            if job is not None:
                return job
            self.inbox_signal.wait(PARK_TIMEOUT_S)

    def _forward(self, job: PrefetchJob):
        """The tandem hop must not drop jobs while the next stage lives; only this helper waits"""
        while not self.outbox.try_enqueue(job, count_rejection=False):
            downstream = self.downstream
            if downstream is not None and downstream.ident is not None and not downstream.is_alive():
                logger.warning("%s stopped; %s no longer forwards jobs", downstream.name, self.name)
                self.outbox = None
                return
            time.sleep(0)
        self.outbox_signal.set()

    def run(self):
        self._pin()
        pool = self.pool
        try:
            while True:
                job = self._next_job()
                if job is None:
                    return
                pool.gate.wait()
                if pool.stall_hook is not None:
                    pool.stall_hook(self.index, job)
                self.touches += touch_region(pool.registry.get(job.region_id), job.base, job.length, pool.stride)
                self.completed += 1
                if pool.on_complete is not None:
                    pool.on_complete(self.index, job)
                if self.outbox is not None:
                    self._forward(job)
        except BaseException as e:
            self.error = e
            logger.error("%s stopped on %s: %s", self.name, type(e).__name__, e)


class PrefetchPool:
    def __init__(self, scheme: MappingScheme, registry: RegionRegistry, capacity: int,
                 stride: int, plan: MappingPlan, on_complete: Optional[CompletionHook] = None,
                 stall_hook: Optional[StallHook] = None):
        self.scheme = MappingScheme(scheme)
        self.registry = registry
        self.capacity = capacity
        self.stride = stride
        self.plan = plan
        self.on_complete = on_complete
        self.stall_hook = stall_hook
        self.state = PoolState.RUNNING
        self.gate = threading.Event()
        self.gate.set()
        self.queues: List[JobQueue] = []
        self.helpers: List[HelperThread] = []
        self._signals: List[threading.Event] = []
        self._noop_enqueued = 0
        self._saved_affinity = None
        self._saved_switch_interval: Optional[float] = None
        self._final: Optional[PoolStats] = None

    @property
    def active(self) -> bool:
        return self.scheme is not MappingScheme.NONE

    def _start(self):
        if not self.active:
            return
        self._pin_compute()
        self._saved_switch_interval = sys.getswitchinterval()
        sys.setswitchinterval(min(SWITCH_INTERVAL_S, self._saved_switch_interval))
        self.queues.append(JobQueue(self.capacity))
        self._signals.append(threading.Event())
        if self.scheme is MappingScheme.M3:
            self.queues.append(JobQueue(self.capacity))
            self._signals.append(threading.Event())
            remote, sibling = self.plan.helper_cores
            self.helpers = [
                HelperThread(0, self, self.queues[0], self._signals[0],
                             self.queues[1], self._signals[1], cpu=remote),
                HelperThread(1, self, self.queues[1], self._signals[1], cpu=sibling),
            ]
            self.helpers[0].downstream = self.helpers[1]
        else:
            self.helpers = [HelperThread(i, self, self.queues[0], self._signals[0], cpu=cpu)
                            for i, cpu in enumerate(self.plan.helper_cores)]
        for helper in self.helpers:
            try:
                helper.start()
            except RuntimeError as e:
                self.drain_and_stop()
                raise SpawnFailure(f"cannot start {helper.name}: {e}") from e

    def _pin_compute(self):
        if self.plan.compute_core is None:
            return
        try:
            self._saved_affinity = os.sched_getaffinity(0)
            os.sched_setaffinity(0, {self.plan.compute_core})
        except (AttributeError, OSError) as e:
            logger.warning("compute thread could not be pinned to cpu %s: %s", self.plan.compute_core, e)
            self._saved_affinity = None

    def enqueue(self, job: PrefetchJob) -> EnqueueResult:
        """Publish a job without ever blocking the producer"""
        if self.state is not PoolState.RUNNING:
            raise PoolStopped(f"prefetch pool is {self.state.value}")
        if not self.active:
            self._noop_enqueued += 1
            return EnqueueResult.ACCEPTED
        region = self.registry.get(job.region_id)
        if job.length <= 0 or job.base < 0 or job.base + job.length > region.shape[0]:
            raise OutOfRange(f"job [{job.base}, {job.base + job.length}) outside region {job.region_id}")
        if not self.queues[0].try_enqueue(job):
            return EnqueueResult.REJECTED
        self._signals[0].set()
        return EnqueueResult.ACCEPTED

    def suspend(self):
        """Hold helpers before they process their next job"""
        self.gate.clear()

    def resume(self):
        self.gate.set()

    def stats(self) -> PoolStats:
        if self._final is not None:
            return self._final
        if not self.active:
            return PoolStats(self.scheme.value, self._noop_enqueued, self._noop_enqueued, 0, ())
        q = self.queues[0]
        errors = tuple(f"{h.name}: {type(h.error).__name__}: {h.error}"
                       for h in self.helpers if h.error is not None)
        return PoolStats(self.scheme.value, q.enqueued + q.rejected, q.enqueued, q.rejected,
                         tuple(h.completed for h in self.helpers), errors)

    def drain_and_stop(self) -> PoolStats:
        """Complete every accepted job, join helpers; idempotent"""
        if self._final is not None:
            return self._final
        self.state = PoolState.DRAINING
        self.resume()
        # Stage one finishes before the tandem stage is told to
        stages = [self.helpers[:1], self.helpers[1:]] if self.scheme is MappingScheme.M3 else [self.helpers]
        for stage in stages:
            for helper in stage:
                helper.finish.set()
            for signal in self._signals:
                signal.set()
            for helper in stage:
                if helper.is_alive():
                    helper.join()
        if self._saved_affinity is not None:
            try:
                os.sched_setaffinity(0, self._saved_affinity)
            except OSError:
                pass
        if self._saved_switch_interval is not None:
            sys.setswitchinterval(self._saved_switch_interval)
            self._saved_switch_interval = None
        self._final = self.stats()
        self.state = PoolState.STOPPED
        return self._final

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.drain_and_stop()


def create_pool(scheme: MappingScheme, registry: RegionRegistry, capacity: int = DEFAULT_CAPACITY,
                stride: int = DEFAULT_STRIDE, *, compute_core: int = -1, helper_cores: Sequence[int] = (),
                helpers: int = 1, topology: Optional[CpuTopology] = None,
                on_complete: Optional[CompletionHook] = None,
                stall_hook: Optional[StallHook] = None) -> PrefetchPool:
    """Create and start a pool; call on the compute (producer) thread"""
    if capacity <= 0 or capacity & (capacity - 1):
        raise InvalidCapacity(f"queue capacity must be a positive power of two, got {capacity}")
    if stride <= 0:
        raise ValueError(f"touch stride must be positive, got {stride}")

    plan = plan_mapping(scheme, compute_core, helper_cores, helpers, topology)
    for warning in plan.warnings:
        logger.warning(warning)

    pool = PrefetchPool(scheme, registry, capacity, stride, plan, on_complete, stall_hook)
    pool._start()
    return pool
