"""
Runner - One measured execution of a plan (or an update script) under one
engine x storage x scheme configuration
"""
import logging
import threading
import time
from contextlib import ExitStack
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional

from bench_config import BenchConfig
from buffer.buffer_pool import BufferPool
from compiler.workload_compiler import UpdateScript
from dataset.dataset_generator import Catalog
from device.emulated_device import Device, DeviceCounters, open_device, staged_backing
from engine.storage_engine import StorageEngine
from errors import QueryCancelled
from metrics import thread_counters
from metrics.thread_counters import FaultMeter
from prefetch.helper_pool import PoolStats, RegionRegistry, create_pool
from prefetch.topology import CpuTopology
from query.executor import QueryExecutor, TimeBreakdown
from query.plans import Aggregate, QueryPlan, validate_plan
from storage.fnv import file_digest

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "query", "engine", "scheme", "storage", "rep", "wall_ns", "dm_ns", "dm_fraction",
    "copies", "bytes_copied", "buf_hits", "buf_misses", "prefetch_accepted",
    "prefetch_rejected", "prefetch_completed", "compute_minor_faults",
    "compute_major_faults", "result_digest",
)
# Written when the platform has no per-thread fault counters
FAULTS_UNAVAILABLE = -1


@dataclass
class RunReport:
    query: str
    engine: str
    scheme: str
    storage: str
    rep: int
    breakdown: TimeBreakdown
    counters: DeviceCounters
    buf_hits: int
    buf_misses: int
    prefetch: PoolStats
    result_digest: str
    row_count: int
    page_count: int
    pool_capacity: int
    copybacks: int = 0
    compute_minor_faults: Optional[int] = None
    compute_major_faults: Optional[int] = None
    compute_kernel_ns: Optional[int] = None
    result_value: Optional[Any] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def wall_ns(self) -> int:
        return self.breakdown.total_ns

    @property
    def dm_ns(self) -> int:
        return self.breakdown.dm_ns

    @property
    def dm_fraction(self) -> float:
        return self.breakdown.dm_fraction

    @property
    def copies(self) -> int:
        return self.counters.copies

    @property
    def kernel_fraction(self) -> Optional[float]:
        if self.compute_kernel_ns is None or self.wall_ns <= 0:
            return None
        return min(1.0, self.compute_kernel_ns / self.wall_ns)

    def to_csv_row(self) -> Dict[str, Any]:
        minor = self.compute_minor_faults
        major = self.compute_major_faults
        return {
            "query": self.query,
            "engine": self.engine,
            "scheme": self.scheme,
            "storage": self.storage,
            "rep": self.rep,
            "wall_ns": self.wall_ns,
            "dm_ns": self.dm_ns,
            "dm_fraction": f"{self.dm_fraction:.6f}",
            "copies": self.counters.copies,
            "bytes_copied": self.counters.bytes_copied,
            "buf_hits": self.buf_hits,
            "buf_misses": self.buf_misses,
            "prefetch_accepted": self.prefetch.accepted,
            "prefetch_rejected": self.prefetch.rejected,
            "prefetch_completed": self.prefetch.completed,
            "compute_minor_faults": FAULTS_UNAVAILABLE if minor is None else minor,
            "compute_major_faults": FAULTS_UNAVAILABLE if major is None else major,
            "result_digest": self.result_digest,
        }

    def to_dict(self) -> Dict[str, Any]:
        value = self.result_value
        return {
            **self.to_csv_row(),
            "dm_fraction": self.dm_fraction,
            "breakdown": self.breakdown.to_dict(),
            "operator_pct": self.breakdown.percentages(),
            "device": vars(self.counters).copy(),
            "prefetch": self.prefetch.to_dict(),
            "copybacks": self.copybacks,
            "row_count": self.row_count,
            "page_count": self.page_count,
            "pool_capacity": self.pool_capacity,
            "compute_kernel_ns": self.compute_kernel_ns,
            "kernel_fraction": self.kernel_fraction,
            "result_value": str(value) if value is not None else None,
            "warnings": list(self.warnings),
        }


@dataclass
class UpdateReport:
    engine: str
    storage: str
    applied: int
    copybacks: int
    writebacks: int
    counters: DeviceCounters
    wall_ns: int
    file_digests: Dict[str, str]


def pool_capacity(config: BenchConfig, dataset_pages: int) -> int:
    """Configured slots, capped at a quarter of the dataset when auto-sizing"""
    if config.auto_size and dataset_pages > 0:
        return max(1, min(config.capacity_slots, dataset_pages // 4))
    return config.capacity_slots


def _open_devices(stack: ExitStack, catalog: Catalog, rels: Iterable[str], config: BenchConfig,
                  read_only: bool) -> Dict[str, Device]:
    devices = {}
    for rel in rels:
        staged = stack.enter_context(staged_backing(catalog.path_of(rel), config.backing))
        devices[rel] = stack.enter_context(
            open_device(staged, catalog.page_size, config.latency(), read_only=read_only))
    return devices


def run_query(plan: QueryPlan, config: BenchConfig, catalog: Catalog, rep: int = 0,
              cancel_event: Optional[threading.Event] = None,
              topology: Optional[CpuTopology] = None) -> RunReport:
    """Execute plan cold on private copies of its relations"""
    validate_plan(plan, catalog.relations.keys())
    rels = plan.relations()

    with ExitStack() as stack:
        devices = _open_devices(stack, catalog, rels, config, read_only=True)
        pages = sum(d.page_count for d in devices.values())
        pool = BufferPool(pool_capacity(config, pages), catalog.page_size)
        engine = StorageEngine(config.engine, pool, devices, config.se2_adhoc_prefetch)

        registry = RegionRegistry()
        region_ids = {}
        for region_id, rel in enumerate(rels):
            registry.register(region_id, devices[rel].region_array())
            region_ids[rel] = region_id

        meter = FaultMeter()
        kernel_before = thread_counters.sample()
        prefetch = create_pool(config.scheme, registry, config.prefetch_capacity, config.prefetch_stride,
                               compute_core=config.compute_core, helper_cores=config.helper_cores,
                               helpers=config.helpers, topology=topology)
        executor = QueryExecutor(engine, prefetch, region_ids, meter, cancel_event, config.prefetch_stride)
        try:
            result = executor.execute(plan)
        finally:
            prefetch_stats = prefetch.drain_and_stop()
        kernel_after = thread_counters.sample()
        counters = engine.counters()

    faults = meter.result()
    value = None
    if isinstance(plan.root, Aggregate) and result.rows:
        value = result.rows[0][0]
    report = RunReport(
        query=plan.label,
        engine=engine.kind.value,
        scheme=prefetch.scheme.value,
        storage=config.storage.value,
        rep=rep,
        breakdown=result.breakdown,
        counters=counters,
        buf_hits=pool.stats.hits,
        buf_misses=pool.stats.misses,
        prefetch=prefetch_stats,
        result_digest=result.digest,
        row_count=result.row_count,
        page_count=pages,
        pool_capacity=pool.capacity,
        copybacks=engine.copybacks,
        compute_minor_faults=faults.minor_faults if faults is not None else None,
        compute_major_faults=faults.major_faults if faults is not None else None,
        compute_kernel_ns=(kernel_after - kernel_before).kernel_ns if kernel_before is not None else None,
        result_value=value,
        warnings=list(prefetch.plan.warnings) + [f"helper failed: {e}" for e in prefetch_stats.errors],
    )
    logger.debug("%s/%s/%s/%s rep %d: %d rows, %d misses, dm %.1f%%", report.query, report.engine,
                 report.storage, report.scheme, rep, report.row_count, report.buf_misses,
                 100 * report.dm_fraction)
    return report


def run_updates(scripts: Iterable[UpdateScript], config: BenchConfig, catalog: Catalog,
                cancel_event: Optional[threading.Event] = None) -> UpdateReport:
    """Apply update scripts in order, flush, and digest the resulting heap files"""
    scripts = list(scripts)
    rels = sorted({u.rel for s in scripts for u in s.updates} or catalog.relations.keys())

    with ExitStack() as stack:
        staged = {rel: stack.enter_context(staged_backing(catalog.path_of(rel), config.backing))
                  for rel in rels}
        devices = {rel: stack.enter_context(open_device(path, catalog.page_size, config.latency()))
                   for rel, path in staged.items()}
        pages = sum(d.page_count for d in devices.values())
        pool = BufferPool(pool_capacity(config, pages), catalog.page_size)
        engine = StorageEngine(config.engine, pool, devices)

        started = time.perf_counter_ns()
        applied = 0
        for script in scripts:
            for update in script.updates:
                if cancel_event is not None and cancel_event.is_set():
                    raise QueryCancelled(f"update run cancelled after {applied} writes")
                engine.write_tuple(update.rel, update.tid, update.new_bytes)
                applied += 1
        engine.flush()
        wall_ns = time.perf_counter_ns() - started
        counters = engine.counters()
        for device in devices.values():
            device.close()
        digests = {rel: file_digest(path) for rel, path in staged.items()}

    return UpdateReport(engine.kind.value, config.storage.value, applied, engine.copybacks,
                        pool.stats.writebacks, counters, wall_ns, digests)


