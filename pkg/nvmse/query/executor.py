"""
QueryExecutor - Runs a plan on the compute thread and accounts where the
time went

Operators are materialized bottom-up. Each operator's time is exclusive of
its children; data movement (dm) is the time spent inside the engine's read
path, clocked by the engine itself.
"""
import logging
import threading
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterator, List, Mapping, Optional

from engine.storage_engine import StorageEngine
from errors import PlanInvalid, QueryCancelled
from metrics.thread_counters import FaultMeter
from prefetch.helper_pool import PrefetchPool, touch_region
from prefetch.job_queue import EnqueueResult, PrefetchJob
from query.plans import (AggFunc, Aggregate, HashJoin, PlanNode, Predicate, QueryPlan,
                         SeqScan, Sort)
from storage.fnv import StreamDigest
from storage.page_format import FIXED_COLUMNS, iter_tuple_spans, verify_page

logger = logging.getLogger(__name__)

OPERATOR_KINDS = ("SeqScan", "Sort", "Join", "Aggregate")
INT128_BYTES = 16

Row = tuple


def encode_row(row: Row) -> bytes:
    """Canonical row encoding the result digest is taken over"""
    out = bytearray()
    for value in row:
        if isinstance(value, (bytes, bytearray)):
            out += len(value).to_bytes(2, "little") + value
        elif isinstance(value, Fraction):
            out += value.numerator.to_bytes(INT128_BYTES, "little", signed=True)
            out += value.denominator.to_bytes(INT128_BYTES, "little", signed=True)
        else:
            out += int(value).to_bytes(INT128_BYTES, "little", signed=True)
    return bytes(out)


@dataclass
class TimeBreakdown:
    total_ns: int = 0
    dm_ns: int = 0
    operator_ns: Dict[str, int] = field(default_factory=lambda: dict.fromkeys(OPERATOR_KINDS, 0))

    @property
    def dm_fraction(self) -> float:
        if self.total_ns <= 0:
            return 0.0
        return min(1.0, max(0.0, self.dm_ns / self.total_ns))

    @property
    def other_ns(self) -> int:
        return max(0, self.total_ns - sum(self.operator_ns.values()))

    def percentages(self) -> Dict[str, float]:
        if self.total_ns <= 0:
            return {k: 0.0 for k in (*OPERATOR_KINDS, "other")}
        parts = dict(self.operator_ns, other=self.other_ns)
        return {k: 100.0 * v / self.total_ns for k, v in parts.items()}

    def to_dict(self) -> dict:
        return {"total_ns": self.total_ns, "dm_ns": self.dm_ns, "dm_fraction": self.dm_fraction,
                "operator_ns": dict(self.operator_ns), "other_ns": self.other_ns}


@dataclass
class ScanStats:
    pages: int = 0
    tuples_read: int = 0
    tuples_out: int = 0
    prefetch_accepted: int = 0
    prefetch_rejected: int = 0


@dataclass
class QueryResult:
    rows: List[Row]
    digest: str
    breakdown: TimeBreakdown
    scans: Dict[str, ScanStats]

    @property
    def row_count(self) -> int:
        return len(self.rows)


def seq_scan(rel: str, engine: StorageEngine, prefetch: Optional[PrefetchPool] = None,
             predicate: Optional[Predicate] = None, *, region_id: int = 0,
             meter: Optional[FaultMeter] = None, cancel: Optional[threading.Event] = None,
             stride: int = 64, stats: Optional[ScanStats] = None) -> Iterator[Row]:
    """
    Visit every page of rel in order and yield the rows passing predicate.

    With a prefetch pool, page k+1 is enqueued as page k is started (page 0
    is primed up front) and the producer yields so a helper can run.
    """
    device = engine.devices[rel]
    page_size = device.page_size
    page_count = device.page_count
    stats = stats if stats is not None else ScanStats()
    accept = predicate.bind(SeqScan(rel).schema()) if predicate is not None else None
    window = meter.window if meter is not None and meter.enabled else None
    active = prefetch is not None and prefetch.active
    adhoc_region = device.region_array() if engine.adhoc_prefetch else None
    zero_copy = engine.kind.read_copies == 0

    def offer(page_no: int):
        result = prefetch.enqueue(PrefetchJob(region_id, page_no * page_size, page_size, page_no))
        if result is EnqueueResult.ACCEPTED:
            stats.prefetch_accepted += 1
        else:
            stats.prefetch_rejected += 1

    if prefetch is not None and page_count > 0:
        offer(0)

    for page_no in range(page_count):
        if cancel is not None and cancel.is_set():
            raise QueryCancelled(f"scan of {rel} cancelled at page {page_no}")
        if prefetch is not None and page_no + 1 < page_count:
            offer(page_no + 1)
            if active:
                time.sleep(0)

        # Faults are charged to the scan only while it touches page data;
        # a zero-copy read only redirects a slot, so it stays outside the window
        ref = engine.read_page(rel, page_no) if zero_copy else None
        with window() if window is not None else nullcontext():
            if ref is None:
                ref = engine.read_page(rel, page_no)
            try:
                header = verify_page(ref.data(), page_size)
            except Exception:
                engine.release(ref)
                raise

        try:
            if adhoc_region is not None and page_no + 1 < page_count:
                # In-engine prefetch of the next page, on the compute thread itself
                started = time.perf_counter_ns()
                touch_region(adhoc_region, (page_no + 1) * page_size, page_size, stride)
                engine.adhoc_ns += time.perf_counter_ns() - started

            view = memoryview(ref.data())
            rows = []
            for _, offset, length in iter_tuple_spans(view, header):
                row = FIXED_COLUMNS.unpack_from(view, offset) + (
                    view[offset + FIXED_COLUMNS.size:offset + length].tobytes(),)
                if accept is None or accept(row):
                    rows.append(row)
            stats.tuples_read += header.tuple_count
        finally:
            engine.release(ref)
        stats.pages += 1
        stats.tuples_out += len(rows)
        yield from rows


class QueryExecutor:
    def __init__(self, engine: StorageEngine, prefetch: Optional[PrefetchPool] = None,
                 region_ids: Optional[Mapping[str, int]] = None, meter: Optional[FaultMeter] = None,
                 cancel: Optional[threading.Event] = None, stride: int = 64):
        self.engine = engine
        self.prefetch = prefetch
        self.region_ids = dict(region_ids or {})
        self.meter = meter
        self.cancel = cancel
        self.stride = stride
        self.breakdown = TimeBreakdown()
        self.scans: Dict[str, ScanStats] = {}

    def execute(self, plan: QueryPlan) -> QueryResult:
        self.breakdown = TimeBreakdown()
        self.scans = {}
        dm_before = self.engine.dm_ns
        started = time.perf_counter_ns()
        rows = self._run(plan.root)
        digest = StreamDigest()
        for row in rows:
            digest.update(encode_row(row))
        self.breakdown.total_ns = time.perf_counter_ns() - started
        self.breakdown.dm_ns = self.engine.dm_ns - dm_before
        return QueryResult(rows, digest.hexdigest(), self.breakdown, self.scans)

    def _run(self, node: PlanNode) -> List[Row]:
        """Materialize node; charge its exclusive time to its operator kind"""
        started = time.perf_counter_ns()
        if isinstance(node, SeqScan):
            rows, children_ns = self._scan(node), 0
        elif isinstance(node, Aggregate):
            child, children_ns = self._timed_child(node.child)
            rows = [self._aggregate(node, child)]
        elif isinstance(node, Sort):
            child, children_ns = self._timed_child(node.child)
            idx = node.child.schema().index(node.column)
            # sorted() is stable: ties keep scan order
            rows = sorted(child, key=lambda r: r[idx])
        elif isinstance(node, HashJoin):
            build, build_ns = self._timed_child(node.build)
            probe, probe_ns = self._timed_child(node.probe)
            children_ns = build_ns + probe_ns
            rows = self._hash_join(node, build, probe)
        else:
            raise PlanInvalid(f"unknown operator {type(node).__name__}")
        self.breakdown.operator_ns[node.kind] += time.perf_counter_ns() - started - children_ns
        return rows

    def _timed_child(self, node: PlanNode):
        started = time.perf_counter_ns()
        rows = self._run(node)
        return rows, time.perf_counter_ns() - started

    def _scan(self, node: SeqScan) -> List[Row]:
        stats = self.scans.setdefault(node.rel, ScanStats())
        return list(seq_scan(node.rel, self.engine, self.prefetch, node.predicate,
                             region_id=self.region_ids.get(node.rel, 0), meter=self.meter,
                             cancel=self.cancel, stride=self.stride, stats=stats))

    @staticmethod
    def _aggregate(node: Aggregate, rows: List[Row]) -> Row:
        func = AggFunc(node.func)
        if func is AggFunc.COUNT:
            return (len(rows),)
        idx = node.child.schema().index(node.column)
        # Python ints are unbounded, so the 128-bit accumulator never wraps
        total = sum(r[idx] for r in rows)
        if func is AggFunc.SUM:
            return (total,)
        return (Fraction(total, len(rows)) if rows else Fraction(0),)

    @staticmethod
    def _hash_join(node: HashJoin, build: List[Row], probe: List[Row]) -> List[Row]:
        build_idx = node.build.schema().index(node.key)
        probe_idx = node.probe.schema().index(node.key)
        table: Dict[object, List[Row]] = {}
        for row in build:
            table.setdefault(row[build_idx], []).append(row)
        out = []
        for row in probe:
            for match in table.get(row[probe_idx], ()):
                out.append(row + match)
        return out
