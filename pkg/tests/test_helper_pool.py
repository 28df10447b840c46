import random
import time

import numpy as np
import pytest

from errors import InvalidCapacity, OutOfRange, PoolStopped
from prefetch.helper_pool import RegionRegistry, _touch, create_pool, touch_region
from prefetch.job_queue import EnqueueResult, PrefetchJob
from prefetch.topology import MappingScheme

HELPER_SCHEMES = [MappingScheme.M1, MappingScheme.M2, MappingScheme.M3]


@pytest.fixture
def registry(region):
    registry = RegionRegistry()
    registry.register(0, region)
    return registry


class CompletionLog:
    """Per-helper completion counts indexed by job id"""

    def __init__(self, jobs: int, helpers: int = 2):
        self.counts = np.zeros((helpers, jobs), dtype=np.int64)

    def __call__(self, helper_index: int, job: PrefetchJob):
        self.counts[helper_index, job.job_id] += 1


def _wait_until(predicate, timeout=5.0):
    deadline = time.monotonic() + timeout
    while not predicate():
        if time.monotonic() > deadline:
            return False
        time.sleep(0.001)
    return True


@pytest.mark.parametrize("length, touches", [(8192, 128), (1, 1), (65, 2), (64, 1)])
def test_touch_counts(region, length, touches):
    assert touch_region(region, 0, length, 64) == touches


@pytest.mark.parametrize("base, length", [(0, 0), (-1, 10), (4 * 8192 - 10, 11)])
def test_touch_out_of_range(region, base, length):
    with pytest.raises(OutOfRange):
        touch_region(region, base, length)


def test_registry_unknown_region(registry):
    assert 0 in registry
    with pytest.raises(OutOfRange):
        registry.get(7)


def test_scheme_none_is_counted_noop(registry):
    pool = create_pool(MappingScheme.NONE, registry)
    assert pool.helpers == [] and pool.queues == []
    assert pool.enqueue(PrefetchJob(0, 0, 8192, 0)) is EnqueueResult.ACCEPTED
    stats = pool.drain_and_stop()
    assert (stats.enqueued, stats.accepted, stats.completed) == (1, 1, 0)


@pytest.mark.parametrize("capacity", [0, 6])
def test_invalid_capacity(registry, capacity):
    with pytest.raises(InvalidCapacity):
        create_pool(MappingScheme.M1, registry, capacity)


def test_m3_runs_two_helpers_on_two_queues(registry):
    log = CompletionLog(1)
    with create_pool(MappingScheme.M3, registry, on_complete=log) as pool:
        assert len(pool.helpers) == 2
        assert len(pool.queues) == 2
        assert pool.enqueue(PrefetchJob(0, 0, 8192, 0)) is EnqueueResult.ACCEPTED
    stats = pool.stats()
    assert stats.completed_per_helper == (1, 1)
    assert log.counts[:, 0].tolist() == [1, 1]


def test_empty_queue_accepts_and_completes(registry):
    pool = create_pool(MappingScheme.M1, registry)
    assert pool.enqueue(PrefetchJob(0, 8192, 8192, 0)) is EnqueueResult.ACCEPTED
    assert _wait_until(lambda: pool.stats().completed == 1)
    assert pool.helpers[0].touches == 128
    pool.drain_and_stop()


def test_full_queue_rejects_while_suspended(registry):
    pool = create_pool(MappingScheme.M1, registry, capacity=4)
    pool.suspend()
    results = [pool.enqueue(PrefetchJob(0, i * 64, 64, i)) for i in range(6)]
    # the helper may already hold one job at the gate
    assert results.count(EnqueueResult.ACCEPTED) in (4, 5)
    assert results[-1] is EnqueueResult.REJECTED
    stats = pool.drain_and_stop()
    assert stats.rejected == 6 - stats.accepted
    assert stats.completed == stats.accepted


def test_enqueue_validates_range(registry):
    with create_pool(MappingScheme.M2, registry) as pool:
        with pytest.raises(OutOfRange):
            pool.enqueue(PrefetchJob(0, 4 * 8192, 64))
        with pytest.raises(OutOfRange):
            pool.enqueue(PrefetchJob(3, 0, 64))


def test_enqueue_after_stop(registry):
    pool = create_pool(MappingScheme.M1, registry)
    pool.drain_and_stop()
    with pytest.raises(PoolStopped):
        pool.enqueue(PrefetchJob(0, 0, 64))


@pytest.mark.parametrize("scheme", HELPER_SCHEMES)
def test_thousand_jobs_complete_exactly_once(registry, scheme):
    log = CompletionLog(1000)
    pool = create_pool(scheme, registry, capacity=1024, on_complete=log)
    for i in range(1000):
        assert pool.enqueue(PrefetchJob(0, (i % 4) * 8192, 8192, i)) is EnqueueResult.ACCEPTED
    stats = pool.drain_and_stop()
    assert stats.accepted == 1000
    if scheme is MappingScheme.M3:
        assert stats.completed_per_helper == (1000, 1000)
        assert (log.counts == 1).all()
    else:
        assert stats.completed == 1000
        assert (log.counts.sum(axis=0) == 1).all()


def test_drain_is_idempotent(registry):
    pool = create_pool(MappingScheme.M3, registry)
    for i in range(10):
        pool.enqueue(PrefetchJob(0, 0, 64, i))
    first = pool.drain_and_stop()
    assert pool.drain_and_stop() == first
    assert all(not h.is_alive() for h in pool.helpers)


def test_multiple_helpers_share_one_queue(registry):
    log = CompletionLog(5000, helpers=3)
    pool = create_pool(MappingScheme.M1, registry, capacity=64, helpers=3, on_complete=log)
    assert len(pool.helpers) == 3 and len(pool.queues) == 1
    accepted = np.zeros(5000, dtype=np.int64)
    for i in range(5000):
        if pool.enqueue(PrefetchJob(0, (i % 512) * 64, 64, i)) is EnqueueResult.ACCEPTED:
            accepted[i] = 1
    stats = pool.drain_and_stop()
    assert np.array_equal(log.counts.sum(axis=0), accepted)
    assert stats.completed == stats.accepted == accepted.sum()


def stress(registry, scheme, jobs, seed):
    """Mixed enqueues against helpers that stall at random"""
    rng = random.Random(seed)
    stall_rng = random.Random(seed + 1)

    def stall(helper_index, job):
        if stall_rng.random() < 0.001:
            time.sleep(0.0002)

    log = CompletionLog(jobs)
    pool = create_pool(scheme, registry, capacity=rng.choice([8, 64, 256]), stride=512,
                       on_complete=log, stall_hook=stall)
    accepted = np.zeros(jobs, dtype=np.int64)
    for i in range(jobs):
        length = rng.choice([64, 4096, 8192])
        if pool.enqueue(PrefetchJob(0, rng.randrange(4) * 8192, length, i)) is EnqueueResult.ACCEPTED:
            accepted[i] = 1
    return pool.drain_and_stop(), log, accepted


def check_stress(scheme, stats, log, accepted):
    assert stats.accepted == accepted.sum()
    assert stats.accepted + stats.rejected == len(accepted)
    if scheme is MappingScheme.M3:
        assert np.array_equal(log.counts[0], accepted)
        assert np.array_equal(log.counts[1], accepted)
        assert stats.completed == 2 * stats.accepted
    else:
        assert np.array_equal(log.counts.sum(axis=0), accepted)
        assert stats.completed == stats.accepted


@pytest.mark.parametrize("scheme", HELPER_SCHEMES)
def test_stress_exactly_once(registry, scheme):
    stats, log, accepted = stress(registry, scheme, 20_000, seed=3)
    check_stress(scheme, stats, log, accepted)


def test_touch_kernel_reads_every_stride_and_the_last_byte(region):
    window = region[:130]
    expected = int(window[0]) + int(window[64]) + int(window[128]) + int(window[129])
    assert int(_touch(window, 64)) == expected


def _fail_on(helper_index):
    def hook(index, job):
        if index == helper_index:
            raise ValueError(f"job {job.job_id} rejected")
    return hook


def test_helper_error_is_reported_by_drain(registry):
    pool = create_pool(MappingScheme.M1, registry, stall_hook=_fail_on(0))
    pool.enqueue(PrefetchJob(0, 0, 64, 0))
    stats = pool.drain_and_stop()
    assert stats.completed == 0
    assert len(stats.errors) == 1
    assert stats.errors[0].startswith("prefetch-helper-0: ValueError")
    assert stats.to_dict()["errors"] == list(stats.errors)


def test_tandem_stops_forwarding_when_second_stage_dies(registry):
    pool = create_pool(MappingScheme.M3, registry, capacity=4, stall_hook=_fail_on(1))
    accepted = 0
    deadline = time.monotonic() + 10.0
    while accepted < 40 and time.monotonic() < deadline:
        if pool.enqueue(PrefetchJob(0, 0, 64, accepted)) is EnqueueResult.ACCEPTED:
            accepted += 1
        else:
            time.sleep(0.001)
    assert accepted == 40
    stats = pool.drain_and_stop()
    assert stats.completed_per_helper[0] == 40
    assert stats.completed_per_helper[1] == 0
    assert [e.split(":")[0] for e in stats.errors] == ["prefetch-helper-1"]
