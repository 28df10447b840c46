import time

from timeout_monitor import CellWatchdog


def test_timeout_sets_cancel_event():
    seen = []
    with CellWatchdog(0.05, timeout_callback=seen.append) as watchdog:
        cancel = watchdog.start_cell({"name": "slow"})
        assert cancel.wait(2.0)
    assert watchdog.timeouts == 1
    assert seen[0]["name"] == "slow"


def test_finished_cell_is_not_cancelled():
    with CellWatchdog(0.05) as watchdog:
        cancel = watchdog.start_cell({"name": "fast"})
        watchdog.finish_cell()
        time.sleep(0.1)
    assert not cancel.is_set()
    assert watchdog.timeouts == 0


def test_zero_timeout_is_unlimited():
    with CellWatchdog(0) as watchdog:
        cancel = watchdog.start_cell({"name": "unbounded"})
        assert watchdog.current_timer is None
        assert not cancel.wait(0.05)


def test_each_cell_gets_a_fresh_event():
    with CellWatchdog(0.02) as watchdog:
        first = watchdog.start_cell({"name": "a"})
        assert first.wait(2.0)
        second = watchdog.start_cell({"name": "b"})
        watchdog.finish_cell()
    assert first is not second
    assert not second.is_set()
