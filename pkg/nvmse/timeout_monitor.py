"""
TimeoutMonitor - Watches one benchmark cell at a time and cancels it when
it runs past its budget
"""
import logging
import threading
import time
from typing import Any, Callable, Dict, Optional

logger = logging.getLogger(__name__)


class CellWatchdog:
    """
    Per-cell timer with cooperative cancellation.

    start_cell() hands back an Event; the executor polls it between pages and
    raises QueryCancelled once it is set. The optional callback sees the cell
    description after the timeout fired.
    """

    def __init__(self, timeout_s: float, timeout_callback: Optional[Callable[[Dict[str, Any]], None]] = None):
        self.timeout_s = timeout_s
        self.timeout_callback = timeout_callback
        self.current_timer: Optional[threading.Timer] = None
        self.current_cell: Optional[Dict[str, Any]] = None
        self.cancel_event = threading.Event()
        self.timeouts = 0
        self.lock = threading.Lock()

    def start_cell(self, cell: Dict[str, Any]) -> threading.Event:
        with self.lock:
            if self.current_timer:
                self.current_timer.cancel()
            self.cancel_event = threading.Event()
            self.current_cell = dict(cell, start_time=time.monotonic())
            # timeout 0 means unlimited
            if self.timeout_s > 0:
                self.current_timer = threading.Timer(self.timeout_s, self._handle_timeout)
                self.current_timer.daemon = True
                self.current_timer.start()
            return self.cancel_event

    def finish_cell(self):
        with self.lock:
            if self.current_timer:
                self.current_timer.cancel()
                self.current_timer = None
            self.current_cell = None

    def _handle_timeout(self):
        with self.lock:
            if not self.current_cell:
                return
            elapsed = time.monotonic() - self.current_cell["start_time"]
            logger.warning("cell %s exceeded %.1fs (elapsed %.1fs), cancelling",
                           self.current_cell.get("name", "?"), self.timeout_s, elapsed)
            self.cancel_event.set()
            self.timeouts += 1
            cell = self.current_cell
            self.current_cell = None
            self.current_timer = None
        if self.timeout_callback:
            self.timeout_callback(cell)

    def shutdown(self):
        self.finish_cell()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
