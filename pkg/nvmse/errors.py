"""
Errors - Exception hierarchy shared by every layer of the storage lab
"""


class NvmseError(Exception):
    """Base class for all storage-lab errors"""


# --- storage format ---

class PageOverflow(NvmseError):
    """Tuples do not fit into a single page; the caller must split them"""


class BadMagic(NvmseError):
    pass


class BadChecksum(NvmseError):
    pass


class TruncatedTuple(NvmseError):
    pass


class DatasetExistsError(NvmseError):
    """Refusing to overwrite an existing dataset directory"""


# --- device ---

class DeviceIoError(NvmseError):
    pass


class Misaligned(NvmseError):
    pass


class OutOfRange(NvmseError):
    pass


class ReadOnlyDevice(NvmseError):
    pass


class MappingDisabled(NvmseError):
    pass


# --- buffer manager ---

class PoolExhausted(NvmseError):
    """Every buffer slot is pinned"""


class SlotNotPinned(NvmseError):
    pass


class DirtySlot(NvmseError):
    """A dirty slot cannot be redirected into the mapped region"""


class DirtyRedirected(NvmseError):
    """A redirected slot must be copied back before it is marked dirty"""


class NotRedirected(NvmseError):
    pass


# --- engines ---

class StalePageRef(NvmseError):
    """The slot behind a page reference was unpinned or reassigned"""


class TupleNotFound(NvmseError):
    pass


class LengthMismatch(NvmseError):
    pass


# --- prefetch ---

class InvalidCore(NvmseError):
    pass


class InvalidCapacity(NvmseError):
    pass


class SpawnFailure(NvmseError):
    pass


class PoolStopped(NvmseError):
    pass


# --- query / cli ---

class PlanInvalid(NvmseError):
    pass


class QueryCancelled(NvmseError):
    """Raised inside a scan when the cell watchdog fires"""


class ConfigError(NvmseError):
    pass


class DigestMismatch(NvmseError):
    """Repetitions of the same run disagree on the result digest"""


class ReportFormatError(NvmseError):
    pass
