"""
PageFormat - Bit-exact page layout, tuple encoding and page builder

Page layout (page_size bytes, little-endian):
  [0:4]    magic        b"NVPG"
  [4:12]   checksum     uint64, FNV-1a 64 over bytes [16:page_size)
  [12:14]  tuple_count  uint16
  [14:16]  free_offset  uint16, first unused byte counted from page start
  [16 ...] tuples       uint16 length prefix + body, packed from the header end

Tuple body:
  key int64 | quantity int64 | price_cents int64 | ship_date int64 (ordinal) | comment
"""
import struct
from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Sequence, Tuple

import numpy as np

from errors import BadChecksum, BadMagic, PageOverflow, TruncatedTuple, TupleNotFound
from storage.fnv import Buffer, as_u8, fnv1a64

MAGIC = b"NVPG"
HEADER = struct.Struct("<4sQHH")
HEADER_SIZE = HEADER.size
LENGTH_PREFIX = struct.Struct("<H")
FIXED_COLUMNS = struct.Struct("<qqqq")

DEFAULT_PAGE_SIZE = 8192
MIN_PAGE_SIZE = 512
# free_offset is 16 bits wide, so a page must stay addressable by it
MAX_PAGE_SIZE = 32768

COLUMNS = ("key", "quantity", "price_cents", "ship_date", "comment")
INT_COLUMNS = COLUMNS[:4]


@dataclass(frozen=True)
class HeapTuple:
    """One lineitem-like row"""
    key: int
    quantity: int
    price_cents: int
    ship_date: int
    comment: bytes = b""

    def encode(self) -> bytes:
        return FIXED_COLUMNS.pack(self.key, self.quantity, self.price_cents, self.ship_date) + self.comment

    @property
    def length(self) -> int:
        return FIXED_COLUMNS.size + len(self.comment)

    @classmethod
    def decode(cls, body: bytes) -> "HeapTuple":
        if len(body) < FIXED_COLUMNS.size:
            raise TruncatedTuple(f"tuple body of {len(body)} bytes is shorter than its fixed columns")
        key, quantity, price, ship_date = FIXED_COLUMNS.unpack_from(body, 0)
        return cls(key, quantity, price, ship_date, bytes(body[FIXED_COLUMNS.size:]))


class PageHeader(NamedTuple):
    magic: bytes
    checksum: int
    tuple_count: int
    free_offset: int


def validate_page_size(page_size: int) -> int:
    if page_size < MIN_PAGE_SIZE or page_size > MAX_PAGE_SIZE or page_size & (page_size - 1):
        raise ValueError(
            f"page_size must be a power of two in [{MIN_PAGE_SIZE}, {MAX_PAGE_SIZE}], got {page_size}"
        )
    return page_size


def encode_page(tuples: Sequence[HeapTuple], page_size: int = DEFAULT_PAGE_SIZE) -> bytes:
    """Pack tuples into exactly page_size bytes with a valid header"""
    body = b"".join(LENGTH_PREFIX.pack(t.length) + t.encode() for t in tuples)
    free_offset = HEADER_SIZE + len(body)
    if free_offset > page_size:
        raise PageOverflow(f"{len(tuples)} tuples need {free_offset} bytes, page holds {page_size}")

    page = bytearray(page_size)
    page[HEADER_SIZE:free_offset] = body
    checksum = fnv1a64(memoryview(page)[HEADER_SIZE:])
    HEADER.pack_into(page, 0, MAGIC, checksum, len(tuples), free_offset)
    return bytes(page)


def read_header(buf: Buffer) -> PageHeader:
    return PageHeader(*HEADER.unpack_from(memoryview(buf), 0))


def verify_page(buf: Buffer, page_size: int = None) -> PageHeader:
    """Check length, magic, bounds and checksum; returns the parsed header"""
    data = as_u8(buf)
    size = data.shape[0]
    if page_size is not None and size != page_size:
        raise TruncatedTuple(f"page is {size} bytes, expected {page_size}")
    if size < HEADER_SIZE:
        raise TruncatedTuple(f"page of {size} bytes has no room for a header")

    header = read_header(data)
    if header.magic != MAGIC:
        raise BadMagic(f"bad page magic {header.magic!r}")
    if not HEADER_SIZE <= header.free_offset <= size:
        raise TruncatedTuple(f"free_offset {header.free_offset} outside page")
    if fnv1a64(data[HEADER_SIZE:]) != header.checksum:
        raise BadChecksum(f"checksum mismatch (stored {header.checksum:016x})")
    return header


def iter_tuple_spans(buf: Buffer, header: PageHeader = None) -> Iterator[Tuple[int, int, int]]:
    """Yield (slot_index, body_offset, body_length) for every tuple on the page"""
    view = memoryview(as_u8(buf))
    if header is None:
        header = read_header(view)
    offset = HEADER_SIZE
    for slot_index in range(header.tuple_count):
        if offset + LENGTH_PREFIX.size > header.free_offset:
            raise TruncatedTuple(f"length prefix of tuple {slot_index} runs past free_offset")
        (length,) = LENGTH_PREFIX.unpack_from(view, offset)
        body = offset + LENGTH_PREFIX.size
        if body + length > header.free_offset or length < FIXED_COLUMNS.size:
            raise TruncatedTuple(f"tuple {slot_index} ({length} bytes) runs past free_offset")
        yield slot_index, body, length
        offset = body + length


def iter_tuples(buf: Buffer, verify: bool = True) -> Iterator[HeapTuple]:
    header = verify_page(buf) if verify else read_header(buf)
    view = memoryview(as_u8(buf))
    for _, offset, length in iter_tuple_spans(view, header):
        key, quantity, price, ship_date = FIXED_COLUMNS.unpack_from(view, offset)
        comment = view[offset + FIXED_COLUMNS.size:offset + length].tobytes()
        yield HeapTuple(key, quantity, price, ship_date, comment)


def decode_page(buf: Buffer, page_size: int = None) -> List[HeapTuple]:
    verify_page(buf, page_size)
    return list(iter_tuples(buf, verify=False))


def locate_tuple(buf: Buffer, slot_index: int) -> Tuple[int, int]:
    """Byte offset and length of a tuple body, for in-place updates"""
    header = read_header(buf)
    if not 0 <= slot_index < header.tuple_count:
        raise TupleNotFound(f"slot {slot_index} not on page ({header.tuple_count} tuples)")
    for index, offset, length in iter_tuple_spans(buf, header):
        if index == slot_index:
            return offset, length
    raise TupleNotFound(f"slot {slot_index} not on page")


def restamp_checksum(frame: np.ndarray):
    """Recompute the stored checksum after the payload of a writable frame changed"""
    checksum = fnv1a64(frame[HEADER_SIZE:])
    frame[4:12] = np.frombuffer(struct.pack("<Q", checksum), dtype=np.uint8)


class PageBuilder:
    """Accumulates tuples until the next one would overflow the page"""

    def __init__(self, page_size: int = DEFAULT_PAGE_SIZE):
        self.page_size = validate_page_size(page_size)
        self.tuples: List[HeapTuple] = []
        self.used = HEADER_SIZE

    def fits(self, t: HeapTuple) -> bool:
        return self.used + LENGTH_PREFIX.size + t.length <= self.page_size

    def add(self, t: HeapTuple) -> bool:
        if not self.fits(t):
            return False
        self.tuples.append(t)
        self.used += LENGTH_PREFIX.size + t.length
        return True

    def finish(self) -> bytes:
        page = encode_page(self.tuples, self.page_size)
        self.tuples = []
        self.used = HEADER_SIZE
        return page

    def __len__(self):
        return len(self.tuples)
