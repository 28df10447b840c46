"""
DatasetGenerator - Deterministic lineitem-like heap files and their catalog
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import date
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterator, Union

from errors import DatasetExistsError, DeviceIoError
from storage.page_format import DEFAULT_PAGE_SIZE, HeapTuple, PageBuilder, validate_page_size

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
LINEITEM_ROWS_PER_SF = 6_000_000
ORDERS_ROWS_PER_SF = 1_500_000
CATALOG_FILE = "catalog.json"

# TPC-H value domains
MAX_QUANTITY = 50
PART_PRICE_MIN_CENTS = 90_000
PART_PRICE_SPAN_CENTS = 120_001
SHIP_DATE_BASE = date(1992, 1, 2).toordinal()
SHIP_DATE_SPAN = 2526
COMMENT_MIN, COMMENT_SPAN = 10, 34

# Each random byte maps onto a lowercase letter or a space
_ALPHABET = b"abcdefghijklmnopqrstuvwxyz "
_COMMENT_TABLE = bytes(_ALPHABET[b % len(_ALPHABET)] for b in range(256))

# Salt separating the orders stream from the lineitem stream
_ORDERS_STREAM = 0x6F72646572730001


class SplitMix64:
    """SplitMix64 PRNG; fixed so golden files are portable"""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        return self.next() % bound

    def text(self, length: int) -> bytes:
        chunks = []
        for _ in range(0, length, 8):
            chunks.append(self.next().to_bytes(8, "little"))
        return b"".join(chunks)[:length].translate(_COMMENT_TABLE)


@dataclass(frozen=True)
class ScaleSpec:
    scale_factor: Fraction

    @classmethod
    def of(cls, value: Union[str, float, int, Fraction]) -> "ScaleSpec":
        sf = value if isinstance(value, Fraction) else Fraction(str(value))
        if sf < 0:
            raise ValueError(f"scale factor must be >= 0, got {value}")
        return cls(sf)

    @property
    def rows(self) -> int:
        return round(self.scale_factor * LINEITEM_ROWS_PER_SF)

    @property
    def orders_rows(self) -> int:
        return round(self.scale_factor * ORDERS_ROWS_PER_SF)

    def __str__(self):
        return str(float(self.scale_factor)) if self.scale_factor.denominator != 1 else str(self.scale_factor.numerator)


@dataclass
class RelationInfo:
    name: str
    file: str
    page_size: int
    page_count: int
    row_count: int
    seed: int
    key_offset: int = 0


@dataclass
class Catalog:
    scale_factor: str
    seed: int
    page_size: int
    relations: Dict[str, RelationInfo] = field(default_factory=dict)
    root: Path = None

    def path_of(self, rel: str) -> Path:
        return Path(self.root) / self.relations[rel].file

    def total_pages(self) -> int:
        return sum(r.page_count for r in self.relations.values())

    def check(self):
        """page_count x page_size must equal the heap file length"""
        for info in self.relations.values():
            length = self.path_of(info.name).stat().st_size
            if length != info.page_count * info.page_size:
                raise DeviceIoError(
                    f"{info.file}: {length} bytes but catalog says {info.page_count} pages of {info.page_size}"
                )

    def save(self):
        doc = {k: v for k, v in asdict(self).items() if k != "root"}
        with open(Path(self.root) / CATALOG_FILE, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2)

    @classmethod
    def load(cls, root: Path) -> "Catalog":
        with open(Path(root) / CATALOG_FILE, "r", encoding="utf-8") as f:
            doc = json.load(f)
        relations = {name: RelationInfo(**info) for name, info in doc.pop("relations").items()}
        return cls(relations=relations, root=Path(root), **doc)


def generate_rows(seed: int, rows: int, key_offset: int = 0) -> Iterator[HeapTuple]:
    """The row stream of one relation; keys strictly increase from key_offset + 1"""
    rng = SplitMix64(seed)
    for i in range(rows):
        quantity = 1 + rng.below(MAX_QUANTITY)
        price = quantity * (PART_PRICE_MIN_CENTS + rng.below(PART_PRICE_SPAN_CENTS))
        ship_date = SHIP_DATE_BASE + rng.below(SHIP_DATE_SPAN)
        comment = rng.text(COMMENT_MIN + rng.below(COMMENT_SPAN))
        yield HeapTuple(key_offset + i + 1, quantity, price, ship_date, comment)


def write_heap_file(path: Path, rows: Iterator[HeapTuple], page_size: int) -> RelationInfo:
    """Pack rows into pages (no tuple spans pages) and write them back to back"""
    builder = PageBuilder(page_size)
    page_count = row_count = 0
    try:
        with open(path, "wb") as f:
            for row in rows:
                if not builder.add(row):
                    f.write(builder.finish())
                    page_count += 1
                    builder.add(row)
                row_count += 1
            if len(builder):
                f.write(builder.finish())
                page_count += 1
    except OSError as e:
        raise DeviceIoError(f"writing {path}: {e}") from e
    return RelationInfo(path.stem, path.name, page_size, page_count, row_count, seed=0)


def orders_seed(seed: int) -> int:
    return SplitMix64(seed ^ _ORDERS_STREAM).next()


def orders_key_offset(spec: ScaleSpec) -> int:
    """Half of the orders key range falls inside the lineitem key range"""
    return max(spec.rows - spec.orders_rows // 2, 0)


def generate_dataset(seed: int, spec: ScaleSpec, page_size: int = DEFAULT_PAGE_SIZE,
                     out_dir: Union[str, Path] = "data", overwrite: bool = False) -> Catalog:
    """Write lineitem.heap, orders.heap and catalog.json into out_dir"""
    validate_page_size(page_size)
    out_dir = Path(out_dir)
    if (out_dir / CATALOG_FILE).exists() and not overwrite:
        raise DatasetExistsError(f"{out_dir} already holds a dataset")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DeviceIoError(f"creating {out_dir}: {e}") from e

    catalog = Catalog(scale_factor=str(spec.scale_factor), seed=seed, page_size=page_size, root=out_dir)

    plan = [
        ("lineitem", seed, spec.rows, 0),
        ("orders", orders_seed(seed), spec.orders_rows, orders_key_offset(spec)),
    ]
    for name, rel_seed, rows, key_offset in plan:
        info = write_heap_file(out_dir / f"{name}.heap", generate_rows(rel_seed, rows, key_offset), page_size)
        info.seed, info.key_offset = rel_seed, key_offset
        catalog.relations[name] = info
        logger.debug("generated %s: %d rows in %d pages", name, info.row_count, info.page_count)

    try:
        catalog.save()
    except OSError as e:
        raise DeviceIoError(f"writing catalog: {e}") from e
    return catalog
