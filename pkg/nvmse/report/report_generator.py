"""
ReportGenerator - CSV results, JSON run reports and text tables comparing
engines, storage and prefetch schemes
"""
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import pandas as pd
from rich.console import Console
from rich.table import Table

from errors import ReportFormatError
from query.runner import CSV_COLUMNS, RunReport

logger = logging.getLogger(__name__)

BASELINE = ("base", "nvm_emu", "none")
CELL = ["engine", "storage", "scheme"]
BREAKDOWN_PARTS = ("SeqScan", "Sort", "Join", "Aggregate", "other")

PathLike = Union[str, Path]


def sidecar_path(csv_path: PathLike, query: str, engine: str, storage: str, scheme: str) -> Path:
    csv_path = Path(csv_path)
    return csv_path.parent / f"{csv_path.stem}_{query}_{engine}_{storage}_{scheme}.json"


def check_header(csv_path: PathLike):
    try:
        columns = list(pd.read_csv(csv_path, nrows=0).columns)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise ReportFormatError(f"{csv_path}: {e}") from None
    if columns != list(CSV_COLUMNS):
        raise ReportFormatError(f"{csv_path}: unexpected header {columns}")


def append_csv(csv_path: PathLike, reports: Iterable[RunReport]) -> int:
    """Append one row per report; the header is written with the first row"""
    csv_path = Path(csv_path)
    rows = [r.to_csv_row() for r in reports]
    exists = csv_path.exists() and csv_path.stat().st_size > 0
    if exists:
        check_header(csv_path)
    else:
        csv_path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=list(CSV_COLUMNS))
    frame.to_csv(csv_path, mode="a" if exists else "w", header=not exists, index=False, encoding="utf-8")
    return len(rows)


def load_csv(csv_path: PathLike) -> pd.DataFrame:
    if not Path(csv_path).exists():
        raise ReportFormatError(f"{csv_path} does not exist")
    check_header(csv_path)
    return pd.read_csv(csv_path, dtype={"result_digest": str, "query": str, "engine": str,
                                        "scheme": str, "storage": str})


def save_json_report(csv_path: PathLike, reports: Sequence[RunReport], metadata: Optional[Dict[str, Any]] = None) -> Path:
    """One JSON document per (query, engine, storage, scheme) next to the CSV"""
    first = reports[0]
    path = sidecar_path(csv_path, first.query, first.engine, first.storage, first.scheme)
    doc = {
        "metadata": dict(metadata or {}, query=first.query, engine=first.engine,
                         storage=first.storage, scheme=first.scheme),
        "results": [r.to_dict() for r in reports],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
    return path


def load_json_reports(csv_path: PathLike) -> List[Dict[str, Any]]:
    csv_path = Path(csv_path)
    docs = []
    for path in sorted(csv_path.parent.glob(f"{csv_path.stem}_*.json")):
        with open(path, "r") as f:
            docs.append(json.load(f))
    return docs


class ReportGenerator:
    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console(markup=False, highlight=False, soft_wrap=True)

    @staticmethod
    def summary(df: pd.DataFrame) -> pd.DataFrame:
        """Median over repetitions for every (query, engine, storage, scheme) cell"""
        grouped = df.groupby(["query", *CELL], sort=True)
        out = grouped.agg(
            reps=("rep", "count"),
            wall_ns=("wall_ns", "median"),
            dm_ns=("dm_ns", "median"),
            dm_fraction=("dm_fraction", "median"),
            copies=("copies", "median"),
            buf_misses=("buf_misses", "median"),
            prefetch_completed=("prefetch_completed", "median"),
            compute_minor_faults=("compute_minor_faults", "median"),
            digests=("result_digest", "nunique"),
        )
        return out.reset_index()

    @staticmethod
    def normalized(df: pd.DataFrame) -> pd.DataFrame:
        """Median wall time per cell divided by the (base, nvm_emu, none) cell of the same query"""
        medians = df.groupby(["query", *CELL])["wall_ns"].median()
        table = medians.unstack("query")
        if BASELINE not in table.index:
            raise ReportFormatError("results hold no (base, nvm_emu, none) baseline cell")
        return table.div(table.loc[BASELINE], axis="columns")

    @staticmethod
    def digest_mismatches(df: pd.DataFrame) -> Dict[str, List[str]]:
        """Queries whose result digest differs anywhere in the results"""
        digests = df.groupby("query")["result_digest"].unique()
        return {q: sorted(d) for q, d in digests.items() if len(d) > 1}

    def render_summary(self, df: pd.DataFrame, title: str = "📊 Results (median of reps)"):
        summary = self.summary(df)
        table = Table(title=title, show_header=True, header_style="bold magenta")
        for column, style in (("query", "cyan"), ("engine", "yellow"), ("storage", "green"), ("scheme", "blue")):
            table.add_column(column, style=style, no_wrap=True)
        for column in ("reps", "wall ms", "dm ms", "dm %", "copies", "misses", "prefetched", "minor faults"):
            table.add_column(column, justify="right")
        for row in summary.itertuples(index=False):
            faults = "n/a" if row.compute_minor_faults < 0 else f"{row.compute_minor_faults:.0f}"
            table.add_row(row.query, row.engine, row.storage, row.scheme, str(row.reps),
                          f"{row.wall_ns / 1e6:.2f}", f"{row.dm_ns / 1e6:.2f}",
                          f"{100 * row.dm_fraction:.1f}", f"{row.copies:.0f}", f"{row.buf_misses:.0f}",
                          f"{row.prefetch_completed:.0f}", faults)
        self.console.print(table)

    def render_normalized(self, df: pd.DataFrame):
        normalized = self.normalized(df)
        table = Table(title="📈 Wall time normalized to (base, nvm_emu, none)", show_header=True,
                      header_style="bold magenta")
        for column in CELL:
            table.add_column(column, no_wrap=True)
        for query in normalized.columns:
            table.add_column(query, justify="right")
        for cell, values in normalized.iterrows():
            table.add_row(*cell, *("-" if pd.isna(v) else f"{v:.3f}" for v in values))
        self.console.print(table)

    def render_breakdown(self, docs: Iterable[Dict[str, Any]]):
        """Per-operator share and data movement, averaged over each document's reps"""
        table = Table(title="⏱️  Time breakdown (% of execution)", show_header=True, header_style="bold magenta")
        for column in ("query", *CELL):
            table.add_column(column, no_wrap=True)
        for column in (*BREAKDOWN_PARTS, "DM", "kernel"):
            table.add_column(column, justify="right")

        for doc in docs:
            meta, results = doc.get("metadata", {}), doc.get("results", [])
            if not results:
                continue
            pct = pd.DataFrame([r["operator_pct"] for r in results]).mean()
            dm = 100 * pd.Series([r["dm_fraction"] for r in results]).mean()
            kernel = [r.get("kernel_fraction") for r in results if r.get("kernel_fraction") is not None]
            table.add_row(meta.get("query", "?"), meta.get("engine", "?"), meta.get("storage", "?"),
                          meta.get("scheme", "?"),
                          *(f"{pct.get(part, 0.0):.1f}" for part in BREAKDOWN_PARTS),
                          f"{dm:.1f}", f"{100 * sum(kernel) / len(kernel):.1f}" if kernel else "n/a")
        self.console.print(table)

    def generate(self, csv_path: PathLike) -> pd.DataFrame:
        """Re-render everything a results CSV and its JSON reports hold"""
        df = load_csv(csv_path)
        if df.empty:
            self.console.print(f"⚠️  Warning: {csv_path} holds no rows")
            return df
        self.render_summary(df)
        cells = set(map(tuple, df[CELL].drop_duplicates().itertuples(index=False)))
        if BASELINE in cells:
            self.render_normalized(df)
        else:
            logger.info("no baseline cell in %s, skipping the normalized table", os.fspath(csv_path))
        docs = load_json_reports(csv_path)
        if docs:
            self.render_breakdown(docs)
        for query, digests in self.digest_mismatches(df).items():
            self.console.print(f"❌ Error: {query} produced {len(digests)} different result digests")
        return df
