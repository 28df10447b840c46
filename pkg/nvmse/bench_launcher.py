#!/usr/bin/env python3
"""
BenchLauncher - Main entry point for the NVM storage-engine benchmark

Subcommands:
  gen     generate a seeded dataset and its catalog
  run     run one query (or an update workload) under one configuration
  matrix  run the suite over every storage configuration and prefetch scheme
  report  re-render tables from a results CSV
"""
import argparse
import json
import logging
import statistics
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd
from rich.console import Console
from rich.logging import RichHandler

from bench_config import BenchConfig, load_config, profile_values
from compiler.workload_compiler import WorkloadCompiler, load_compiled
from dataset.dataset_generator import Catalog, ScaleSpec, generate_dataset
from dataset.dataset_loader import DatasetLoader
from device.emulated_device import StorageLabel
from engine.storage_engine import EngineKind
from errors import ConfigError, DatasetExistsError, DigestMismatch, NvmseError
from prefetch.topology import MappingScheme
from query.plans import canned_suite, plan_by_label
from query.runner import RunReport, run_query, run_updates
from report.report_generator import ReportGenerator, append_csv, save_json_report
from timeout_monitor import CellWatchdog

logger = logging.getLogger("nvmse")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_DIGEST = 3

# (engine, storage) pairs of the four storage configurations under comparison
STORAGE_CONFIGS: Tuple[Tuple[EngineKind, StorageLabel], ...] = (
    (EngineKind.BASE, StorageLabel.DISK_EMU),
    (EngineKind.BASE, StorageLabel.NVM_EMU),
    (EngineKind.SE1, StorageLabel.NVM_EMU),
    (EngineKind.SE2, StorageLabel.NVM_EMU),
)

console = Console(markup=False, highlight=False, soft_wrap=True)


class BenchLauncher:
    def __init__(self, args: argparse.Namespace, config: BenchConfig):
        self.args = args
        self.config = config
        self.dataset_loader = DatasetLoader(self._load_json(getattr(args, "dataset_config", None)))

    @staticmethod
    def _load_json(filepath: Optional[str]) -> Optional[Dict[str, Any]]:
        if not filepath or not Path(filepath).exists():
            return None
        with open(filepath, "r") as f:
            return json.load(f)

    def _catalog(self) -> Catalog:
        catalog = self.dataset_loader.load(self.config.data_dir)
        if catalog is None:
            raise NvmseError(f"Dataset '{self.config.data_dir}' not found (run 'gen' first)")
        return catalog

    # --- gen ---

    def gen(self) -> int:
        spec = ScaleSpec.of(self.config.sf)
        console.print(f"📊 Generating dataset: seed={self.config.seed} sf={spec} page_size={self.config.page_size}")
        catalog = generate_dataset(self.config.seed, spec, self.config.page_size, self.args.out,
                                   overwrite=self.args.force)
        lineitem = catalog.relations["lineitem"]
        console.print(f"rows={lineitem.row_count} pages={lineitem.page_count}")
        for info in catalog.relations.values():
            console.print(f"  ✓ {info.name}: rows={info.row_count} pages={info.page_count} ({info.file})")
        console.print(f"✅ Dataset saved to: {self.args.out}")
        return EXIT_OK

    # --- run ---

    def _run_reps(self, config: BenchConfig, catalog: Catalog, watchdog: CellWatchdog,
                  echo: bool = True) -> List[RunReport]:
        plan = plan_by_label(config.query)
        reports = []
        for rep in range(config.reps):
            cancel = watchdog.start_cell({"name": f"{plan.label}/{config.engine.value}/"
                                                  f"{config.storage.value}/{config.scheme.value} rep {rep}"})
            try:
                report = run_query(plan, config, catalog, rep, cancel)
            finally:
                watchdog.finish_cell()
            reports.append(report)
            if echo:
                console.print(
                    f"  ⏱️  {report.query} {report.engine}/{report.storage}/{report.scheme} rep {rep}: "
                    f"wall={report.wall_ns / 1e6:.2f} ms dm={100 * report.dm_fraction:.1f}% "
                    f"copies={report.copies} misses={report.buf_misses} digest={report.result_digest}"
                )
        return reports

    def run(self) -> int:
        catalog = self._catalog()
        if self.args.updates:
            return self._run_updates(catalog)

        config = self.config
        console.print(f"🚀 Running {config.query} on {config.engine.value}/{config.storage.value} "
                      f"prefetch={config.scheme.value} reps={config.reps}")
        with CellWatchdog(config.timeout_s) as watchdog:
            reports = self._run_reps(config, catalog, watchdog)

        append_csv(config.out, reports)
        save_json_report(config.out, reports, {"dataset": str(catalog.root), "sf": catalog.scale_factor})
        console.print(f"✅ Results saved to: {config.out}")

        digests = sorted({r.result_digest for r in reports})
        if len(digests) > 1:
            raise DigestMismatch(f"{config.query} produced {len(digests)} digests across reps: {digests}")
        return EXIT_OK

    def _run_updates(self, catalog: Catalog) -> int:
        config = self.config
        with open(self.args.updates, "r") as f:
            workload = json.load(f)
        console.print(f"📋 Workload: {workload.get('name', 'unnamed_workload')}")

        dataset_name = Path(catalog.root).name
        console.print(f"\n⚙️  Compiling workload for dataset '{dataset_name}'...")
        compiled_dir = WorkloadCompiler(catalog).compile_workload(workload, dataset_name, config.seed)
        console.print(f"✓ Workload compiled to: {compiled_dir}")

        with CellWatchdog(config.timeout_s) as watchdog:
            cancel = watchdog.start_cell({"name": f"updates/{config.engine.value}"})
            try:
                report = run_updates(load_compiled(compiled_dir), config, catalog, cancel)
            finally:
                watchdog.finish_cell()

        console.print(f"✓ {report.applied} updates on {report.engine}/{report.storage}: "
                      f"copybacks={report.copybacks} writebacks={report.writebacks} "
                      f"wall={report.wall_ns / 1e6:.2f} ms")
        for rel, digest in sorted(report.file_digests.items()):
            console.print(f"file_digest[{rel}]={digest}")
        return EXIT_OK

    # --- matrix ---

    def matrix(self) -> int:
        catalog = self._catalog()
        labels = [q.lower() for q in self.args.queries or [p.label for p in canned_suite()]]
        schemes = [MappingScheme(s.lower()) for s in (self.args.schemes or [s.value for s in MappingScheme])]
        cells = [(q, e, s, m) for q in labels for e, s in STORAGE_CONFIGS for m in schemes]
        console.print(f"🚀 Matrix: {len(labels)} queries x {len(STORAGE_CONFIGS)} configurations x "
                      f"{len(schemes)} schemes, {self.config.reps} reps each")

        rows: List[RunReport] = []
        failed = []
        with CellWatchdog(self.config.timeout_s) as watchdog:
            for index, (query, engine, storage, scheme) in enumerate(cells, 1):
                config = replace(self.config, query=query, engine=engine, storage=storage, scheme=scheme)
                name = f"{query} {engine.value}/{storage.value}/{scheme.value}"
                console.print(f"\n{'-' * 80}\n🗄️  Cell: {name} ({index}/{len(cells)})")
                try:
                    reports = self._run_reps(config, catalog, watchdog, echo=self.args.verbose)
                except NvmseError as e:
                    console.print(f"❌ Cell failed: {type(e).__name__}: {e}")
                    failed.append(name)
                    continue
                append_csv(config.out, reports)
                save_json_report(config.out, reports, {"dataset": str(catalog.root), "sf": catalog.scale_factor})
                rows.extend(reports)
                console.print(f"  ✓ median wall={statistics.median([r.wall_ns for r in reports]) / 1e6:.2f} ms "
                              f"digest={reports[0].result_digest}")

        console.print(f"\n✅ Results saved to: {self.config.out}")
        exit_code = EXIT_OK
        if rows:
            df = pd.DataFrame([r.to_csv_row() for r in rows])
            df["dm_fraction"] = df["dm_fraction"].astype(float)
            generator = ReportGenerator(console)
            generator.render_summary(df)
            if any((r.engine, r.storage, r.scheme) == ("base", "nvm_emu", "none") for r in rows):
                generator.render_normalized(df)
            mismatches = generator.digest_mismatches(df)
            for query, digests in mismatches.items():
                console.print(f"❌ Error: {query} produced {len(digests)} different result digests")
            if mismatches:
                exit_code = EXIT_DIGEST
        if failed:
            console.print(f"⚠️  Warning: {len(failed)} cell(s) failed: {', '.join(failed)}")
            exit_code = exit_code or EXIT_FAILED
        if exit_code == EXIT_OK:
            console.print("\n🎉 Benchmark completed!")
        return exit_code

    # --- report ---

    def report(self) -> int:
        ReportGenerator(console).generate(self.args.csv or self.config.out)
        return EXIT_OK


def _config_flags(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted config keys for every flag given on the command line"""
    mapping = {
        "seed": "dataset.seed", "sf": "dataset.sf", "page_size": "dataset.page_size",
        "data": "dataset.dir", "storage": "device.storage", "backing": "device.backing",
        "disk_read_us": "device.latency.disk_read_us", "disk_write_us": "device.latency.disk_write_us",
        "nvm_write_us": "device.latency.nvm_write_us", "buffer_slots": "buffer.capacity_slots",
        "auto_size": "buffer.auto_size", "engine": "engine.kind",
        "adhoc_prefetch": "engine.se2_adhoc_prefetch", "prefetch": "prefetch.scheme",
        "capacity": "prefetch.capacity", "stride": "prefetch.stride",
        "compute_core": "prefetch.compute_core", "helper_cores": "prefetch.helper_cores",
        "helpers": "prefetch.helpers", "query": "run.query", "reps": "run.reps",
        "timeout": "run.timeout_s", "csv_out": "run.out",
    }
    return {key: getattr(args, dest) for dest, key in mapping.items() if getattr(args, dest, None) is not None}


def _add_dataset_flags(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, help="Generator seed (default 42)")
    p.add_argument("--sf", help="Scale factor; lineitem rows = sf x 6,000,000 (default 0.01)")
    p.add_argument("--page-size", type=int, help="Page size in bytes, power of two in [512, 32768]")


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--data", help="Dataset directory or configured dataset name")
    p.add_argument("--dataset-config", default="config/datasets.json", help="Path to dataset configuration file")
    p.add_argument("--engine-config", default="config/engine-config.json",
                   help="Path to the storage configuration profiles")
    p.add_argument("--profile", help="Named storage configuration, e.g. nvm_se2")
    p.add_argument("--storage", help="disk-emu or nvm-emu")
    p.add_argument("--backing", help="ram or file")
    p.add_argument("--disk-read-us", type=float, help="Injected per-block read latency of disk_emu")
    p.add_argument("--disk-write-us", type=float, help="Injected per-block write latency of disk_emu")
    p.add_argument("--nvm-write-us", type=float, help="Injected per-page write latency of nvm_emu")
    p.add_argument("--buffer-slots", type=int, help="Buffer pool capacity in pages")
    p.add_argument("--auto-size", help="on/off: cap the pool at a quarter of the dataset")
    p.add_argument("--adhoc-prefetch", help="on/off: se2 touches the next page itself")
    p.add_argument("--capacity", type=int, help="Prefetch queue capacity (power of two)")
    p.add_argument("--stride", type=int, help="Prefetch touch stride in bytes")
    p.add_argument("--compute-core", type=int, help="Pin the compute thread to this cpu (-1: no pinning)")
    p.add_argument("--helper-cores", help="Explicit helper cpus, e.g. '2,3'")
    p.add_argument("--helpers", type=int, help="Helper threads for m1/m2")
    p.add_argument("--reps", type=int, help="Repetitions per cell (default 3)")
    p.add_argument("--timeout", type=float, help="Per-repetition timeout in seconds (0: none)")
    p.add_argument("--out", dest="csv_out", help="Results CSV (default results.csv)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvmse",
        description="NVM storage-engine benchmark",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", help="key=value config file (default: $NVMSE_CONFIG)")
    parser.add_argument("--verbose", action="store_true", help="Debug logging and tracebacks")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate a dataset")
    _add_dataset_flags(gen)
    gen.add_argument("--out", required=True, help="Output directory for heap files and catalog")
    gen.add_argument("--force", action="store_true", help="Overwrite an existing dataset")

    run = sub.add_parser("run", help="Run one query under one configuration")
    _add_run_flags(run)
    run.add_argument("--query", help="qs1..qs4")
    run.add_argument("--engine", help="base, se1 or se2")
    run.add_argument("--prefetch", help="none, m1, m2 or m3")
    run.add_argument("--updates", help="Run an update workload template instead of a query")
    run.add_argument("--seed", type=int, help="Seed for compiling the update workload")

    matrix = sub.add_parser("matrix", help="Run the suite over every configuration and scheme")
    _add_run_flags(matrix)
    matrix.add_argument("--queries", nargs="+", help="Subset of qs1..qs4")
    matrix.add_argument("--schemes", nargs="+", help="Subset of none m1 m2 m3")

    report = sub.add_parser("report", help="Re-render tables from a results CSV")
    report.add_argument("csv", nargs="?", help="Results CSV (default: run.out)")
    return parser


def setup_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=True)],
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    setup_logging(args.verbose)

    try:
        profile = None
        if getattr(args, "profile", None):
            engine_config = BenchLauncher._load_json(args.engine_config)
            if engine_config is None:
                raise ConfigError(f"{args.engine_config} not found")
            profile = profile_values(engine_config, args.profile)
        config = load_config(args.config, _config_flags(args), profile)
        if args.command == "matrix":
            for label in args.queries or ():
                plan_by_label(label)
            for scheme in args.schemes or ():
                MappingScheme(scheme.lower())
        launcher = BenchLauncher(args, config)
    except (ConfigError, ValueError, NvmseError) as e:
        console.print(f"❌ Error: {e}")
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    try:
        return getattr(launcher, args.command)()
    except DigestMismatch as e:
        console.print(f"❌ Error: {e}")
        return EXIT_DIGEST
    except DatasetExistsError as e:
        console.print(f"❌ Error: {e}; use --force to overwrite")
        return EXIT_FAILED
    except (NvmseError, OSError, ValueError) as e:
        if args.verbose:
            logger.exception("command failed")
        console.print(f"❌ Error: {type(e).__name__}: {e}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
