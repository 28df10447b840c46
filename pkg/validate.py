#!/usr/bin/env python3
"""
Validation script to check project structure and dependencies
"""
import importlib
import sys
from pathlib import Path

REQUIRED_PACKAGES = ("numpy", "pandas", "numba", "psutil", "rich", "pytest")


def check_file_exists(filepath, description):
    """Check if a file exists"""
    if Path(filepath).exists():
        print(f"✓ {description}: {filepath}")
        return True
    print(f"✗ {description}: {filepath} NOT FOUND")
    return False


def check_package(name):
    try:
        importlib.import_module(name)
    except ImportError:
        print(f"✗ {name} package NOT installed (run: pip install -r requirements.txt)")
        return False
    print(f"✓ {name} package installed")
    return True


def check_ram_backing():
    """RAM-backed devices live in /dev/shm; without it runs fall back to ordinary files"""
    shm = Path("/dev/shm")
    if shm.is_dir():
        print(f"✓ RAM backing directory: {shm}")
    else:
        print(f"⚠ {shm} not found, nvm_emu devices will be ordinary files")


def validate_project_structure():
    """Validate the project structure"""
    print("=" * 60)
    print("Validating NVM Storage-Engine Benchmark Project Structure")
    print("=" * 60)
    print()

    all_valid = True

    print("Configuration Files:")
    all_valid &= check_file_exists("config/engine-config.json", "Storage configurations")
    all_valid &= check_file_exists("config/datasets.json", "Dataset config")
    all_valid &= check_file_exists("config/nvmse.conf", "Default run config")
    all_valid &= check_file_exists("workloads/templates/update_1000.json", "Update workload")
    all_valid &= check_file_exists("workloads/templates/quick_test.json", "Quick test workload")
    print()

    print("Python Implementation:")
    for path, description in (
        ("nvmse/bench_launcher.py", "Benchmark launcher"),
        ("nvmse/storage/page_format.py", "Page format"),
        ("nvmse/device/emulated_device.py", "Emulated device"),
        ("nvmse/buffer/buffer_pool.py", "Buffer pool"),
        ("nvmse/engine/storage_engine.py", "Storage engines"),
        ("nvmse/prefetch/helper_pool.py", "Prefetch helpers"),
        ("nvmse/query/executor.py", "Query executor"),
        ("nvmse/compiler/workload_compiler.py", "Workload compiler"),
        ("nvmse/report/report_generator.py", "Report generator"),
    ):
        all_valid &= check_file_exists(path, description)
    print()

    print("Utility Scripts:")
    all_valid &= check_file_exists("run_benchmark.sh", "Run benchmark script")
    all_valid &= check_file_exists("requirements.txt", "Python requirements")
    all_valid &= check_file_exists("pytest.ini", "Test configuration")
    print()

    print("Checking Python Dependencies:")
    for name in REQUIRED_PACKAGES:
        all_valid &= check_package(name)
    print()

    print("Platform:")
    check_ram_backing()
    print()

    print("=" * 60)
    if all_valid:
        print("✓ Project structure validation PASSED")
        print()
        print("Next steps:")
        print("  1. Install dependencies: pip install -r requirements.txt")
        print("  2. Generate a dataset: python nvmse/bench_launcher.py gen --sf 0.01 --out data/sf0.01")
        print("  3. Run the matrix: ./run_benchmark.sh --data data/sf0.01")
    else:
        print("✗ Project structure validation FAILED")
        print("Please fix the issues above before proceeding.")
    print("=" * 60)

    return all_valid


if __name__ == '__main__':
    success = validate_project_structure()
    sys.exit(0 if success else 1)
