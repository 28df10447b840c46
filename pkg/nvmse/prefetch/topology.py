"""
Topology - Logical processor enumeration and helper-core planning for the
thread-mapping schemes
"""
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import psutil

from errors import InvalidCore

logger = logging.getLogger(__name__)

SYSFS_CPU = Path("/sys/devices/system/cpu")
PROC_CPUINFO = Path("/proc/cpuinfo")


class MappingScheme(str, Enum):
    NONE = "none"
    M1 = "m1"   # helper on a different physical core
    M2 = "m2"   # helper on the compute core's hyper-thread sibling
    M3 = "m3"   # remote helper feeding a sibling helper through a second queue


def parse_cpuset(line: str) -> List[int]:
    """Parse '0-3,8,10-11' style lists"""
    cpus = []
    for part in line.strip().split(","):
        if not part:
            continue
        if "-" in part:
            first, last = part.split("-")
            cpus.extend(range(int(first), int(last) + 1))
        else:
            cpus.append(int(part))
    return cpus


@dataclass
class CpuTopology:
    available: List[int]
    # logical cpu -> (package, core id)
    physical_core: Dict[int, Tuple[int, int]] = field(default_factory=dict)
    detected: bool = False
    affinity_supported: bool = True

    def siblings(self, cpu: int) -> List[int]:
        if cpu not in self.physical_core:
            return [cpu]
        core = self.physical_core[cpu]
        return sorted(c for c, p in self.physical_core.items() if p == core)

    def same_physical_core(self, a: int, b: int) -> bool:
        if a in self.physical_core and b in self.physical_core:
            return self.physical_core[a] == self.physical_core[b]
        return a == b

    @classmethod
    def detect(cls) -> "CpuTopology":
        affinity_supported = hasattr(os, "sched_setaffinity")
        try:
            available = sorted(psutil.Process().cpu_affinity())
        except (AttributeError, psutil.Error):
            available = list(range(psutil.cpu_count(logical=True) or 1))
            affinity_supported = False

        physical = _read_sysfs_topology(available) or _read_cpuinfo_topology()
        topo = cls(available, physical, detected=bool(physical), affinity_supported=affinity_supported)
        logger.debug("cpu topology: %d logical, %s physical, detected=%s",
                     len(available), psutil.cpu_count(logical=False), topo.detected)
        return topo


def _read_sysfs_topology(cpus: Sequence[int]) -> Dict[int, Tuple[int, int]]:
    physical = {}
    for cpu in cpus:
        base = SYSFS_CPU / f"cpu{cpu}" / "topology"
        try:
            package = int((base / "physical_package_id").read_text())
            core = int((base / "core_id").read_text())
        except (OSError, ValueError):
            return {}
        physical[cpu] = (package, core)
    return physical


def _read_cpuinfo_topology() -> Dict[int, Tuple[int, int]]:
    try:
        lines = PROC_CPUINFO.read_text().split("\n")
    except OSError:
        return {}
    physical = {}
    processor = package = None
    for line in lines:
        key, _, value = line.partition(":")
        key = key.strip()
        try:
            n = int(value)
        except ValueError:
            continue
        if key == "processor":
            processor, package = n, None
        elif key == "physical id":
            package = n
        elif key == "core id" and processor is not None:
            physical[processor] = (package or 0, n)
    return physical


@dataclass
class MappingPlan:
    scheme: MappingScheme
    compute_core: Optional[int]
    # One entry per helper thread; None means unpinned
    helper_cores: List[Optional[int]]
    warnings: List[str] = field(default_factory=list)

    @property
    def pinned(self) -> bool:
        return self.compute_core is not None


def _remote_core(topo: CpuTopology, compute: int, plan: MappingPlan) -> Optional[int]:
    for cpu in topo.available:
        if not topo.same_physical_core(cpu, compute):
            return cpu
    plan.warnings.append(f"no physical core other than cpu {compute}'s; remote helper left unpinned")
    return None


def _sibling_core(topo: CpuTopology, compute: int, plan: MappingPlan) -> Optional[int]:
    siblings = [c for c in topo.siblings(compute) if c != compute and c in topo.available]
    if siblings:
        return siblings[0]
    if not topo.detected:
        # Linux usually numbers the second hardware thread of core i as i + n/2
        half = len(topo.available) // 2
        guess = compute + half if compute + half in topo.available else compute - half
        if guess in topo.available and guess != compute:
            plan.warnings.append(f"sibling topology undetectable; guessing cpu {guess} as sibling of {compute}")
            return guess
    plan.warnings.append(f"cpu {compute} has no hyper-thread sibling; sibling helper shares cpu {compute}")
    return compute


def plan_mapping(scheme: MappingScheme, compute_core: int = -1, helper_cores: Sequence[int] = (),
                 helpers: int = 1, topology: Optional[CpuTopology] = None) -> MappingPlan:
    """Choose helper cores for a scheme relative to the compute core"""
    scheme = MappingScheme(scheme)
    if scheme is MappingScheme.NONE:
        return MappingPlan(scheme, None, [])

    count = 2 if scheme is MappingScheme.M3 else max(1, helpers)
    topo = topology or CpuTopology.detect()

    for cpu in list(helper_cores) + ([compute_core] if compute_core >= 0 else []):
        if cpu not in topo.available:
            raise InvalidCore(f"cpu {cpu} is not available to this process ({topo.available})")

    if compute_core < 0 or not topo.affinity_supported:
        plan = MappingPlan(scheme, None, [None] * count)
        reason = "no compute core requested" if topo.affinity_supported else "platform exposes no affinity control"
        plan.warnings.append(f"{reason}; helpers run unpinned")
        return plan

    plan = MappingPlan(scheme, compute_core, [])
    if helper_cores:
        cores = list(helper_cores)
        plan.helper_cores = (cores * count)[:count]
    elif scheme is MappingScheme.M1:
        plan.helper_cores = [_remote_core(topo, compute_core, plan)] * count
    elif scheme is MappingScheme.M2:
        plan.helper_cores = [_sibling_core(topo, compute_core, plan)] * count
    else:
        plan.helper_cores = [_remote_core(topo, compute_core, plan), _sibling_core(topo, compute_core, plan)]
    return plan
