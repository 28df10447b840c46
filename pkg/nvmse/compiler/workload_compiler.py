"""
WorkloadCompiler - Turns update templates into deterministic scripts of
in-place tuple writes

A compiled script is engine-agnostic: every engine replays the same
(tid, new bytes) sequence, so post-flush heap files can be compared byte
for byte.
"""
import json
import logging
import random
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from dataset.dataset_generator import MAX_QUANTITY, PART_PRICE_MIN_CENTS, PART_PRICE_SPAN_CENTS, Catalog
from storage.page_format import FIXED_COLUMNS, decode_page

logger = logging.getLogger(__name__)

UPDATE_TASKS = {"update_quantity", "update_price", "update_comment"}
COMPILED_ROOT = Path("workloads/compiled")
_ALPHABET = "abcdefghijklmnopqrstuvwxyz "


@dataclass(frozen=True)
class TupleUpdate:
    rel: str
    page_no: int
    slot_index: int
    new_bytes: bytes

    @property
    def tid(self) -> Tuple[int, int]:
        return self.page_no, self.slot_index

    def to_dict(self) -> Dict[str, Any]:
        return {"rel": self.rel, "tid": [self.page_no, self.slot_index], "new_bytes": self.new_bytes.hex()}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "TupleUpdate":
        page_no, slot_index = doc["tid"]
        return cls(doc["rel"], int(page_no), int(slot_index), bytes.fromhex(doc["new_bytes"]))


@dataclass
class UpdateScript:
    task_type: str
    updates: List[TupleUpdate] = field(default_factory=list)

    def __len__(self):
        return len(self.updates)

    def to_dict(self) -> Dict[str, Any]:
        return {"task_type": self.task_type, "ops_count": len(self.updates),
                "parameters": {"updates": [u.to_dict() for u in self.updates]}}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "UpdateScript":
        updates = [TupleUpdate.from_dict(u) for u in doc.get("parameters", {}).get("updates", [])]
        return cls(doc["task_type"], updates)


class WorkloadCompiler:
    def __init__(self, catalog: Catalog, output_root: Union[str, Path] = COMPILED_ROOT):
        self.catalog = catalog
        self.output_root = Path(output_root)
        self.rng = random.Random()
        # rel -> one row per tuple: page_no, slot_index and the decoded columns
        self.tuples: Dict[str, pd.DataFrame] = {}

    def compile_scripts(self, workload_config: Dict[str, Any], seed: Optional[int] = None) -> List[UpdateScript]:
        """Compile every task of a template in memory"""
        self.rng.seed(seed)
        tasks = workload_config.get("tasks", [])
        for task in tasks:
            if task["name"] not in UPDATE_TASKS:
                raise ValueError(f"Task '{task['name']}' is not an update task. Valid tasks: {sorted(UPDATE_TASKS)}")
        return [self._compile_task(task) for task in tasks]

    def compile_workload(self, workload_config: Dict[str, Any], dataset_name: str,
                         seed: Optional[int] = None) -> Path:
        """Compile a template to <output_root>/<dataset>/NN_<task>.json"""
        scripts = self.compile_scripts(workload_config, seed)

        output_dir = self.output_root / dataset_name
        if output_dir.exists():
            logger.info("removing old compiled workload %s", output_dir)
            shutil.rmtree(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)

        for idx, (task, script) in enumerate(zip(workload_config["tasks"], scripts)):
            output_file = output_dir / f"{idx:02d}_{task['name']}.json"
            with open(output_file, "w") as f:
                json.dump(script.to_dict(), f, indent=2)
        return output_dir

    def _scan_relation(self, rel: str) -> pd.DataFrame:
        if rel in self.tuples:
            return self.tuples[rel]
        if rel not in self.catalog.relations:
            raise ValueError(f"relation '{rel}' is not in the catalog")

        page_size = self.catalog.page_size
        pages = np.fromfile(self.catalog.path_of(rel), dtype=np.uint8).reshape(-1, page_size)
        records = []
        for page_no, page in enumerate(pages):
            for slot_index, t in enumerate(decode_page(page, page_size)):
                records.append((page_no, slot_index, t.key, t.quantity, t.price_cents, t.ship_date, t.comment))
        df = pd.DataFrame.from_records(
            records, columns=["page_no", "slot_index", "key", "quantity", "price_cents", "ship_date", "comment"])
        logger.debug("scanned %s: %d tuples in %d pages", rel, len(df), len(pages))
        self.tuples[rel] = df
        return df

    def _compile_task(self, task: Dict[str, Any]) -> UpdateScript:
        name = task["name"]
        rel = task.get("rel", "lineitem")
        ops = int(task.get("ops", 0))
        df = self._scan_relation(rel)
        script = UpdateScript(name.upper())
        if ops <= 0 or df.empty:
            return script

        # The same tuple may be hit more than once; later writes win
        sampled = df.sample(n=ops, replace=ops > len(df), random_state=self.rng.randint(0, 1_000_000))
        for row in sampled.itertuples(index=False):
            quantity, price, comment = int(row.quantity), int(row.price_cents), row.comment
            if name == "update_quantity":
                quantity = 1 + self.rng.randrange(MAX_QUANTITY)
            elif name == "update_price":
                price = quantity * (PART_PRICE_MIN_CENTS + self.rng.randrange(PART_PRICE_SPAN_CENTS))
            else:
                comment = "".join(self.rng.choice(_ALPHABET) for _ in range(len(comment))).encode()
            body = FIXED_COLUMNS.pack(int(row.key), quantity, price, int(row.ship_date)) + comment
            script.updates.append(TupleUpdate(rel, int(row.page_no), int(row.slot_index), body))
        return script


def load_script(path: Union[str, Path]) -> UpdateScript:
    with open(path, "r") as f:
        return UpdateScript.from_dict(json.load(f))


def load_compiled(compiled_dir: Union[str, Path]) -> List[UpdateScript]:
    """Compiled scripts of one dataset in task order"""
    return [load_script(p) for p in sorted(Path(compiled_dir).glob("[0-9][0-9]_*.json"))]
