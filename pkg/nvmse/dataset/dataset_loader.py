"""
DatasetLoader - Resolves dataset names or directories to loaded catalogs
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from dataset.dataset_generator import CATALOG_FILE, Catalog

logger = logging.getLogger(__name__)


class DatasetLoader:
    def __init__(self, dataset_config: Optional[Dict[str, Any]] = None):
        dataset_config = dataset_config or {"root_dir": ".", "datasets": {}}
        self.config = dataset_config
        self.root_dir = Path(dataset_config.get('root_dir', '.'))
        self.datasets = dataset_config.get('datasets', {})

    def get_dataset_path(self, dataset: str) -> Optional[Path]:
        """Absolute path of a dataset directory holding catalog.json, or None"""
        candidate = Path(dataset)
        if not (candidate / CATALOG_FILE).exists():
            if dataset not in self.datasets:
                logger.warning("dataset '%s' is neither a directory nor a configured name", dataset)
                return None
            candidate = self.root_dir / self.datasets[dataset]

        if not (candidate / CATALOG_FILE).exists():
            logger.warning("%s not found in: %s", CATALOG_FILE, candidate)
            return None

        return candidate.resolve()

    def load(self, dataset: str) -> Optional[Catalog]:
        path = self.get_dataset_path(dataset)
        if path is None:
            return None
        catalog = Catalog.load(path)
        catalog.check()
        return catalog

    def list_datasets(self) -> List[str]:
        """List all configured datasets"""
        return list(self.datasets.keys())
