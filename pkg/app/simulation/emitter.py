"""CSV tables and YAML result documents written into one output directory."""
import logging
import math
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import pandas as pd
import yaml

from app import __version__

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def to_plain(value: Any) -> Any:
    """Convert numpy containers and scalars into plain Python for YAML emission."""
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_plain(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


class ResultWriter:
    """Context manager collecting everything one command writes.

    Usage:
        with ResultWriter(out_dir) as writer:
            writer.write_table('ccdf', frame)
    """

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.written: List[Path] = []

    def __enter__(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is None:
            logger.info(f"Wrote {len(self.written)} file(s) to {self.out_dir}")
        else:
            logger.error(f"Stopped after writing {len(self.written)} file(s): {exc_val}")
        return False

    def write_table(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.out_dir / f"{name}.csv"
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
        self.written.append(path)
        logger.debug(f"Wrote {len(frame)} rows to {path}")
        return path

    def write_document(self, name: str, document: Dict[str, Any]) -> Path:
        """Write a YAML result document; the library version is always embedded."""
        path = self.out_dir / f"{name}.yaml"
        body = {'version': __version__}
        body.update(document)
        with open(path, 'w', encoding='utf-8', newline='\n') as handle:
            yaml.safe_dump(to_plain(body), handle, sort_keys=False, default_flow_style=None)
        self.written.append(path)
        return path
