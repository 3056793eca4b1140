import hashlib
import json
import platform
from pathlib import Path as FilePath
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import scipy
import structlog

from shotnoise import __version__
from shotnoise.errors import ConfigError
from shotnoise.models.results import DecayTable, EventSet, FluidSolution, MCReport, Path

logger = structlog.get_logger(__name__)

FLOAT_FORMAT = '%.17g'


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _json_default(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def to_json_text(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_json_default) + '\n'


class ExportService:
    """Service for writing run artifacts (CSV, JSON) and the run manifest"""

    def __init__(self, out_dir: Union[str, FilePath]):
        self.out_dir = FilePath(out_dir)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"cannot create output directory {self.out_dir}: {e}")
        self.artifacts: List[str] = []

    def _write_frame(self, frame: pd.DataFrame, name: str) -> FilePath:
        target = self.out_dir / name
        frame.to_csv(target, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
        self.artifacts.append(name)
        logger.debug("Artifact written", artifact=str(target), rows=len(frame))
        return target

    def write_json(self, data: Any, name: str) -> FilePath:
        target = self.out_dir / name
        target.write_text(to_json_text(data))
        self.artifacts.append(name)
        return target

    def write_path(self, path: Path, name: str = 'path.csv') -> FilePath:
        """Columns t, x1..xd"""
        frame = pd.DataFrame(path.values, columns=[f"x{i + 1}" for i in range(path.values.shape[1])])
        frame.insert(0, 't', path.grid)
        return self._write_frame(frame, name)

    def write_events(self, events: EventSet, name: str = 'events.csv') -> FilePath:
        """Columns s, atom_id"""
        frame = pd.DataFrame({'s': events.times, 'atom_id': [events.atom_ids[k] for k in events.atoms]})
        return self._write_frame(frame, name)

    def write_fluid(self, solution: FluidSolution, name: str = 'fluid.csv') -> FilePath:
        """Columns t, xi1..xid"""
        frame = pd.DataFrame(solution.values, columns=[f"xi{i + 1}" for i in range(solution.values.shape[1])])
        frame.insert(0, 't', solution.times)
        return self._write_frame(frame, name)

    def write_reports(self, reports: List[MCReport], name: str = 'mc.csv') -> FilePath:
        """Reproducible report columns; wall time stays in the JSON copy only"""
        return self._write_frame(pd.DataFrame([report.to_row() for report in reports]), name)

    def write_rows(self, rows: List[Dict[str, Any]], name: str) -> FilePath:
        return self._write_frame(pd.DataFrame(rows), name)

    def write_decay(self, table: DecayTable, name: str = 'decay.csv') -> FilePath:
        """Columns epsilon, p_hat, se, neg_eps_log_p"""
        return self._write_frame(pd.DataFrame(table.to_records(),
                                              columns=['epsilon', 'p_hat', 'se', 'neg_eps_log_p']), name)

    def write_manifest(self, command: str, config: Dict[str, Any], inputs: Dict[str, bytes],
                       seed: Optional[int], threads: int, wall_time: float) -> FilePath:
        """manifest.json: input hashes, seed, versions, wall time and artifact hashes"""
        manifest = {
            'command': command,
            'seed': seed,
            'threads': threads,
            'wall_time': wall_time,
            'inputs': {name: sha256_bytes(data) for name, data in inputs.items()},
            'config': config,
            'versions': {
                'shotnoise': __version__,
                'python': platform.python_version(),
                'numpy': np.__version__,
                'scipy': scipy.__version__,
                'pandas': pd.__version__,
            },
            'artifacts': {name: sha256_bytes((self.out_dir / name).read_bytes()) for name in self.artifacts},
        }
        target = self.out_dir / 'manifest.json'
        target.write_text(to_json_text(manifest))
        logger.info("Manifest written", manifest=str(target), artifacts=len(self.artifacts))
        return target
