import json
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from shotnoise.errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class Control:
    """
    Piecewise-constant intensity multiplier g(s, z_k) = values[j, k] for s in
    [time_grid[j], time_grid[j+1]). Arrays are copied and frozen on construction.
    """

    time_grid: np.ndarray
    values: np.ndarray
    tag: Optional[str] = None

    def __post_init__(self):
        grid = np.array(self.time_grid, dtype=float)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(1, -1)
        if grid.ndim != 1 or grid.size < 2:
            raise InvalidArgumentError("control time_grid needs at least two points")
        if grid[0] != 0.0 or np.any(np.diff(grid) <= 0) or not np.all(np.isfinite(grid)):
            raise InvalidArgumentError("control time_grid must start at 0 and increase strictly")
        if values.ndim != 2 or values.shape[0] != grid.size - 1:
            raise InvalidArgumentError(
                f"control values must have shape (cells, atoms) = ({grid.size - 1}, K), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("control values must be finite")
        if np.any(values < 0):
            raise InvalidArgumentError("control values must be nonnegative")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, 'time_grid', grid)
        object.__setattr__(self, 'values', values)

    @classmethod
    def constant(cls, value: float, horizon: float, n_atoms: int, cells: int = 1,
                 tag: Optional[str] = None) -> 'Control':
        grid = np.linspace(0.0, horizon, cells + 1)
        return cls(grid, np.full((cells, n_atoms), float(value)), tag=tag)

    @classmethod
    def unit(cls, horizon: float, n_atoms: int) -> 'Control':
        return cls.constant(1.0, horizon, n_atoms, tag='unit')

    @classmethod
    def from_log(cls, time_grid: np.ndarray, u: np.ndarray, tag: Optional[str] = None) -> 'Control':
        return cls(time_grid, np.exp(np.asarray(u, dtype=float)), tag=tag)

    @property
    def horizon(self) -> float:
        return float(self.time_grid[-1])

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.values.shape[1]

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.time_grid)

    def cell_index(self, s) -> np.ndarray:
        """Cell containing each time; the right end T belongs to the last cell"""
        idx = np.searchsorted(self.time_grid, np.asarray(s, dtype=float), side='right') - 1
        return np.clip(idx, 0, self.n_cells - 1)

    def value_at(self, s, k) -> np.ndarray:
        return self.values[self.cell_index(s), np.asarray(k)]

    def coalesced(self) -> 'Control':
        """Merge adjacent cells whose rows are identical"""
        keep = [0]
        for j in range(1, self.n_cells):
            if not np.array_equal(self.values[j], self.values[keep[-1]]):
                keep.append(j)
        grid = np.append(self.time_grid[keep], self.time_grid[-1])
        return Control(grid, self.values[keep], tag=self.tag)

    def is_identity(self) -> bool:
        return bool(np.all(self.values == 1.0))

    def matches(self, horizon: float, n_atoms: int) -> bool:
        return self.n_atoms == n_atoms and abs(self.horizon - horizon) <= 1e-12 * max(1.0, horizon)

    def to_dict(self) -> Dict[str, Any]:
        return {'time_grid': self.time_grid.tolist(), 'values': self.values.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: Dict[str, Any], tag: Optional[str] = None) -> 'Control':
        unknown = set(data) - {'time_grid', 'values'}
        if unknown:
            raise InvalidArgumentError(f"unknown control keys: {sorted(unknown)}")
        return cls(data['time_grid'], data['values'], tag=tag)

    @classmethod
    def from_json(cls, text: str, tag: Optional[str] = None) -> 'Control':
        return cls.from_dict(json.loads(text), tag=tag)
