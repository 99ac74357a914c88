from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

SCHEMA_VERSION = 1
COLUMNS = ("cycle", "site_or_position", "T_seconds", "test_on", "occupied_before", "detected_after")
TRUTH_COLUMNS = ("prepared", "final_down")


@dataclass(frozen=True)
class ShotRecord:
    """Resultado de un sitio en un ciclo de medida"""
    cycle: int
    key: int  # site id (array mode) or probe index (scan mode)
    t_seconds: float
    test_on: bool
    occupied_before: bool
    detected_after: bool
    prepared: Optional[bool] = None
    final_down: Optional[bool] = None


@dataclass
class Dataset:
    """Columnar shot records plus the per-key metadata needed by the estimator.

    Rows are ordered by cycle, then key. `positions[k]` is the (x, y)
    position of key k; `rows`/`cols` hold the grid site of each key
    (-1 for off-grid probe positions).
    """

    mode: str
    cycle: np.ndarray
    key: np.ndarray
    t_seconds: np.ndarray
    test_on: np.ndarray
    occupied: np.ndarray
    detected: np.ndarray
    positions: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    prepared: Optional[np.ndarray] = None
    final_down: Optional[np.ndarray] = None
    truth: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)
    config: Optional[Dict[str, Any]] = None

    def __len__(self) -> int:
        return len(self.cycle)

    @property
    def n_keys(self) -> int:
        return len(self.positions)

    @property
    def has_truth_columns(self) -> bool:
        return self.prepared is not None and self.final_down is not None

    def take(self, index: np.ndarray) -> "Dataset":
        """Row subset (or reordering) sharing the key metadata"""
        return Dataset(
            mode=self.mode,
            cycle=self.cycle[index],
            key=self.key[index],
            t_seconds=self.t_seconds[index],
            test_on=self.test_on[index],
            occupied=self.occupied[index],
            detected=self.detected[index],
            positions=self.positions,
            rows=self.rows,
            cols=self.cols,
            prepared=None if self.prepared is None else self.prepared[index],
            final_down=None if self.final_down is None else self.final_down[index],
            truth=self.truth,
            metadata=self.metadata,
            config=self.config,
        )

    def prepared_counts(self) -> np.ndarray:
        """True prepared events per (key, test_on); needs the diagnostic columns"""
        if self.prepared is None:
            raise ValueError("dataset carries no prepared-state column")
        counts = np.zeros((self.n_keys, 2), dtype=np.int64)
        np.add.at(counts, (self.key, self.test_on.astype(int)), self.prepared.astype(np.int64))
        return counts
