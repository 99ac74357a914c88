import hashlib
import json
import os
import tempfile
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.sensor.libs.records import COLUMNS, SCHEMA_VERSION, TRUTH_COLUMNS, Dataset
from src.utils.errors import DataError
from src.utils.logger import logger

MAGIC = "# tweezer-magnetometer dataset"
_INT_COLUMNS = 6


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


class DatasetStore:
    """Line-oriented text persistence for shot datasets and reports"""

    def __init__(self, encoding: str = "utf-8"):
        self.encoding = encoding

    # ==================== FILES ====================

    def write_text(self, path: str, text: str) -> str:
        """Write through a temp file in the target directory and rename; returns the SHA-256"""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
        try:
            with os.fdopen(fd, "w", encoding=self.encoding, newline="\n") as f:
                f.write(text)
            os.replace(tmp_path, path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise
        logger.debug(f"Wrote {path}")
        return hashlib.sha256(text.encode(self.encoding)).hexdigest()

    def file_sha256(self, path: str) -> str:
        digest = hashlib.sha256()
        try:
            with open(path, "rb") as f:
                for block in iter(lambda: f.read(1 << 20), b""):
                    digest.update(block)
        except FileNotFoundError:
            raise DataError(f"file not found: {path}")
        return digest.hexdigest()

    # ==================== DATASETS ====================

    def format_dataset(self, dataset: Dataset) -> str:
        truth_columns = dataset.has_truth_columns
        config = dataset.config or {}
        lines = [
            MAGIC,
            f"# schema_version={SCHEMA_VERSION}",
            f"# mode={dataset.mode}",
            f"# config_sha256={hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()}",
            f"# master_seed={config.get('master_seed', '')}",
            "# units=cycle:index site_or_position:key T_seconds:s flags:0/1 position:m truth:rad/s,T",
            f"# records={len(dataset)}",
            f"# metadata={canonical_json(dataset.metadata)}",
            f"# config={canonical_json(config)}",
            f"# keys={dataset.n_keys}",
        ]
        for k in range(dataset.n_keys):
            x, y = dataset.positions[k]
            lines.append(f"# key={k} row={int(dataset.rows[k])} col={int(dataset.cols[k])} x={float(x)!r} y={float(y)!r}")
        for name in sorted(dataset.truth):
            values = " ".join(repr(float(v)) for v in dataset.truth[name])
            lines.append(f"# truth {name} {values}")
        lines.append("# columns=" + " ".join(COLUMNS + (TRUTH_COLUMNS if truth_columns else ())))

        if len(dataset):
            t_grid, t_index = np.unique(dataset.t_seconds, return_inverse=True)
            t_text = [f"{t:.9e}" for t in t_grid]
            columns = [
                dataset.cycle.tolist(),
                dataset.key.tolist(),
                [t_text[i] for i in t_index.tolist()],
                dataset.test_on.astype(int).tolist(),
                dataset.occupied.astype(int).tolist(),
                dataset.detected.astype(int).tolist(),
            ]
            if truth_columns:
                columns += [dataset.prepared.astype(int).tolist(), dataset.final_down.astype(int).tolist()]
            lines.extend(" ".join(map(str, row)) for row in zip(*columns))
        return "\n".join(lines) + "\n"

    def write_dataset(self, dataset: Dataset, path: str) -> str:
        digest = self.write_text(path, self.format_dataset(dataset))
        logger.info(f"Dataset written to {path} ({len(dataset)} records, sha256 {digest[:12]})")
        return digest

    def _parse_header(self, lines: List[str]) -> Tuple[Dict[str, Any], int]:
        if not lines or lines[0].rstrip("\n") != MAGIC:
            raise DataError("missing dataset header", line=1)
        header: Dict[str, Any] = {"keys_table": [], "truth": {}}
        n = 0
        for n, raw in enumerate(lines, start=1):
            line = raw.rstrip("\n")
            if not line.startswith("#"):
                return header, n - 1
            body = line[1:].strip()
            try:
                if body.startswith("key="):
                    fields = dict(item.split("=", 1) for item in body.split())
                    header["keys_table"].append(
                        (int(fields["row"]), int(fields["col"]), float(fields["x"]), float(fields["y"]))
                    )
                elif body.startswith("truth "):
                    _, name, *values = body.split()
                    header["truth"][name] = np.array([float(v) for v in values])
                elif "=" in body:
                    name, value = body.split("=", 1)
                    header[name] = value
            except (KeyError, ValueError) as e:
                raise DataError(f"malformed header entry: {e}", line=n)
        return header, n

    def read_dataset(self, path: str) -> Dataset:
        try:
            with open(path, "r", encoding=self.encoding) as f:
                lines = f.readlines()
        except FileNotFoundError:
            raise DataError(f"file not found: {path}")
        except UnicodeDecodeError as e:
            raise DataError(f"not a text dataset: {e}")

        header, n_header = self._parse_header(lines)
        try:
            version = int(header["schema_version"])
            mode = header["mode"]
            records = int(header["records"])
            metadata = json.loads(header["metadata"])
            config = json.loads(header["config"])
            n_keys = int(header["keys"])
            column_names = tuple(header["columns"].split())
        except KeyError as e:
            raise DataError(f"header lacks {e}", line=n_header)
        except (ValueError, json.JSONDecodeError) as e:
            raise DataError(f"unreadable header value: {e}", line=n_header)

        if version != SCHEMA_VERSION:
            raise DataError(f"schema version {version} is not supported (expected {SCHEMA_VERSION})")
        if column_names not in (COLUMNS, COLUMNS + TRUTH_COLUMNS):
            raise DataError(f"unexpected columns {' '.join(column_names)}", line=n_header)
        if len(header["keys_table"]) != n_keys:
            raise DataError(f"header announces {n_keys} keys but lists {len(header['keys_table'])}")

        table = self._parse_rows(lines, n_header, len(column_names), n_keys)
        if len(table) != records:
            raise DataError(
                f"expected {records} records, found {len(table)} (file truncated?)", line=n_header + len(table)
            )

        keys_table = np.array(header["keys_table"], dtype=float).reshape(-1, 4)
        with_truth = len(column_names) > _INT_COLUMNS
        return Dataset(
            mode=mode,
            cycle=table[:, 0].astype(np.int64),
            key=table[:, 1].astype(np.int64),
            t_seconds=table[:, 2].astype(float),
            test_on=table[:, 3].astype(bool),
            occupied=table[:, 4].astype(bool),
            detected=table[:, 5].astype(bool),
            positions=keys_table[:, 2:4],
            rows=keys_table[:, 0].astype(np.int64),
            cols=keys_table[:, 1].astype(np.int64),
            prepared=table[:, 6].astype(bool) if with_truth else None,
            final_down=table[:, 7].astype(bool) if with_truth else None,
            truth=header["truth"],
            metadata=metadata,
            config=config,
        )

    def _parse_rows(self, lines: List[str], n_header: int, n_columns: int, n_keys: int) -> np.ndarray:
        body = lines[n_header:]
        if not body:
            return np.zeros((0, n_columns))
        try:
            table = np.loadtxt(body, ndmin=2)
        except ValueError:
            table = None
        if table is None or table.shape[1] != n_columns:
            self._locate_bad_row(body, n_header, n_columns)
            raise DataError(f"expected {n_columns} columns", line=n_header + 1)

        flags = table[:, [3, 4, 5] + list(range(_INT_COLUMNS, n_columns))]
        bad = np.flatnonzero(
            ~np.all((flags == 0) | (flags == 1), axis=1)
            | (table[:, 1] < 0) | (table[:, 1] >= n_keys) | (table[:, 1] != np.rint(table[:, 1]))
            | ~(table[:, 2] > 0)
        )
        if len(bad):
            raise DataError("value out of range", line=n_header + int(bad[0]) + 1)
        return table

    def _locate_bad_row(self, body: List[str], n_header: int, n_columns: int) -> None:
        for offset, raw in enumerate(body, start=1):
            parts = raw.split()
            try:
                if len(parts) != n_columns:
                    raise ValueError(f"expected {n_columns} columns, found {len(parts)}")
                int(parts[0]), int(parts[1]), float(parts[2])
                [int(p) for p in parts[3:]]
            except ValueError as e:
                raise DataError(str(e), line=n_header + offset)


# Global store instance
dataset_store = DatasetStore()
