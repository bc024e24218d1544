"""Alignment score matrices and their ALN1 on-disk format.

ALN1 layout: magic "ALN1", u32 LE rows, u32 LE cols, u8 storage tag
(0 dense, 1 candidate-sparse), then either dense row-major f32 LE values,
or per row a u32 LE entry count followed by (u32 col, f32 value) pairs.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError

ALN1_MAGIC = b"ALN1"
DENSE = 0
CANDIDATE_SPARSE = 1

_ENTRY_DTYPE = np.dtype([("col", "<u4"), ("val", "<f4")])


class ScoreMatrix:
    """|source| x |target| alignment scores, dense or candidate-sparse."""

    def __init__(self, dense: np.ndarray | None = None,
                 row_entries: list[tuple[np.ndarray, np.ndarray]] | None = None,
                 shape: tuple[int, int] | None = None):
        if dense is not None:
            self.dense = np.ascontiguousarray(dense, dtype=np.float32)
            self.row_entries = None
            self.shape = self.dense.shape
            if not np.isfinite(self.dense).all():
                raise DataFormatError("score matrix contains non-finite values")
        else:
            assert row_entries is not None and shape is not None
            self.dense = None
            self.row_entries = row_entries
            self.shape = shape
            for i, (_, vals) in enumerate(row_entries):
                if not np.isfinite(vals).all():
                    raise DataFormatError(f"score matrix row {i} contains non-finite values")

    @property
    def storage(self) -> int:
        return DENSE if self.dense is not None else CANDIDATE_SPARSE

    def to_dense(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        out = np.zeros(self.shape, dtype=np.float32)
        for i, (cols, vals) in enumerate(self.row_entries):
            out[i, cols] = vals
        return out

    def to_candidate_sparse(self, per_row: int) -> "ScoreMatrix":
        """Keep the top `per_row` columns of each row (ties to lower column id)."""
        dense = self.to_dense()
        entries = []
        for i in range(dense.shape[0]):
            cols = top_k_columns(dense[i], per_row)
            entries.append((cols.astype(np.uint32), dense[i, cols].astype(np.float32)))
        return ScoreMatrix(row_entries=entries, shape=self.shape)

    def row_support(self, i: int) -> np.ndarray:
        """Stored column ids of row i (all columns when dense)."""
        if self.dense is not None:
            return np.arange(self.shape[1])
        return self.row_entries[i][0].astype(np.int64)

    def row_lookup(self, i: int, cols: np.ndarray) -> np.ndarray:
        """Values of row i at the given columns; unstored entries are 0."""
        if self.dense is not None:
            return self.dense[i, cols].astype(np.float64)
        stored_cols, stored_vals = self.row_entries[i]
        mapping = dict(zip(stored_cols.tolist(), stored_vals.tolist()))
        return np.array([mapping.get(int(c), 0.0) for c in cols], dtype=np.float64)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(ALN1_MAGIC)
            fh.write(struct.pack("<IIB", self.shape[0], self.shape[1], self.storage))
            if self.dense is not None:
                fh.write(self.dense.astype("<f4").tobytes())
            else:
                for cols, vals in self.row_entries:
                    fh.write(struct.pack("<I", len(cols)))
                    rec = np.empty(len(cols), dtype=_ENTRY_DTYPE)
                    rec["col"] = cols
                    rec["val"] = vals
                    fh.write(rec.tobytes())

    @classmethod
    def load(cls, path) -> "ScoreMatrix":
        path = Path(path)
        raw = path.read_bytes()
        if len(raw) < 13 or raw[:4] != ALN1_MAGIC:
            raise DataFormatError(f"{path}: not an ALN1 file (bad magic)")
        rows, cols, tag = struct.unpack_from("<IIB", raw, 4)
        off = 13
        if tag == DENSE:
            need = off + 4 * rows * cols
            if len(raw) != need:
                raise DataFormatError(f"{path}: truncated dense payload")
            dense = np.frombuffer(raw, dtype="<f4", offset=off).reshape(rows, cols)
            return cls(dense=dense.copy())
        if tag == CANDIDATE_SPARSE:
            entries = []
            for _ in range(rows):
                if off + 4 > len(raw):
                    raise DataFormatError(f"{path}: truncated sparse payload")
                (n,) = struct.unpack_from("<I", raw, off)
                off += 4
                rec = np.frombuffer(raw, dtype=_ENTRY_DTYPE, count=n, offset=off)
                off += n * 8
                entries.append((rec["col"].copy(), rec["val"].copy()))
            if off != len(raw):
                raise DataFormatError(f"{path}: trailing bytes after sparse payload")
            return cls(row_entries=entries, shape=(rows, cols))
        raise DataFormatError(f"{path}: unknown storage tag {tag}")


def top_k_columns(row: np.ndarray, k: int) -> np.ndarray:
    """Column ids of the k largest entries, ordered by descending value then
    ascending column id."""
    k = min(k, row.shape[0])
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    # argsort on (-value, col) via stable sort of negated values
    order = np.argsort(-row, kind="stable")
    return order[:k].astype(np.int64)
