"""Textual feature matrices: character bigrams and embedding-file ingestion.

A feature matrix has one row per node id; rows are L2-normalized (all-zero
for empty names).  Matrices may be dense ndarrays or scipy CSR.
"""

from __future__ import annotations

import struct
import unicodedata
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import DataFormatError

EMB1_MAGIC = b"EMB1"
# Marker appended to single-character names so they still produce one bigram.
_PAD = "\x00"


def _bigrams(name: str) -> list[str]:
    s = unicodedata.normalize("NFC", name).lower()
    if len(s) >= 2:
        return [s[i:i + 2] for i in range(len(s) - 1)]
    if len(s) == 1:
        return [s + _PAD]
    return []


class BigramVocab:
    """Bigram-to-column lookup, fixed by first occurrence over both name sets."""

    def __init__(self, index: dict[str, int]):
        self.index = index

    def __len__(self) -> int:
        return len(self.index)

    @classmethod
    def build(cls, source_names: Sequence[str], target_names: Sequence[str]) -> "BigramVocab":
        index: dict[str, int] = {}
        for name in list(source_names) + list(target_names):
            for bg in _bigrams(name):
                if bg not in index:
                    index[bg] = len(index)
        return cls(index)


def bigram_features(names: Sequence[str], vocab: BigramVocab) -> sparse.csr_matrix:
    """L2-normalized bigram count rows; bigrams missing from the vocab are ignored."""
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for name in names:
        counts: dict[int, int] = {}
        for bg in _bigrams(name):
            col = vocab.index.get(bg)
            if col is not None:
                counts[col] = counts.get(col, 0) + 1
        cols = sorted(counts)
        row = np.array([counts[c] for c in cols], dtype=np.float64)
        norm = np.linalg.norm(row)
        if norm > 0:
            row /= norm
        indices.extend(cols)
        data.extend(row)
        indptr.append(len(indices))
    mat = sparse.csr_matrix((data, indices, indptr),
                            shape=(len(names), len(vocab)), dtype=np.float32)
    return mat


def load_embeddings(path, expected_rows: int) -> np.ndarray:
    """Read an EMB1 file and L2-normalize its rows."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != EMB1_MAGIC:
        raise DataFormatError(f"{path}: not an EMB1 file (bad magic)")
    rows, dim = struct.unpack_from("<II", raw, 4)
    if rows != expected_rows:
        raise DataFormatError(f"{path}: has {rows} rows but graph has {expected_rows} nodes")
    need = 12 + 4 * rows * dim
    if len(raw) != need:
        raise DataFormatError(f"{path}: expected {need} bytes for {rows}x{dim}, got {len(raw)}")
    mat = np.frombuffer(raw, dtype="<f4", offset=12).reshape(rows, dim).astype(np.float32)
    bad = np.flatnonzero(~np.isfinite(mat).all(axis=1))
    if bad.size:
        raise DataFormatError(f"{path}: non-finite value in row {int(bad[0])}")
    return l2_normalize_rows(mat)


def write_embeddings(path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes())


def l2_normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return (mat / norms).astype(np.float32)


def concat_features(semantic, lexical):
    """Blockwise 1/sqrt(2)-scaled concatenation; unit rows stay unit.

    Either block may be None, in which case the other passes through.
    """
    if semantic is None:
        return lexical
    if lexical is None:
        return semantic
    if semantic.shape[0] != lexical.shape[0]:
        raise DataFormatError(
            f"row-count mismatch: semantic has {semantic.shape[0]}, lexical has {lexical.shape[0]}")
    scale = np.float32(1.0 / np.sqrt(2.0))
    sem = semantic * scale
    lex = lexical * scale
    if sparse.issparse(sem) or sparse.issparse(lex):
        return sparse.hstack([sparse.csr_matrix(sem), sparse.csr_matrix(lex)]).tocsr()
    return np.hstack([sem, lex])
