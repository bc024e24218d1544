"""Name-file ingestion and EMB1 export.

EMB1: ASCII magic "EMB1", u32 LE row count, u32 LE dimension, then
row-major f32 LE values; row i corresponds to dense node id i, i.e. the
line order of the name file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import load_encoder, normalize_rows

EMB1_MAGIC = b"EMB1"


class ExportError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExportJob:
    name_file: str
    model: str
    output: str
    batch_size: int = 64


def read_names(path) -> list[str]:
    """`<id>\\t<name>` lines; dense row order is file order."""
    path = Path(path)
    if not path.exists():
        raise ExportError(f"name file not found: {path}")
    names = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ExportError(f"{path}:{lineno}: expected `<id>\\t<name>`")
        names.append(parts[1])
    return names


def write_emb1(path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes())


def encode_names(names, encoder, batch_size: int) -> np.ndarray:
    chunks = []
    for start in range(0, len(names), batch_size):
        batch = names[start:start + batch_size]
        try:
            chunks.append(encoder.encode(batch))
        except Exception:
            # pinpoint the offending row before giving up
            for offset, name in enumerate(batch):
                try:
                    encoder.encode([name])
                except Exception as exc:
                    raise ExportError(
                        f"encoding failed at row {start + offset} ({name!r}): {exc}") from exc
            raise
    return normalize_rows(np.vstack(chunks))


def export_embeddings(job: ExportJob) -> int:
    """Write one unit-normalized embedding row per name; returns row count."""
    names = read_names(job.name_file)
    encoder = load_encoder(job.model)
    matrix = encode_names(names, encoder, job.batch_size)
    write_emb1(job.output, matrix)
    return matrix.shape[0]
