"""Text encoders behind one tiny interface: encode(texts) -> float32 rows.

Model identifiers are passed through to the sentence-transformers hub,
except the `hash:<dim>` family, a dependency-free deterministic encoder
(feature-hashed character trigrams) useful for tests and offline plumbing.
"""

from __future__ import annotations

import hashlib

import numpy as np


class ModelLoadError(RuntimeError):
    pass


class HashEncoder:
    """Feature-hashed character trigram embeddings; deterministic, no weights."""

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ModelLoadError(f"hash encoder dimension must be >= 1, got {dim}")
        self.dim = dim

    def _bucket(self, gram: str) -> tuple[int, float]:
        digest = hashlib.md5(gram.encode("utf-8")).digest()
        idx = int.from_bytes(digest[:4], "little") % self.dim
        sign = 1.0 if digest[4] % 2 == 0 else -1.0
        return idx, sign

    def encode(self, texts) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for row, text in enumerate(texts):
            padded = f" {text} "
            for i in range(len(padded) - 2):
                idx, sign = self._bucket(padded[i:i + 3])
                out[row, idx] += sign
        return out


class TransformerEncoder:
    """sentence-transformers model wrapper; loaded lazily."""

    def __init__(self, model_id: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ModelLoadError(f"sentence-transformers is not installed: {exc}") from exc
        try:
            self.model = SentenceTransformer(model_id)
        except Exception as exc:
            raise ModelLoadError(f"failed to load model {model_id!r}: {exc}") from exc
        self.dim = int(self.model.get_sentence_embedding_dimension())

    def encode(self, texts) -> np.ndarray:
        emb = self.model.encode(list(texts), convert_to_numpy=True,
                                show_progress_bar=False, batch_size=len(texts))
        return np.asarray(emb, dtype=np.float32)


def load_encoder(model_id: str):
    if model_id.startswith("hash:"):
        try:
            dim = int(model_id.split(":", 1)[1])
        except ValueError:
            raise ModelLoadError(f"bad hash encoder spec {model_id!r}") from None
        return HashEncoder(dim)
    return TransformerEncoder(model_id)


def normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return (mat / norms).astype(np.float32)
