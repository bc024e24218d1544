"""Export multilingual sentence embeddings to EMB1 files and serve a
JSON-lines similarity scorer over stdio."""

__version__ = "0.1.0"
