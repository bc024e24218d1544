"""Long-running similarity scorer speaking newline-delimited JSON on stdio.

Requests: {"id": <int>, "a": <text>, "b": <text>}; responses echo the id
with {"score": <cosine>}.  Malformed lines get {"id": ..., "error": ...}
without terminating the worker.  Readiness is announced with
{"ready": true} once the model is loaded.
"""

from __future__ import annotations

import json

from .encoder import normalize_rows


def handle_line(line: str, encoder) -> dict:
    req_id = None
    try:
        request = json.loads(line)
        req_id = request.get("id")
        a, b = request["a"], request["b"]
        if not isinstance(a, str) or not isinstance(b, str):
            raise TypeError("fields 'a' and 'b' must be strings")
    except Exception as exc:
        return {"id": req_id, "error": f"{type(exc).__name__}: {exc}"}
    try:
        emb = normalize_rows(encoder.encode([a, b]))
        score = float(emb[0] @ emb[1])
    except Exception as exc:
        return {"id": req_id, "error": f"{type(exc).__name__}: {exc}"}
    return {"id": req_id, "score": score}


def serve(encoder, stdin, stdout) -> None:
    stdout.write(json.dumps({"ready": True}) + "\n")
    stdout.flush()
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(json.dumps(handle_line(line, encoder)) + "\n")
        stdout.flush()
