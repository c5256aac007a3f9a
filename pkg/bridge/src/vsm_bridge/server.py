"""Line-delimited JSON responder over stdin/stdout.

Protocol (one JSON object per line):

    request   {"id": ..., "texts": ["...", ...], "kind": "sentence"|"prompt_hidden"}
    response  {"id": ..., "dim": D, "vectors": [[...], ...], "model": "..."}
    error     {"id": ..., "error": "..."}

A bad request produces an error response; the stream stays open until EOF.
"""

from __future__ import annotations

import json
import sys
from typing import IO, Optional

from .models import BridgeConfig, BridgeModels, ModelLoadFailure


def handle_request(models: BridgeModels, raw_line: str) -> Optional[dict]:
    line = raw_line.strip()
    if not line:
        return None
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"id": None, "error": f"invalid JSON: {exc}"}
    request_id = request.get("id") if isinstance(request, dict) else None
    if not isinstance(request, dict) or "texts" not in request:
        return {"id": request_id, "error": "request must be an object with a 'texts' list"}
    texts = request["texts"]
    if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
        return {"id": request_id, "error": "'texts' must be a list of strings"}
    if not texts:
        return {"id": request_id, "error": "'texts' must be non-empty"}
    kind = request.get("kind", "sentence")
    try:
        vectors, model_id = models.embed(texts, kind)
    except (ValueError, ModelLoadFailure) as exc:
        return {"id": request_id, "error": str(exc)}
    return {
        "id": request_id,
        "dim": int(vectors.shape[1]),
        "vectors": [[float(v) for v in row] for row in vectors],
        "model": model_id,
    }


def serve(stdin: Optional[IO[str]] = None, stdout: Optional[IO[str]] = None,
          config: Optional[BridgeConfig] = None) -> None:
    """Answer requests until the input stream closes."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    models = BridgeModels(config)
    for raw_line in stdin:
        response = handle_request(models, raw_line)
        if response is None:
            continue
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()
