"""Batch extraction: prompts file in, matrix file out.

The prompts file is JSONL; each line is either an object with a "prompt" (or
"text") key, or a bare JSON string. The output uses the shared matrix format:
a JSON header line {"format": "vsm-matrix/1", "rows", "dim", ...provenance}
followed by one space-separated full-precision row per vector.
"""

from __future__ import annotations

import json
from typing import List, Optional

from .models import BridgeConfig, BridgeModels, IoFailure

MATRIX_FORMAT = "vsm-matrix/1"


def read_prompts(path) -> List[str]:
    prompts = []
    try:
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                if isinstance(record, str):
                    prompts.append(record)
                elif isinstance(record, dict) and ("prompt" in record or "text" in record):
                    prompts.append(record.get("prompt", record.get("text")))
                else:
                    raise IoFailure(f"{path}: line is neither a string nor a prompt object")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return prompts


def write_matrix(path, vectors, header: dict) -> None:
    meta = {"format": MATRIX_FORMAT, "rows": int(vectors.shape[0]), "dim": int(vectors.shape[1])}
    meta.update(header)
    try:
        with open(path, "w") as fh:
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
            for row in vectors:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def batch_extract(prompts_path, out_path, config: Optional[BridgeConfig] = None,
                  kind: str = "prompt_hidden") -> int:
    """One vector per prompt; returns the number of rows written."""
    models = BridgeModels(config)
    prompts = read_prompts(prompts_path)
    if not prompts:
        raise IoFailure(f"{prompts_path}: no prompts found")
    vectors, model_id = models.embed(prompts, kind)
    write_matrix(out_path, vectors, {"provider": "bridge", "model": model_id, "kind": kind})
    return len(prompts)
