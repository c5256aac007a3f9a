"""Run manifests: every pipeline stage records its command, configuration,
seed, and the sha256 of each input and output, so a stage can be audited and
replayed byte-for-byte. Manifests contain no timestamps or absolute paths;
identical inputs and seeds produce identical manifests.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    master_seed: Optional[int]
    tool_version: str
    inputs: Dict[str, str] = field(default_factory=dict)    # relative path -> sha256
    outputs: Dict[str, str] = field(default_factory=dict)

    def add_input(self, path, base: Path) -> None:
        self.inputs[str(Path(path).relative_to(base))] = sha256_file(path)

    def add_output(self, path, base: Path) -> None:
        self.outputs[str(Path(path).relative_to(base))] = sha256_file(path)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "master_seed": self.master_seed,
            "tool_version": self.tool_version,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }


def write_manifest(manifest: RunManifest, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
