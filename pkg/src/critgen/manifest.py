"""Run manifests and hierarchical seed derivation.

Every pipeline stage derives its own child seed from the master seed, a
stage label, and an item index, by hashing the triple with blake2b. Child
streams are therefore stable under reordering and parallel execution: worker
``i`` of stage ``s`` always sees the same stream regardless of scheduling,
and adding a stage never shifts the seeds of existing ones.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

FORMAT_VERSION = 1
TOOL_VERSION = "0.1.0"


def child_seed(master_seed: int, stage: str, index: int = 0) -> int:
    """Derive a 64-bit child seed from (master, stage, index) via blake2b."""
    if master_seed < 0:
        raise ValueError("master seed must be non-negative")
    payload = f"{master_seed}:{stage}:{index}".encode()
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def child_rng(master_seed: int, stage: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(child_seed(master_seed, stage, index))


@dataclass
class PipelineManifest:
    """Provenance header carried at the top of every artifact file."""

    master_seed: int
    stage: str
    config: dict[str, Any] = field(default_factory=dict)
    inputs: list[str] = field(default_factory=list)
    format_version: int = FORMAT_VERSION
    tool_version: str = TOOL_VERSION

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PipelineManifest:
        known = {k: data[k] for k in ("master_seed", "stage") if k in data}
        if "master_seed" not in known or "stage" not in known:
            raise ValueError("manifest requires master_seed and stage")
        return cls(
            master_seed=int(data["master_seed"]),
            stage=str(data["stage"]),
            config=dict(data.get("config", {})),
            inputs=list(data.get("inputs", [])),
            format_version=int(data.get("format_version", FORMAT_VERSION)),
            tool_version=str(data.get("tool_version", TOOL_VERSION)),
        )

    @classmethod
    def from_json(cls, text: str) -> PipelineManifest:
        return cls.from_dict(json.loads(text))
