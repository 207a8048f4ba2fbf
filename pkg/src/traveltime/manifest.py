"""JSON sidecar manifests recording how each artifact was produced."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__

SUFFIX = ".manifest.json"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def manifest_path(artifact) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.name + SUFFIX)


def write_manifest(artifact, *, command: str, seed: int, config_hash: str, inputs=(),
                   extra: dict | None = None) -> Path:
    artifact = Path(artifact)
    body = {
        "artifact": artifact.name,
        "command": command,
        "version": __version__,
        "seed": seed,
        "config_hash": config_hash,
        "sha256": file_sha256(artifact),
        "inputs": {str(p): file_sha256(p) for p in inputs},
    }
    if extra:
        body.update(extra)
    path = manifest_path(artifact)
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(artifact) -> dict:
    return json.loads(manifest_path(artifact).read_text())


def verify_manifest(artifact, config_hash: str | None = None) -> list:
    """Problems found when re-hashing an artifact, its inputs and
    (optionally) the config; empty when everything matches."""
    artifact = Path(artifact)
    m = read_manifest(artifact)
    problems = []
    if file_sha256(artifact) != m["sha256"]:
        problems.append(f"{artifact} changed since it was written")
    for p, digest in m["inputs"].items():
        if not Path(p).exists():
            problems.append(f"input {p} is missing")
        elif file_sha256(p) != digest:
            problems.append(f"input {p} changed since {artifact.name} was written")
    if config_hash is not None and config_hash != m["config_hash"]:
        problems.append(f"config hash differs from the one recorded for {artifact.name}")
    return problems
