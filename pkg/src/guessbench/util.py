"""Shared plumbing: seeded stream derivation, canonical JSON, hashing."""

from __future__ import annotations

import hashlib
import json
import random
from pathlib import Path
from typing import Any

MASK64 = (1 << 64) - 1


def derive_seed(master: int, *labels: object) -> int:
    """Derive an independent 64-bit seed from a master seed and a label path.

    Streams derived with distinct labels are independent regardless of the
    order in which they are consumed, so per-trajectory / per-sample work can
    be parallelized without changing outputs.
    """
    h = hashlib.sha256()
    h.update(str(master & MASK64).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "big")


def rng_for(master: int, *labels: object) -> random.Random:
    return random.Random(derive_seed(master, *labels))


def dump_json(obj: Any, path: str | Path, *, sort_keys: bool = True) -> None:
    Path(path).write_text(
        json.dumps(obj, indent=2, sort_keys=sort_keys, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def load_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
