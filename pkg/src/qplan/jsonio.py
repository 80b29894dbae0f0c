"""Deterministic JSON/JSONL helpers and stable seed derivation."""

from __future__ import annotations

import hashlib
import json
import os
from typing import Any, Iterable


def _plain(obj: Any) -> Any:
    """Coerce numpy scalars/arrays and tuples into plain JSON types."""
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        try:
            return _plain(obj.item())
        except (AttributeError, ValueError):
            pass
    if hasattr(obj, "tolist"):
        return _plain(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and obj != obj:
        return None
    return obj


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys so equal values give byte-equal text."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def save_json(path: str, obj: Any) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(canonical_json(obj))


def load_json(path: str) -> Any:
    with open(path) as fh:
        return json.load(fh)


def write_jsonl(path: str, records: Iterable[dict]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(_plain(rec), sort_keys=True) + "\n")


def read_jsonl(path: str) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def derive_seed(*parts: object) -> int:
    """Stable 63-bit seed from any mix of strings and ints."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def stable_fraction(*parts: object) -> float:
    """Stable hash of the parts mapped into [0, 1); used for data splits."""
    return derive_seed(*parts) / float(1 << 63)
