"""Canonical JSON serialization and content hashing.

Canonical form: UTF-8, keys sorted, compact separators, no NaN/Infinity,
floats in Python shortest-repr form. Equal values always produce identical
bytes, which is what transcript hashing and session-file idempotence rely on.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


def canonical_dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def content_hash(obj: Any) -> str:
    """SHA-256 hex digest of the canonical JSON form."""
    return hashlib.sha256(canonical_dumps(obj).encode("utf-8")).hexdigest()
