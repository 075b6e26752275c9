"""Golden-example store: ingest, embed, and retrieve by cosine similarity.

The test/offline embedder hashes word 3-grams into a fixed-dimension vector.
It is deterministic for a given seed, cheap, and order-sensitive enough to
rank related texts sensibly, which is all ranking tests need. Live deployments
can plug any provider that satisfies the same two-method contract.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

from .canon import canonical_dumps
from .errors import DuplicateId, EmptyContent, IoError, ProviderError

logger = logging.getLogger("dloop.exemplars")

_WORD_RE = re.compile(r"[a-z0-9]+")


class EmbeddingProvider(Protocol):
    dimension: int
    provider_id: str

    def embed(self, text: str) -> list[float]: ...


class HashingEmbedder:
    """Seeded feature hashing of word 3-grams into a unit-norm vector."""

    def __init__(self, dimension: int = 32, seed: int = 0):
        if dimension < 2:
            raise ValueError("dimension must be at least 2")
        self.dimension = dimension
        self.seed = seed
        self.provider_id = f"hash3gram-d{dimension}-s{seed}"

    def embed(self, text: str) -> list[float]:
        words = _WORD_RE.findall(text.casefold())
        # sentinel padding so even one-word texts produce grams
        padded = ["^", "^"] + words + ["$", "$"]
        vec = [0.0] * self.dimension
        for i in range(len(padded) - 2):
            gram = " ".join(padded[i:i + 3])
            digest = hashlib.sha256(f"{self.seed}|{gram}".encode("utf-8")).digest()
            index = int.from_bytes(digest[:4], "big") % self.dimension
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vec[index] += sign
        norm = math.sqrt(sum(x * x for x in vec))
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return [x / norm for x in vec]


@dataclass
class Exemplar:
    id: str
    tags: list[str]
    goal_text: str
    output_text: str
    embedding: tuple[float, ...] = field(default_factory=tuple)


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    return sum(x * y for x, y in zip(a, b))


class ExemplarStore:
    """In-memory store with exact linear-scan retrieval."""

    def __init__(self, provider: EmbeddingProvider):
        self.provider = provider
        self._items: dict[str, Exemplar] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._items)

    def ids(self) -> list[str]:
        return sorted(self._items)

    def get(self, exemplar_id: str) -> Optional[Exemplar]:
        return self._items.get(exemplar_id)

    def ingest(self, exemplar_id: str, tags: Iterable[str], goal_text: str,
               output_text: str, embedding: Optional[Sequence[float]] = None) -> Exemplar:
        if not goal_text.strip() or not output_text.strip():
            raise EmptyContent("exemplar goal_text and output_text must be non-empty")
        with self._lock:
            if exemplar_id in self._items:
                raise DuplicateId(f"exemplar {exemplar_id} already stored")
            if embedding is None:
                try:
                    embedding = self.provider.embed(goal_text)
                except Exception as exc:  # provider contract: anything it throws
                    raise ProviderError(f"embedding failed: {exc}") from exc
            if len(embedding) != self.provider.dimension:
                raise ProviderError(
                    f"embedding dimension {len(embedding)} != store dimension {self.provider.dimension}"
                )
            item = Exemplar(
                id=exemplar_id,
                tags=sorted(set(tags)),
                goal_text=goal_text,
                output_text=output_text,
                embedding=tuple(embedding),
            )
            self._items[exemplar_id] = item
            return item

    def retrieve(self, query: str, k: int,
                 tag: Optional[str] = None) -> list[tuple[Exemplar, float]]:
        """Top-k by cosine similarity, ties broken by id ascending."""
        if k < 1:
            raise ValueError("k must be positive")
        try:
            q = self.provider.embed(query)
        except Exception as exc:
            raise ProviderError(f"embedding failed: {exc}") from exc
        pool = [
            it for it in self._items.values()
            if tag is None or tag in it.tags
        ]
        scored = [(it, cosine(q, it.embedding)) for it in pool]
        scored.sort(key=lambda pair: (-pair[1], pair[0].id))
        return scored[:k]

    def by_tag(self, tag: str) -> list[Exemplar]:
        return sorted(
            (it for it in self._items.values() if tag in it.tags),
            key=lambda it: it.id,
        )


CACHE_FILE = ".embeddings.json"


def load_corpus(directory: str | Path, provider: EmbeddingProvider) -> ExemplarStore:
    """Build a store from one-JSON-per-exemplar files, with a sidecar vector cache.

    The cache is keyed by provider id, dimension, and the goal text's hash, so
    swapping providers or editing an exemplar re-embeds exactly what changed.
    """
    directory = Path(directory)
    store = ExemplarStore(provider)
    if not directory.is_dir():
        raise IoError(f"exemplar directory {directory} does not exist")

    cache_path = directory / CACHE_FILE
    cache: dict = {}
    if cache_path.is_file():
        try:
            loaded = json.loads(cache_path.read_text(encoding="utf-8"))
            if (loaded.get("provider_id") == provider.provider_id
                    and loaded.get("dimension") == provider.dimension):
                cache = loaded.get("vectors", {})
        except (OSError, json.JSONDecodeError) as exc:
            logger.warning("ignoring unreadable embedding cache %s: %s", cache_path, exc)

    dirty = False
    for path in sorted(directory.glob("*.json")):
        if path.name == CACHE_FILE:
            continue
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            goal_key = hashlib.sha256(doc["goal_text"].encode("utf-8")).hexdigest()
            cached = cache.get(doc["id"])
            vector = None
            if cached and cached.get("goal_hash") == goal_key:
                vector = cached["vector"]
            store.ingest(doc["id"], doc.get("tags", []), doc["goal_text"],
                         doc["output_text"], embedding=vector)
            if vector is None:
                item = store.get(doc["id"])
                assert item is not None
                cache[doc["id"]] = {"goal_hash": goal_key, "vector": list(item.embedding)}
                dirty = True
        except (OSError, KeyError, json.JSONDecodeError, TypeError) as exc:
            logger.warning("skipping unreadable exemplar %s: %s", path, exc)

    if dirty:
        try:
            payload = {
                "provider_id": provider.provider_id,
                "dimension": provider.dimension,
                "vectors": cache,
            }
            cache_path.write_text(canonical_dumps(payload), encoding="utf-8")
        except OSError as exc:
            logger.warning("could not write embedding cache %s: %s", cache_path, exc)
    return store
