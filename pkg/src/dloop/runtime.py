"""Injected clock and id sources.

All ambient nondeterminism (wall clock, uuid generation) flows through these
two interfaces so replay runs can be made bit-reproducible.
"""

from __future__ import annotations

import random
import uuid
from datetime import datetime, timedelta, timezone
from typing import Iterable, Protocol


class Clock(Protocol):
    def now(self) -> datetime: ...


class IdFactory(Protocol):
    def new_id(self) -> str: ...


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class FixedClock:
    """Starts at a fixed instant and advances by a fixed step per call."""

    def __init__(self, start: datetime | None = None, step_seconds: float = 1.0):
        self._t = start if start is not None else datetime(2024, 1, 1, tzinfo=timezone.utc)
        self._step = timedelta(seconds=step_seconds)

    def now(self) -> datetime:
        t = self._t
        self._t = self._t + self._step
        return t


class ScriptedClock:
    """Replays a recorded sequence of instants; holds the last one when exhausted."""

    def __init__(self, times: Iterable[datetime]):
        self._times = list(times)
        self._i = 0

    def now(self) -> datetime:
        if not self._times:
            raise RuntimeError("scripted clock has no instants")
        t = self._times[min(self._i, len(self._times) - 1)]
        self._i += 1
        return t


class RandomIds:
    def new_id(self) -> str:
        return str(uuid.uuid4())


class SeededIds:
    """Deterministic UUIDv4-shaped ids from a seeded PRNG."""

    def __init__(self, seed: int | str = 0):
        self._rng = random.Random(seed)

    def new_id(self) -> str:
        return str(uuid.UUID(int=self._rng.getrandbits(128), version=4))


class ScriptedIds:
    """Replays a recorded id sequence, e.g. while re-applying an event log."""

    def __init__(self, ids: Iterable[str], fallback: IdFactory | None = None):
        self._ids = list(ids)
        self._i = 0
        self._fallback = fallback

    def push(self, *ids: str) -> None:
        self._ids.extend(ids)

    def new_id(self) -> str:
        if self._i < len(self._ids):
            v = self._ids[self._i]
            self._i += 1
            return v
        if self._fallback is not None:
            return self._fallback.new_id()
        raise LookupError("scripted id sequence exhausted")


def parse_timestamp(text: str) -> datetime:
    return datetime.fromisoformat(text)


def format_timestamp(dt: datetime) -> str:
    return dt.isoformat()
