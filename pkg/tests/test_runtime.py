"""Clocks, id factories, and canonical JSON hashing."""

from __future__ import annotations

import hashlib
import uuid
from datetime import datetime, timezone

import pytest

from dloop.canon import canonical_dumps, content_hash
from dloop.runtime import (
    FixedClock,
    RandomIds,
    ScriptedClock,
    ScriptedIds,
    SeededIds,
    SystemClock,
    format_timestamp,
    parse_timestamp,
)


def test_fixed_clock_advances_by_step():
    clock = FixedClock(step_seconds=2.0)
    t0 = clock.now()
    t1 = clock.now()
    assert (t1 - t0).total_seconds() == 2.0
    assert t0.tzinfo is timezone.utc


def test_fixed_clock_is_reproducible():
    a = FixedClock()
    b = FixedClock()
    assert [a.now() for _ in range(3)] == [b.now() for _ in range(3)]


def test_scripted_clock_holds_last_time():
    times = [datetime(2024, 5, 1, tzinfo=timezone.utc), datetime(2024, 5, 2, tzinfo=timezone.utc)]
    clock = ScriptedClock(times)
    assert clock.now() == times[0]
    assert clock.now() == times[1]
    assert clock.now() == times[1]


def test_system_clock_is_utc_and_monotonic_enough():
    clock = SystemClock()
    a, b = clock.now(), clock.now()
    assert a.tzinfo is timezone.utc
    assert b >= a


def test_seeded_ids_are_deterministic_and_uuid4_shaped():
    a = SeededIds(seed=7)
    b = SeededIds(seed=7)
    ids_a = [a.new_id() for _ in range(5)]
    ids_b = [b.new_id() for _ in range(5)]
    assert ids_a == ids_b
    assert len(set(ids_a)) == 5
    for text in ids_a:
        parsed = uuid.UUID(text)
        assert parsed.version == 4


def test_seeded_ids_differ_across_seeds():
    assert SeededIds(seed=1).new_id() != SeededIds(seed=2).new_id()


def test_random_ids_are_valid_uuids():
    factory = RandomIds()
    assert uuid.UUID(factory.new_id()).version == 4


def test_scripted_ids_consume_then_fall_back():
    fallback = SeededIds(seed=3)
    expected_after = SeededIds(seed=3).new_id()
    factory = ScriptedIds(["one", "two"], fallback=fallback)
    assert factory.new_id() == "one"
    assert factory.new_id() == "two"
    assert factory.new_id() == expected_after


def test_scripted_ids_push_extends_queue():
    factory = ScriptedIds([], fallback=SeededIds(seed=1))
    factory.push("special", "second")
    assert factory.new_id() == "special"
    assert factory.new_id() == "second"


def test_scripted_ids_exhausted_without_fallback():
    factory = ScriptedIds(["only"])
    assert factory.new_id() == "only"
    with pytest.raises(LookupError):
        factory.new_id()


def test_timestamp_roundtrip():
    t = datetime(2024, 3, 4, 5, 6, 7, 123456, tzinfo=timezone.utc)
    assert parse_timestamp(format_timestamp(t)) == t


def test_canonical_dumps_sorts_and_compacts():
    assert canonical_dumps({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


def test_canonical_dumps_keeps_unicode():
    assert canonical_dumps({"k": "café"}) == '{"k":"café"}'


def test_content_hash_matches_direct_sha256():
    obj = {"model": "m", "messages": [{"role": "user", "content": "hi"}]}
    expected = hashlib.sha256(canonical_dumps(obj).encode("utf-8")).hexdigest()
    assert content_hash(obj) == expected


def test_content_hash_is_key_order_insensitive():
    assert content_hash({"a": 1, "b": 2}) == content_hash({"b": 2, "a": 1})


def test_canonical_dumps_rejects_nan():
    with pytest.raises(ValueError):
        canonical_dumps({"x": float("nan")})
