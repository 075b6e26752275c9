"""Single choke-point for model calls: providers, validation retry, record/replay.

Every model exchange flows through Gateway.complete so the audit trail, the
transcript recorder, and the replay lookup all see exactly the same requests.
Request identity is the sha256 of the canonicalized request payload, which is
stable across platforms and construction order.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, TypeVar

import httpx

from .canon import canonical_dumps, content_hash
from .errors import (
    EnvelopeError,
    GatewayError,
    GatewayTimeout,
    IoError,
    MissingFixture,
    RangeError,
    RateLimited,
    TransportError,
    ValidationExhausted,
)
from .runtime import Clock, SystemClock, format_timestamp

logger = logging.getLogger("dloop.gateway")

T = TypeVar("T")


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    model: str
    temperature: float
    max_tokens: int
    response_hint: str

    def __post_init__(self) -> None:
        if not self.system or not self.user:
            raise ValueError("system and user text must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def payload(self) -> dict:
        return {
            "system": self.system,
            "user": self.user,
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "response_hint": self.response_hint,
        }

    def request_hash(self) -> str:
        return content_hash(self.payload())

    def with_repair(self, error: Exception) -> "ChatRequest":
        note = (
            "\n\nYour previous reply could not be used: "
            f"{error}. Reply again following the required format exactly."
        )
        return ChatRequest(
            system=self.system,
            user=self.user + note,
            model=self.model,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            response_hint=self.response_hint,
        )


@dataclass
class ChatResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    provider_id: str
    finish_reason: str = "stop"

    def __post_init__(self) -> None:
        if not self.text and self.finish_reason == "stop":
            raise ValueError("empty text requires a non-stop finish reason")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "provider_id": self.provider_id,
            "finish_reason": self.finish_reason,
        }


class Provider(Protocol):
    provider_id: str

    def complete(self, request: ChatRequest) -> ChatResponse: ...


@dataclass
class CallRecord:
    request_hash: str
    response_hint: str
    provider_id: str
    prompt_tokens: int
    completion_tokens: int


class Gateway:
    """Provider wrapper adding the audit log and bounded validation retry."""

    def __init__(self, provider: Provider):
        self.provider = provider
        self.audit: list[CallRecord] = []
        self._lock = threading.Lock()

    @property
    def provider_id(self) -> str:
        return self.provider.provider_id

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self.provider.complete(request)
        with self._lock:
            self.audit.append(CallRecord(
                request_hash=request.request_hash(),
                response_hint=request.response_hint,
                provider_id=response.provider_id,
                prompt_tokens=response.prompt_tokens,
                completion_tokens=response.completion_tokens,
            ))
        return response

    def complete_validated(
        self,
        request: ChatRequest,
        validator: Callable[[str], T],
        max_retries: int = 1,
    ) -> T:
        """Return the first response the validator accepts.

        Each retry appends a repair instruction quoting the validator error to
        the user turn. Only envelope failures are retried; transport problems
        propagate immediately.
        """
        if not 0 <= max_retries <= 2:
            raise RangeError(f"max_retries must be within [0, 2], got {max_retries}")
        attempt_request = request
        last_text = ""
        last_error: Optional[EnvelopeError] = None
        for _ in range(1 + max_retries):
            response = self.complete(attempt_request)
            try:
                return validator(response.text)
            except EnvelopeError as exc:
                last_text, last_error = response.text, exc
                logger.info("response failed validation, retrying: %s", exc)
                attempt_request = attempt_request.with_repair(exc)
        assert last_error is not None
        raise ValidationExhausted(last_text, last_error)


# --- providers --------------------------------------------------------------

class LiveProvider:
    """OpenAI-compatible chat-completions client.

    One network round-trip per call, 60 s timeout, no transport retry, at most
    `max_inflight` concurrent calls. The API key is read from the named env var
    at call time and never logged.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str,
        max_inflight: int = 4,
        timeout_seconds: float = 60.0,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.provider_id = f"live:{base_url}"
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self._semaphore = threading.Semaphore(max_inflight)
        self._client = httpx.Client(timeout=timeout_seconds, transport=transport)

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise GatewayError(f"api key env var {self.api_key_env} is not set")
        body = {
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        with self._semaphore:
            try:
                resp = self._client.post(
                    f"{self.base_url}/chat/completions",
                    json=body,
                    headers={"Authorization": f"Bearer {key}"},
                )
            except httpx.TimeoutException as exc:
                raise GatewayTimeout(f"model call timed out: {exc}") from exc
            except httpx.HTTPError as exc:
                raise TransportError(f"model call failed: {exc}") from exc
        if resp.status_code == 429:
            raise RateLimited("provider rate limit hit")
        if resp.status_code >= 400:
            raise TransportError(f"provider returned HTTP {resp.status_code}")
        try:
            data = resp.json()
            choice = data["choices"][0]
            usage = data.get("usage", {})
            return ChatResponse(
                text=choice["message"]["content"],
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                provider_id=self.provider_id,
                finish_reason=choice.get("finish_reason", "stop"),
            )
        except (KeyError, IndexError, ValueError, json.JSONDecodeError) as exc:
            raise TransportError(f"malformed provider response: {exc}") from exc


class ScriptedProvider:
    """Hands out queued responses; raises queued exceptions. For unit tests."""

    provider_id = "scripted"

    def __init__(self, outputs: list):
        self._outputs = list(outputs)
        self.calls: list[ChatRequest] = []

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.calls.append(request)
        if not self._outputs:
            raise LookupError("scripted provider exhausted")
        item = self._outputs.pop(0)
        if isinstance(item, Exception):
            raise item
        if isinstance(item, ChatResponse):
            return item
        return ChatResponse(
            text=str(item),
            prompt_tokens=len(request.system + request.user) // 4,
            completion_tokens=len(str(item)) // 4,
            provider_id=self.provider_id,
        )


class ReplayProvider:
    """Serves responses from a recorded transcript; never touches the network."""

    def __init__(self, transcript_path: str | Path):
        self.transcript_path = Path(transcript_path)
        self.provider_id = "replay"
        self._entries = load_transcript(self.transcript_path)

    def __len__(self) -> int:
        return len(self._entries)

    def complete(self, request: ChatRequest) -> ChatResponse:
        entry = self._entries.get(request.request_hash())
        if entry is None:
            raise MissingFixture(request.request_hash())
        return ChatResponse(**entry)


class RecordingProvider:
    """Wraps another provider and appends every exchange to a JSONL transcript."""

    def __init__(self, inner: Provider, transcript_path: str | Path,
                 clock: Optional[Clock] = None):
        self.inner = inner
        self.provider_id = inner.provider_id
        self.transcript_path = Path(transcript_path)
        self.clock = clock or SystemClock()
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self.inner.complete(request)
        entry = {
            "request_hash": request.request_hash(),
            "request": request.payload(),
            "response": response.to_dict(),
            "provider_id": response.provider_id,
            "recorded_at": format_timestamp(self.clock.now()),
        }
        with self._lock:
            try:
                with self.transcript_path.open("a", encoding="utf-8") as fh:
                    fh.write(canonical_dumps(entry) + "\n")
            except OSError as exc:
                raise IoError(f"cannot append to transcript {self.transcript_path}: {exc}") from exc
        return response


def load_transcript(path: str | Path) -> dict[str, dict]:
    """Parse a JSONL transcript into a request_hash -> response-kwargs map.

    Later entries win on hash collisions, matching append semantics.
    """
    path = Path(path)
    entries: dict[str, dict] = {}
    try:
        with path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    entries[record["request_hash"]] = dict(record["response"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise IoError(f"{path}:{line_no}: malformed transcript entry: {exc}") from exc
    except OSError as exc:
        raise IoError(f"cannot read transcript {path}: {exc}") from exc
    return entries


def replay_gateway(transcript_path: str | Path) -> Gateway:
    return Gateway(ReplayProvider(transcript_path))


def recording_gateway(inner: Provider, transcript_path: str | Path,
                      clock: Optional[Clock] = None) -> Gateway:
    return Gateway(RecordingProvider(inner, transcript_path, clock))
