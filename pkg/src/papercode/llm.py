"""Provider-agnostic completions with record/replay caching.

Every model call in the pipeline goes through :class:`LLMGateway`. In
``replay`` mode responses come only from a :class:`ReplayStore` file, so
runs are offline and reproducible; ``record`` mode calls the provider and
appends each response to the store.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Union

logger = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 4096


class LLMError(Exception):
    pass


class ReplayMiss(LLMError):
    def __init__(self, fingerprint: str, request: "CompletionRequest"):
        self.fingerprint = fingerprint
        self.request = request
        super().__init__(
            f"no recorded response for fingerprint {fingerprint[:16]}... (model {request.model_id})"
        )


class ConfigError(LLMError):
    pass


class ProviderError(LLMError):
    """A provider call failed. ``kind`` is ``transport``, ``rate_limit`` or ``refusal``."""

    RETRYABLE = ("transport", "rate_limit")

    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(f"{kind}: {message}")

    @property
    def retryable(self) -> bool:
        return self.kind in self.RETRYABLE


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    user_prompt: str
    system_prompt: str = ""
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self) -> None:
        if not self.user_prompt:
            raise ValueError("user_prompt must be non-empty")
        if not self.temperature >= 0:
            raise ValueError("temperature must be >= 0")
        if int(self.max_tokens) != self.max_tokens or self.max_tokens <= 0:
            raise ValueError("max_tokens must be a positive integer")
        object.__setattr__(self, "temperature", float(self.temperature))
        object.__setattr__(self, "max_tokens", int(self.max_tokens))

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "system_prompt": self.system_prompt,
            "user_prompt": self.user_prompt,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    provider_meta: Mapping[str, object] = field(default_factory=dict)


def fingerprint(request: CompletionRequest) -> str:
    payload = json.dumps(
        [
            request.model_id,
            request.system_prompt,
            request.user_prompt,
            repr(request.temperature),
            request.max_tokens,
        ],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ReplayMode(str, enum.Enum):
    RECORD = "record"
    REPLAY = "replay"
    PASSTHROUGH = "passthrough"


class ReplayStore:
    """Fingerprint -> response map backed by an append-only JSON-lines file.

    Each line holds the fingerprint, the full request and the response, so
    the file can be read as a transcript. Later lines win on reload.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None, mode: ReplayMode = ReplayMode.REPLAY):
        self.path = Path(path) if path is not None else None
        self.mode = ReplayMode(mode)
        self.entries: dict[str, CompletionResponse] = {}
        self.requests: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()
        elif self.mode is ReplayMode.REPLAY and self.path is not None:
            raise ConfigError(f"replay store {self.path} does not exist")

    def _load(self) -> None:
        with self.path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    key = record["fingerprint"]
                    response = record["response"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ConfigError(f"{self.path}:{lineno}: malformed replay record ({exc})") from exc
                self.entries[key] = CompletionResponse(response["text"], response.get("meta", {}))
                self.requests[key] = record.get("request", {})

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, key: str) -> Optional[CompletionResponse]:
        return self.entries.get(key)

    def put(self, request: CompletionRequest, response: CompletionResponse) -> str:
        key = fingerprint(request)
        record = {
            "fingerprint": key,
            "request": request.to_dict(),
            "response": {"text": response.text, "meta": dict(response.provider_meta)},
        }
        line = json.dumps(record, ensure_ascii=False, sort_keys=True)
        with self._lock:
            self.entries[key] = response
            self.requests[key] = record["request"]
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
        return key

    def save(self, path: Union[str, Path]) -> Path:
        """Write every entry once, ordered by fingerprint (a compacted copy)."""
        path = Path(path)
        lines = []
        with self._lock:
            for key in sorted(self.entries):
                response = self.entries[key]
                record = {
                    "fingerprint": key,
                    "request": self.requests.get(key, {}),
                    "response": {"text": response.text, "meta": dict(response.provider_meta)},
                }
                lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(lines), encoding="utf-8")
        return path

    def digest(self) -> Optional[str]:
        if self.path is None or not self.path.exists():
            return None
        return hashlib.sha256(self.path.read_bytes()).hexdigest()


class Provider(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


class ScriptedProvider:
    """In-process provider for tests and fixture generation.

    ``script`` is either a list of responses handed out in call order or a
    callable mapping a request to response text. ``calls`` records requests.
    """

    def __init__(self, script: Union[list, Callable[[CompletionRequest], str]]):
        self._script = script
        self._position = 0
        self._lock = threading.Lock()
        self.calls: list[CompletionRequest] = []

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.calls.append(request)
            if callable(self._script):
                item = self._script(request)
            else:
                if self._position >= len(self._script):
                    raise ProviderError("refusal", "scripted provider has no responses left")
                item = self._script[self._position]
                self._position += 1
        if isinstance(item, Exception):
            raise item
        if isinstance(item, CompletionResponse):
            return item
        return CompletionResponse(str(item), {"provider": "scripted"})


class OpenAICompatibleProvider:
    """Chat-completions provider for any OpenAI-compatible HTTP endpoint."""

    def __init__(self, base_url: str, api_key_env: str, timeout: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        import httpx

        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise ConfigError(f"environment variable {self.api_key_env} is not set")
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": request.user_prompt})
        body = {
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        started = time.monotonic()
        try:
            resp = httpx.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
        except httpx.HTTPError as exc:
            raise ProviderError("transport", str(exc)) from exc
        if resp.status_code == 429:
            raise ProviderError("rate_limit", resp.text[:200])
        if resp.status_code >= 500:
            raise ProviderError("transport", f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise ProviderError("refusal", f"HTTP {resp.status_code}: {resp.text[:200]}")
        data = resp.json()
        try:
            choice = data["choices"][0]
            text = choice["message"].get("content") or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("transport", f"unexpected response shape: {exc}") from exc
        if choice.get("finish_reason") == "content_filter":
            raise ProviderError("refusal", "response blocked by content filter")
        meta = {"latency_s": round(time.monotonic() - started, 3)}
        usage = data.get("usage") or {}
        for key in ("prompt_tokens", "completion_tokens"):
            if key in usage:
                meta[key] = usage[key]
        return CompletionResponse(text, meta)


class LLMGateway:
    """Routes requests to role providers through a replay store.

    ``models`` maps a role name ("analyst", "coder") to a model id and
    ``providers`` maps roles to live providers; providers may be omitted in
    replay mode.
    """

    def __init__(
        self,
        store: ReplayStore,
        providers: Optional[Mapping[str, Provider]] = None,
        models: Optional[Mapping[str, str]] = None,
        *,
        max_in_flight: int = 4,
        max_attempts: int = 3,
        backoff_s: float = 1.0,
        max_tokens: int = DEFAULT_MAX_TOKENS,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.store = store
        self.providers = dict(providers or {})
        self.models = dict(models or {"analyst": "analyst", "coder": "coder"})
        self.max_in_flight = max_in_flight
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.max_tokens = max_tokens
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def model_for(self, role: str) -> str:
        try:
            return self.models[role]
        except KeyError:
            raise ConfigError(f"no model configured for role {role!r}") from None

    def request(self, role: str, system_prompt: str, user_prompt: str) -> CompletionRequest:
        return CompletionRequest(
            model_id=self.model_for(role),
            system_prompt=system_prompt,
            user_prompt=user_prompt,
            max_tokens=self.max_tokens,
        )

    def complete(self, request: CompletionRequest, role: Optional[str] = None) -> CompletionResponse:
        key = fingerprint(request)
        mode = self.store.mode
        if mode is ReplayMode.REPLAY:
            cached = self.store.get(key)
            if cached is None:
                raise ReplayMiss(key, request)
            return cached
        provider = self._provider(role, request)
        response = self._call_with_retries(provider, request)
        if mode is ReplayMode.RECORD:
            self.store.put(request, response)
        return response

    def _provider(self, role: Optional[str], request: CompletionRequest) -> Provider:
        if role is None:
            role = next((r for r, m in self.models.items() if m == request.model_id), None)
        provider = self.providers.get(role) if role is not None else None
        if provider is None:
            raise ConfigError(
                f"no provider configured for role {role!r} (model {request.model_id}); "
                f"live calls are required in {self.store.mode.value} mode"
            )
        return provider

    def _call_with_retries(self, provider: Provider, request: CompletionRequest) -> CompletionResponse:
        delay = self.backoff_s
        for attempt in range(1, self.max_attempts + 1):
            try:
                with self._slots:
                    return provider.complete(request)
            except ProviderError as exc:
                if not exc.retryable or attempt == self.max_attempts:
                    raise
                logger.warning(
                    "provider %s on attempt %d/%d, retrying in %.1fs",
                    exc.kind, attempt, self.max_attempts, delay,
                )
                self._sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")  # pragma: no cover

    def ask(self, role: str, system_prompt: str, user_prompt: str) -> tuple[str, str]:
        """Complete a prompt for ``role``; returns (text, request fingerprint)."""
        request = self.request(role, system_prompt, user_prompt)
        return self.complete(request, role=role).text, fingerprint(request)
