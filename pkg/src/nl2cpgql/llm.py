"""Chat-completion abstraction shared by the three pipelines.

Two backends implement :class:`ChatClient`:

* ``http`` talks to an OpenAI-compatible ``/chat/completions`` endpoint
  (HuggingFace's router speaks this dialect); the API token comes from
  ``NL2CPGQL_API_TOKEN`` or ``HF_TOKEN``.
* ``replay`` returns pre-recorded assistant turns from a JSON replay file,
  one cursor per trial, so whole experiments can be rerun offline.

Replay file format (version 1)::

    {"version": 1,
     "trials": {"<trial id>": [
         {"assistant_message": {"content": "...", "tool_calls": [...]},
          "usage": {"input_tokens": 1200, "output_tokens": 80}},
         ...]}}
"""
from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Protocol

import requests

log = logging.getLogger(__name__)

REPLAY_VERSION = 1
TOKEN_ENVS = ("NL2CPGQL_API_TOKEN", "HF_TOKEN")
ENDPOINT_ENV = "NL2CPGQL_LLM_ENDPOINT"
MAX_TRANSPORT_TRIES = 3

# free-text pseudo tool syntax some models emit instead of structured calls
_PSEUDO_TOOL_CALL = re.compile(r"<function\s*=|<tool_call>|<\|python_tag\|>")


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


@dataclass(frozen=True)
class ToolCall:
    id: str
    tool_name: str
    arguments: str  # JSON object text, parsed at dispatch

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "tool_name": self.tool_name, "arguments": self.arguments}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ToolCall:
        args = d.get("arguments", "{}")
        if not isinstance(args, str):
            args = json.dumps(args, sort_keys=True)
        return cls(id=str(d["id"]), tool_name=str(d["tool_name"]), arguments=args)


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str = ""
    tool_calls: tuple[ToolCall, ...] | None = None
    tool_call_id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))
        if self.tool_calls is not None:
            object.__setattr__(self, "tool_calls", tuple(self.tool_calls))
            if self.role is not Role.ASSISTANT:
                raise ValueError("only assistant messages carry tool_calls")
        if self.role is Role.TOOL and not self.tool_call_id:
            raise ValueError("tool messages need tool_call_id")

    @classmethod
    def system(cls, content: str) -> ChatMessage:
        return cls(Role.SYSTEM, content)

    @classmethod
    def user(cls, content: str) -> ChatMessage:
        return cls(Role.USER, content)

    @classmethod
    def assistant(cls, content: str = "", tool_calls: Iterable[ToolCall] | None = None) -> ChatMessage:
        calls = tuple(tool_calls) if tool_calls else None
        return cls(Role.ASSISTANT, content, calls)

    @classmethod
    def tool(cls, call_id: str, content: str) -> ChatMessage:
        return cls(Role.TOOL, content, tool_call_id=call_id)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"role": self.role.value, "content": self.content}
        if self.tool_calls:
            out["tool_calls"] = [c.to_dict() for c in self.tool_calls]
        if self.tool_call_id is not None:
            out["tool_call_id"] = self.tool_call_id
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ChatMessage:
        calls = d.get("tool_calls")
        return cls(
            role=Role(d.get("role", "assistant")),
            content=d.get("content") or "",
            tool_calls=tuple(ToolCall.from_dict(c) for c in calls) if calls else None,
            tool_call_id=d.get("tool_call_id"),
        )


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    parameters: dict[str, Any]

    def to_openai(self) -> dict[str, Any]:
        return {
            "type": "function",
            "function": {"name": self.name, "description": self.description, "parameters": self.parameters},
        }


@dataclass(frozen=True)
class CompletionUsage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")

    def __add__(self, other: CompletionUsage) -> CompletionUsage:
        return CompletionUsage(self.input_tokens + other.input_tokens, self.output_tokens + other.output_tokens)

    @property
    def total(self) -> int:
        return self.input_tokens + self.output_tokens

    def to_dict(self) -> dict[str, int]:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CompletionUsage:
        return cls(int(d.get("input_tokens", 0)), int(d.get("output_tokens", 0)))


def count_usage(usages: Iterable[CompletionUsage]) -> CompletionUsage:
    total = CompletionUsage()
    for u in usages:
        total = total + u
    return total


class Backend(str, Enum):
    HTTP = "http"
    REPLAY = "replay"


@dataclass(frozen=True)
class LlmConfig:
    model_id: str
    temperature: float = 0.0
    seed: int = 42
    backend: Backend = Backend.REPLAY
    endpoint: str | None = None
    replay_path: Path | None = None
    max_tokens: int = 2048
    request_timeout: float = 120.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "backend", Backend(self.backend))
        if self.backend is Backend.REPLAY and self.replay_path is None:
            raise ValueError("replay backend requires replay_path")
        if self.replay_path is not None:
            object.__setattr__(self, "replay_path", Path(self.replay_path))


# -- errors ------------------------------------------------------------------

class LlmError(Exception):
    """Base for failures that abort a trial as infrastructure-failed."""

    kind = "llm_error"

    def __init__(self, message: str, usage: CompletionUsage | None = None, reply: ChatMessage | None = None):
        super().__init__(message)
        # tokens already spent on the failing call, and the offending reply
        self.usage = usage or CompletionUsage()
        self.reply = reply


class TransportError(LlmError):
    kind = "transport_error"


class RateLimited(LlmError):
    kind = "rate_limited"


class ReplayExhausted(LlmError):
    kind = "replay_exhausted"


class MalformedToolCall(LlmError):
    kind = "malformed_tool_call"


def check_tool_syntax(message: ChatMessage, usage: CompletionUsage) -> None:
    """Reject free-text pseudo tool calls such as ``<function=name>{...}``."""
    if not message.tool_calls and _PSEUDO_TOOL_CALL.search(message.content or ""):
        raise MalformedToolCall(f"unparseable tool-call syntax in assistant text: {message.content[:120]!r}", usage, message)


# -- clients -----------------------------------------------------------------

class ChatClient(Protocol):
    def complete(
        self, messages: list[ChatMessage], tools: list[ToolSchema] | None = None
    ) -> tuple[ChatMessage, CompletionUsage]: ...


def _check_messages(messages: list[ChatMessage]) -> None:
    if not messages or messages[0].role is not Role.SYSTEM:
        raise ValueError("conversation must start with a system message")


@dataclass
class ReplayScript:
    """Loaded replay file. Cursors are handed out per trial."""

    trials: dict[str, list[dict[str, Any]]]
    path: Path | None = None

    @classmethod
    def load(cls, path: str | Path) -> ReplayScript:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict) or data.get("version") != REPLAY_VERSION or not isinstance(data.get("trials"), dict):
            raise ValueError(f"{path}: not a version {REPLAY_VERSION} replay file")
        return cls(trials=data["trials"], path=Path(path))

    def cursor(self, trial_id: str) -> ReplayClient:
        return ReplayClient(trial_id, self.trials.get(trial_id, []))


@dataclass
class ReplayClient:
    trial_id: str
    turns: list[dict[str, Any]]
    position: int = 0

    def complete(self, messages, tools=None):
        _check_messages(messages)
        if self.position >= len(self.turns):
            raise ReplayExhausted(f"replay for {self.trial_id!r} has only {len(self.turns)} turns")
        turn = self.turns[self.position]
        self.position += 1
        usage = CompletionUsage.from_dict(turn.get("usage", {}))
        msg = ChatMessage.from_dict({**turn["assistant_message"], "role": "assistant"})
        check_tool_syntax(msg, usage)
        return msg, usage


def api_token() -> str | None:
    for name in TOKEN_ENVS:
        if os.environ.get(name):
            return os.environ[name]
    return None


@dataclass
class HttpChatClient:
    config: LlmConfig
    session: Any = None
    backoff: float = 1.0

    def _url(self) -> str:
        endpoint = (self.config.endpoint or os.environ.get(ENDPOINT_ENV) or "").rstrip("/")
        if not endpoint:
            raise TransportError("no LLM endpoint configured")
        return endpoint if endpoint.endswith("/chat/completions") else endpoint + "/chat/completions"

    def _payload(self, messages: list[ChatMessage], tools: list[ToolSchema] | None) -> dict[str, Any]:
        wire = []
        for m in messages:
            d: dict[str, Any] = {"role": m.role.value, "content": m.content}
            if m.tool_calls:
                d["tool_calls"] = [
                    {"id": c.id, "type": "function", "function": {"name": c.tool_name, "arguments": c.arguments}}
                    for c in m.tool_calls
                ]
            if m.tool_call_id:
                d["tool_call_id"] = m.tool_call_id
            wire.append(d)
        payload: dict[str, Any] = {
            "model": self.config.model_id,
            "messages": wire,
            "temperature": self.config.temperature,
            "seed": self.config.seed,
            "max_tokens": self.config.max_tokens,
        }
        if tools:
            payload["tools"] = [t.to_openai() for t in tools]
        return payload

    def complete(self, messages, tools=None):
        _check_messages(messages)
        headers = {"Content-Type": "application/json"}
        token = api_token()
        if token:
            headers["Authorization"] = f"Bearer {token}"
        poster = self.session or requests
        payload = self._payload(messages, tools)
        for attempt in range(MAX_TRANSPORT_TRIES):
            try:
                resp = poster.post(self._url(), json=payload, headers=headers, timeout=self.config.request_timeout)
            except requests.RequestException as exc:
                raise TransportError(f"chat completion failed: {exc}") from exc
            if resp.status_code == 429:
                if attempt + 1 < MAX_TRANSPORT_TRIES:
                    time.sleep(self.backoff * 2**attempt)
                    continue
                raise RateLimited(f"rate limited after {MAX_TRANSPORT_TRIES} tries")
            if resp.status_code >= 400:
                raise TransportError(f"chat completion returned HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return self._parse(resp.json())
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise TransportError(f"unexpected chat completion payload: {exc}") from exc
        raise AssertionError("unreachable")

    @staticmethod
    def _parse(body: dict[str, Any]) -> tuple[ChatMessage, CompletionUsage]:
        raw_usage = body.get("usage") or {}
        usage = CompletionUsage(int(raw_usage.get("prompt_tokens", 0)), int(raw_usage.get("completion_tokens", 0)))
        message = body["choices"][0]["message"]
        calls = []
        for i, call in enumerate(message.get("tool_calls") or []):
            fn = call.get("function") or {}
            args = fn.get("arguments", "{}")
            if isinstance(args, dict):
                args = json.dumps(args, sort_keys=True)
            try:
                parsed = json.loads(args)
            except ValueError:
                parsed = None
            if not isinstance(parsed, dict) or not fn.get("name"):
                reply = ChatMessage.assistant(message.get("content") or "")
                raise MalformedToolCall(f"tool call {i} has unparseable arguments: {args!r}", usage, reply)
            calls.append(ToolCall(id=str(call.get("id") or f"call_{i}"), tool_name=fn["name"], arguments=args))
        msg = ChatMessage.assistant(message.get("content") or "", calls or None)
        check_tool_syntax(msg, usage)
        return msg, usage


_replay_cache: dict[tuple[Path, int, int], ReplayScript] = {}
_replay_lock = threading.Lock()


def load_replay(path: str | Path) -> ReplayScript:
    resolved = Path(path).resolve()
    st = resolved.stat()
    key = (resolved, st.st_mtime_ns, st.st_size)
    with _replay_lock:
        if key not in _replay_cache:
            _replay_cache[key] = ReplayScript.load(resolved)
        return _replay_cache[key]


def open_client(config: LlmConfig, trial_id: str) -> ChatClient:
    """A client for one trial; replay clients get a fresh cursor."""
    if config.backend is Backend.REPLAY:
        return load_replay(config.replay_path).cursor(trial_id)
    return HttpChatClient(config)


def complete(
    messages: list[ChatMessage],
    tools: list[ToolSchema] | None,
    config: LlmConfig,
    trial_id: str = "",
) -> tuple[ChatMessage, CompletionUsage]:
    """One-shot completion. Replay mode always reads the trial's first turn."""
    return open_client(config, trial_id).complete(messages, tools)
