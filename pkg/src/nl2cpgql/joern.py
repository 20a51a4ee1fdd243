"""Execute CPGQL against a Joern server or a recorded fixture map.

Live mode posts ``{"query": ...}`` to the server's synchronous query
endpoint (``/query-sync`` on ``joern --server``). Fixture mode looks the
query up, keyed by its normalized text, in a JSON file of recorded raw
outputs. Neither path raises: every failure is an :class:`ExecutionResult`
with ``ok=False`` and an ``error_kind``.
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

import requests

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
DEFAULT_QUERY_PATH = "/query-sync"
ENDPOINT_ENV = "NL2CPGQL_JOERN_ENDPOINT"

# `val res12: List[String] = ` -- index and type are opaque
_REPL_PREFIX = re.compile(r"\s*val\s+res\d+\s*:.*?\s=(?:\s+|\Z)", re.DOTALL)

# Joern reports compile errors on stdout with success=true, so errors are
# recognised by shape rather than by transport status.
_ERROR_SHAPES = (
    re.compile(r"^\s*--\s*\[E\d+\]"),  # Scala 3 compiler diagnostics
    re.compile(r"^\s*(?:-- )?(?:\w+ )?[Ee]rror:"),
    re.compile(r"^\s*(?:[\w$]+\.)+[\w$]*(?:Exception|Error)\b"),
    re.compile(r"^\s*Not found: "),
)


class Mode(str, Enum):
    LIVE = "live"
    FIXTURE = "fixture"


class ErrorKind(str, Enum):
    CONNECTION_FAILURE = "connection_failure"
    TIMEOUT = "timeout"
    QUERY_ERROR = "query_error"
    FIXTURE_MISS = "fixture_miss"


# failures that say nothing about the query itself
INFRASTRUCTURE_ERRORS = frozenset({ErrorKind.CONNECTION_FAILURE, ErrorKind.FIXTURE_MISS})


def _strip_prefixes(text: str) -> str:
    while True:
        m = _REPL_PREFIX.match(text)
        if m is None or m.end() == 0:
            return text
        text = text[m.end():]


def normalize(raw: str) -> str:
    """Strip REPL ``val resN: T = `` prefixes and collapse all whitespace.

    Idempotent and never longer than its input.
    """
    lines = [_strip_prefixes(line) for line in raw.splitlines()]
    collapsed = " ".join(" ".join(lines).split())
    return _strip_prefixes(collapsed)


def looks_like_error(raw: str) -> bool:
    return any(rx.search(raw) for rx in _ERROR_SHAPES)


@dataclass(frozen=True)
class BackendConfig:
    mode: Mode
    endpoint: str | None = None
    timeout: float = DEFAULT_TIMEOUT
    fixture_path: Path | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.mode is Mode.LIVE and not self.endpoint:
            raise ValueError("live mode requires an endpoint")
        if self.mode is Mode.FIXTURE and self.fixture_path is None:
            raise ValueError("fixture mode requires fixture_path")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.fixture_path is not None:
            object.__setattr__(self, "fixture_path", Path(self.fixture_path))

    @classmethod
    def live(cls, endpoint: str | None = None, timeout: float = DEFAULT_TIMEOUT) -> BackendConfig:
        return cls(Mode.LIVE, endpoint=endpoint or os.environ.get(ENDPOINT_ENV), timeout=timeout)

    @classmethod
    def fixture(cls, path: str | Path) -> BackendConfig:
        return cls(Mode.FIXTURE, fixture_path=Path(path))


@dataclass(frozen=True)
class ExecutionResult:
    ok: bool
    raw_output: str
    normalized_output: str
    error_message: str | None = None
    error_kind: ErrorKind | None = None
    latency_ms: float = 0.0

    @classmethod
    def success(cls, raw: str, latency_ms: float) -> ExecutionResult:
        return cls(True, raw, normalize(raw), latency_ms=latency_ms)

    @classmethod
    def failure(cls, kind: ErrorKind, message: str, raw: str = "", latency_ms: float = 0.0) -> ExecutionResult:
        return cls(False, raw, normalize(raw), error_message=message, error_kind=kind, latency_ms=latency_ms)

    @property
    def infrastructure_failure(self) -> bool:
        return self.error_kind in INFRASTRUCTURE_ERRORS


def load_fixture(path: str | Path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
        raise ValueError(f"{path}: fixture must map query text to raw output text")
    # re-key defensively so hand-edited fixtures still hit
    return {normalize(k): v for k, v in data.items()}


def save_fixture(entries: dict[str, str], path: str | Path) -> None:
    keyed = {normalize(k): v for k, v in entries.items()}
    Path(path).write_text(json.dumps(keyed, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


class JoernClient:
    """One client per server; queries are serialized because Joern holds a single CPG."""

    def __init__(self, config: BackendConfig, session: requests.Session | None = None):
        self.config = config
        self._lock = threading.Lock()
        self._fixture: dict[str, str] | None = None
        self._session = session
        if config.mode is Mode.FIXTURE:
            self._fixture = load_fixture(config.fixture_path)

    def execute(self, query: str) -> ExecutionResult:
        if not query or not query.strip():
            return ExecutionResult.failure(ErrorKind.QUERY_ERROR, "empty query")
        if self._fixture is not None:
            return self._execute_fixture(query)
        with self._lock:
            return self._execute_live(query)

    def _execute_fixture(self, query: str) -> ExecutionResult:
        raw = self._fixture.get(normalize(query))
        if raw is None:
            return ExecutionResult.failure(ErrorKind.FIXTURE_MISS, "no recorded output for query")
        if looks_like_error(raw):
            return ExecutionResult.failure(ErrorKind.QUERY_ERROR, raw.strip(), raw=raw)
        return ExecutionResult.success(raw, 0.0)

    def _url(self) -> str:
        endpoint = self.config.endpoint.rstrip("/")
        if endpoint.endswith(DEFAULT_QUERY_PATH):
            return endpoint
        return endpoint + DEFAULT_QUERY_PATH

    def _execute_live(self, query: str) -> ExecutionResult:
        poster = self._session or requests
        start = time.perf_counter()
        try:
            resp = poster.post(self._url(), json={"query": query}, timeout=self.config.timeout)
        except requests.Timeout:
            elapsed = (time.perf_counter() - start) * 1000
            return ExecutionResult.failure(ErrorKind.TIMEOUT, f"query timed out after {self.config.timeout:g}s", latency_ms=elapsed)
        except requests.RequestException as exc:
            elapsed = (time.perf_counter() - start) * 1000
            return ExecutionResult.failure(ErrorKind.CONNECTION_FAILURE, f"cannot reach Joern: {exc}", latency_ms=elapsed)
        elapsed = (time.perf_counter() - start) * 1000
        if resp.status_code >= 500 or resp.status_code in (404, 405):
            return ExecutionResult.failure(ErrorKind.CONNECTION_FAILURE, f"Joern server answered HTTP {resp.status_code}", raw=resp.text, latency_ms=elapsed)
        try:
            body = resp.json()
        except ValueError:
            body = {"success": resp.ok, "stdout": resp.text}
        stdout = str(body.get("stdout") or "")
        stderr = str(body.get("stderr") or "")
        if not body.get("success", False) or not resp.ok:
            message = (stderr or stdout or f"HTTP {resp.status_code}").strip()
            return ExecutionResult.failure(ErrorKind.QUERY_ERROR, message, raw=stdout or stderr, latency_ms=elapsed)
        if looks_like_error(stdout):
            return ExecutionResult.failure(ErrorKind.QUERY_ERROR, stdout.strip(), raw=stdout, latency_ms=elapsed)
        return ExecutionResult.success(stdout, elapsed)


def execute(query: str, config: BackendConfig) -> ExecutionResult:
    return JoernClient(config).execute(query)
