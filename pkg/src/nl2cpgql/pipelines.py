"""Direct (A1), structured-IR (A2) and agentic (A3) translation pipelines.

Retry budgets follow the algorithms literally:

* A1 retries on Joern execution errors and empty extractions, 3 attempts.
* A2 retries on JSON parse/validation errors only, 3 attempts; the first
  valid spec is compiled and executed once, success or not.
* A3 has no retry, only a 10-step budget.
"""
from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Any

from .benchmark import Task
from .joern import ExecutionResult, JoernClient, normalize
from .llm import (
    ChatClient,
    ChatMessage,
    CompletionUsage,
    LlmConfig,
    LlmError,
    count_usage,
    open_client,
)
from .mapper import compile_spec
from .schema import InvalidSpecError, format_errors, parse_spec
from .tools import TOOL_SCHEMAS, tool_dispatch

MAX_ATTEMPTS = 3
MAX_STEPS = 10
ERROR_CAP = 2000
RECORD_VERSION = 1


class ApproachId(str, Enum):
    A1_DIRECT = "A1_direct"
    A2_STRUCTURED = "A2_structured"
    A3_AGENTIC = "A3_agentic"

    @property
    def short(self) -> str:
        return self.value.split("_", 1)[0]


class Status(str, Enum):
    SUCCESS = "success"
    FAIL_RETRIES_EXHAUSTED = "fail_retries_exhausted"
    FAIL_MAX_STEPS = "fail_max_steps"
    FAIL_EXECUTION = "fail_execution"
    FAIL_INFRASTRUCTURE = "fail_infrastructure"


@dataclass(frozen=True)
class TrialOutcome:
    status: Status
    final_output: str | None = None
    generated_query: str | None = None
    attempts: int = 0
    steps: int = 0
    tool_calls: int = 0
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "final_output": self.final_output,
            "generated_query": self.generated_query,
            "attempts": self.attempts,
            "steps": self.steps,
            "tool_calls": self.tool_calls,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TrialOutcome:
        return cls(
            status=Status(d["status"]),
            final_output=d.get("final_output"),
            generated_query=d.get("generated_query"),
            attempts=int(d.get("attempts", 0)),
            steps=int(d.get("steps", 0)),
            tool_calls=int(d.get("tool_calls", 0)),
            error=d.get("error"),
        )


@dataclass(frozen=True)
class TrialRecord:
    task_id: str
    approach: ApproachId
    model_id: str
    seed: int
    transcript: tuple[ChatMessage, ...]
    call_usages: tuple[CompletionUsage, ...]
    outcome: TrialOutcome
    wall_time: float = 0.0

    @property
    def usage(self) -> CompletionUsage:
        return count_usage(self.call_usages)

    @property
    def key(self) -> tuple[str, str, str, int]:
        return (self.approach.value, self.model_id, self.task_id, self.seed)

    @property
    def infrastructure_failed(self) -> bool:
        return self.outcome.status is Status.FAIL_INFRASTRUCTURE

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_version": RECORD_VERSION,
            "task_id": self.task_id,
            "approach": self.approach.value,
            "model_id": self.model_id,
            "seed": self.seed,
            "outcome": self.outcome.to_dict(),
            "usage": self.usage.to_dict(),
            "call_usages": [u.to_dict() for u in self.call_usages],
            "transcript": [m.to_dict() for m in self.transcript],
            "wall_time": round(self.wall_time, 6),
        }

    def to_json(self, include_wall_time: bool = True) -> str:
        d = self.to_dict()
        if not include_wall_time:
            d.pop("wall_time")
        return json.dumps(d, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TrialRecord:
        if d.get("record_version") != RECORD_VERSION:
            raise ValueError(f"unsupported record_version {d.get('record_version')!r}")
        return cls(
            task_id=d["task_id"],
            approach=ApproachId(d["approach"]),
            model_id=d["model_id"],
            seed=int(d["seed"]),
            transcript=tuple(ChatMessage.from_dict(m) for m in d.get("transcript", [])),
            call_usages=tuple(CompletionUsage.from_dict(u) for u in d.get("call_usages", [])),
            outcome=TrialOutcome.from_dict(d["outcome"]),
            wall_time=float(d.get("wall_time", 0.0)),
        )


def trial_id(approach: ApproachId, model_id: str, task_id: str, seed: int) -> str:
    return f"{approach.value}/{model_id}/{task_id}/{seed}"


# -- prompts -----------------------------------------------------------------

PROMPT_FILES = {
    ApproachId.A1_DIRECT: "prompts/direct_reference.md",
    ApproachId.A2_STRUCTURED: "prompts/structured_schema.md",
    ApproachId.A3_AGENTIC: "prompts/agentic_tools.md",
}
SCHEMA_MARKER = "{{QUERY_SPEC_SCHEMA}}"


def _data_text(name: str) -> str:
    return resources.files("nl2cpgql").joinpath("data", name).read_text(encoding="utf-8")


def prompt_files() -> list[tuple[str, str]]:
    """Every shipped prompt, as rendered for the model, with its file name."""
    return [(PROMPT_FILES[a], system_prompt(a)) for a in ApproachId]


@lru_cache(maxsize=None)
def system_prompt(approach: ApproachId) -> str:
    text = _data_text(PROMPT_FILES[approach])
    if approach is ApproachId.A2_STRUCTURED:
        text = text.replace(SCHEMA_MARKER, _data_text("query_spec.schema.json").strip())
    return text


def truncate_error(text: str, cap: int = ERROR_CAP) -> str:
    if len(text) <= cap:
        return text
    return text[:cap] + f"\n[truncated {len(text) - cap} characters]"


# -- A1 ----------------------------------------------------------------------

_FENCED = re.compile(r"```[^\n`]*\n?(.*?)```", re.DOTALL)
_QUERY_LINE = re.compile(r"^\s*((?:cpg\.|def ).*)$", re.MULTILINE)


def extract_query(assistant_text: str) -> str:
    """First fenced block, else first ``cpg.``/``def `` line, else the trimmed text."""
    m = _FENCED.search(assistant_text)
    if m:
        return m.group(1).strip()
    m = _QUERY_LINE.search(assistant_text)
    if m:
        return m.group(1).strip()
    return assistant_text.strip()


@dataclass
class _Conversation:
    messages: list[ChatMessage]
    usages: list[CompletionUsage] = field(default_factory=list)

    def ask(self, chat: ChatClient, tools=None) -> ChatMessage:
        try:
            reply, usage = chat.complete(self.messages, tools)
        except LlmError as exc:
            if exc.reply is not None:
                self.messages.append(exc.reply)
            if exc.reply is not None or exc.usage.total:
                self.usages.append(exc.usage)
            raise
        self.usages.append(usage)
        self.messages.append(reply)
        return reply

    def tell(self, text: str) -> None:
        self.messages.append(ChatMessage.user(text))


def _start(approach: ApproachId, task: Task) -> _Conversation:
    return _Conversation([ChatMessage.system(system_prompt(approach)), ChatMessage.user(task.request)])


def _record(task, approach, model_id, seed, convo, outcome, started) -> TrialRecord:
    return TrialRecord(
        task_id=task.id,
        approach=approach,
        model_id=model_id,
        seed=seed,
        transcript=tuple(convo.messages),
        call_usages=tuple(convo.usages),
        outcome=outcome,
        wall_time=time.perf_counter() - started,
    )


def _infra(exc: LlmError, **counts) -> TrialOutcome:
    return TrialOutcome(Status.FAIL_INFRASTRUCTURE, error=f"{exc.kind}: {exc}", **counts)


def _joern_infra(result: ExecutionResult, **counts) -> TrialOutcome:
    return TrialOutcome(Status.FAIL_INFRASTRUCTURE, error=f"{result.error_kind.value}: {result.error_message}", **counts)


def run_direct(task: Task, chat: ChatClient, joern: JoernClient, *, model_id: str = "", seed: int = 0,
               error_cap: int = ERROR_CAP) -> TrialRecord:
    approach = ApproachId.A1_DIRECT
    started = time.perf_counter()
    convo = _start(approach, task)
    query = None
    for attempt in range(1, MAX_ATTEMPTS + 1):
        try:
            reply = convo.ask(chat)
        except LlmError as exc:
            return _record(task, approach, model_id, seed, convo, _infra(exc, generated_query=query, attempts=attempt), started)
        query = extract_query(reply.content) or None
        if query is None:
            convo.tell("error: no CPGQL query found in your reply. Reply with a single query in a code block.")
            continue
        result = joern.execute(query)
        if result.ok:
            outcome = TrialOutcome(Status.SUCCESS, result.normalized_output, query, attempts=attempt)
            return _record(task, approach, model_id, seed, convo, outcome, started)
        if result.infrastructure_failure:
            return _record(task, approach, model_id, seed, convo, _joern_infra(result, generated_query=query, attempts=attempt), started)
        convo.tell(
            "The query\n```\n" + query + "\n```\nfailed on Joern with:\n"
            + truncate_error(result.error_message or "", error_cap)
            + "\nPlease correct the query."
        )
    outcome = TrialOutcome(Status.FAIL_RETRIES_EXHAUSTED, generated_query=query, attempts=MAX_ATTEMPTS)
    return _record(task, approach, model_id, seed, convo, outcome, started)


# -- A2 ----------------------------------------------------------------------

def run_structured(task: Task, chat: ChatClient, joern: JoernClient, *, model_id: str = "", seed: int = 0,
                   error_cap: int = ERROR_CAP) -> TrialRecord:
    approach = ApproachId.A2_STRUCTURED
    started = time.perf_counter()
    convo = _start(approach, task)
    for attempt in range(1, MAX_ATTEMPTS + 1):
        try:
            reply = convo.ask(chat)
        except LlmError as exc:
            return _record(task, approach, model_id, seed, convo, _infra(exc, attempts=attempt), started)
        try:
            spec = parse_spec(reply.content)
        except InvalidSpecError as exc:
            convo.tell(
                "The JSON does not conform to the schema:\n"
                + truncate_error(format_errors(exc.errors), error_cap)
                + "\nReply with a corrected JSON object."
            )
            continue
        query = compile_spec(spec).text
        result = joern.execute(query)  # executed once; no retry after a valid spec
        if result.ok:
            outcome = TrialOutcome(Status.SUCCESS, result.normalized_output, query, attempts=attempt)
        elif result.infrastructure_failure:
            outcome = _joern_infra(result, generated_query=query, attempts=attempt)
        else:
            outcome = TrialOutcome(Status.FAIL_EXECUTION, generated_query=query, attempts=attempt,
                                   error=f"query_error: {truncate_error(result.error_message or '', error_cap)}")
        return _record(task, approach, model_id, seed, convo, outcome, started)
    outcome = TrialOutcome(Status.FAIL_RETRIES_EXHAUSTED, attempts=MAX_ATTEMPTS)
    return _record(task, approach, model_id, seed, convo, outcome, started)


# -- A3 ----------------------------------------------------------------------

def run_agentic(task: Task, chat: ChatClient, joern: JoernClient, *, model_id: str = "", seed: int = 0,
                max_steps: int = MAX_STEPS) -> TrialRecord:
    approach = ApproachId.A3_AGENTIC
    started = time.perf_counter()
    convo = _start(approach, task)
    tools = list(TOOL_SCHEMAS)
    n_calls = 0
    for step in range(1, max_steps + 1):
        try:
            reply = convo.ask(chat, tools)
        except LlmError as exc:
            return _record(task, approach, model_id, seed, convo, _infra(exc, steps=step, tool_calls=n_calls), started)
        if reply.tool_calls:
            for call in reply.tool_calls:
                convo.messages.append(ChatMessage.tool(call.id, tool_dispatch(call, joern)))
                n_calls += 1
            continue
        answer = reply.content.strip()
        if answer:
            outcome = TrialOutcome(Status.SUCCESS, normalize(answer), steps=step, tool_calls=n_calls)
        else:
            outcome = TrialOutcome(Status.FAIL_EXECUTION, steps=step, tool_calls=n_calls, error="empty final answer")
        return _record(task, approach, model_id, seed, convo, outcome, started)
    outcome = TrialOutcome(Status.FAIL_MAX_STEPS, steps=max_steps, tool_calls=n_calls)
    return _record(task, approach, model_id, seed, convo, outcome, started)


RUNNERS = {
    ApproachId.A1_DIRECT: run_direct,
    ApproachId.A2_STRUCTURED: run_structured,
    ApproachId.A3_AGENTIC: run_agentic,
}


def run_trial(approach: ApproachId, task: Task, llm: LlmConfig, joern: JoernClient, seed: int | None = None) -> TrialRecord:
    """Run one trial with a fresh chat client (and replay cursor) for it."""
    if seed is not None and seed != llm.seed:
        llm = replace(llm, seed=seed)
    seed = llm.seed
    chat = open_client(llm, trial_id(approach, llm.model_id, task.id, seed))
    return RUNNERS[approach](task, chat, joern, model_id=llm.model_id, seed=seed)
