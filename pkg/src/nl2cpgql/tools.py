"""The five analysis tools exposed to the agentic pipeline.

Four tools build a :class:`~nl2cpgql.schema.QuerySpec` from their arguments
and run the mapper's query; ``run_custom_query`` forwards raw CPGQL. Tool
failures are returned as text starting with ``error:`` so the agent can
observe them and carry on.
"""
from __future__ import annotations

import json
from typing import Any, Callable

from jsonschema import Draft202012Validator

from .joern import JoernClient
from .llm import ToolCall, ToolSchema
from .mapper import compile_spec
from .schema import ENDPOINT_KINDS, MODIFIERS, OUTPUT_COLUMNS, InvalidSpecError, validate_document

_COLUMNS = {"type": "array", "items": {"enum": list(OUTPUT_COLUMNS)}, "minItems": 1, "uniqueItems": True}
_LIMIT = {"type": "integer", "minimum": 1}
_ENDPOINT = {
    "type": "object",
    "properties": {
        "kind": {"enum": list(ENDPOINT_KINDS)},
        "method": {"type": "string", "description": "enclosing method name (kind=parameter)"},
        "name": {"type": "string", "description": "called method name (kind=call)"},
        "value": {"type": "string", "description": "literal source text (kind=literal)"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}


def _object(properties: dict[str, Any], required: tuple[str, ...] = ()) -> dict[str, Any]:
    return {"type": "object", "properties": properties, "required": list(required), "additionalProperties": False}


TOOL_SCHEMAS: tuple[ToolSchema, ...] = (
    ToolSchema(
        "find_methods",
        "List methods, optionally filtered by name regex, declaring class regex, modifier or annotation.",
        _object({
            "name": {"type": "string", "description": "regex over method names"},
            "class_name": {"type": "string", "description": "regex over the declaring type's name"},
            "modifier": {"enum": list(MODIFIERS)},
            "annotation": {"type": "string", "description": "annotation name"},
            "columns": _COLUMNS,
            "limit": _LIMIT,
        }),
    ),
    ToolSchema(
        "find_calls",
        "List call sites, optionally filtered by callee name regex, caller class regex or an identifier argument.",
        _object({
            "name": {"type": "string", "description": "regex over called method names"},
            "in_class": {"type": "string", "description": "regex over the caller's declaring type"},
            "argument": {"type": "string", "description": "identifier passed as an argument"},
            "columns": _COLUMNS,
            "limit": _LIMIT,
        }),
    ),
    ToolSchema(
        "trace_data_flow",
        "Render every data-flow path from a source endpoint to a sink endpoint.",
        _object({"source": _ENDPOINT, "sink": _ENDPOINT, "limit": _LIMIT}, ("source", "sink")),
    ),
    ToolSchema(
        "find_reachable_by",
        "List the source nodes that reach a sink endpoint, projected onto the requested columns.",
        _object({"source": _ENDPOINT, "sink": _ENDPOINT, "columns": _COLUMNS, "limit": _LIMIT}, ("source", "sink")),
    ),
    ToolSchema(
        "run_custom_query",
        "Run a raw CPGQL query and return its output.",
        _object({"query": {"type": "string", "minLength": 1}}, ("query",)),
    ),
)

TOOL_NAMES = tuple(t.name for t in TOOL_SCHEMAS)
_VALIDATORS = {t.name: Draft202012Validator(t.parameters) for t in TOOL_SCHEMAS}


class BadArguments(ValueError):
    pass


def _with_limit(doc: dict[str, Any], args: dict[str, Any]) -> dict[str, Any]:
    if "limit" in args:
        doc["limit"] = args["limit"]
    return doc


def _methods_spec(args: dict[str, Any]) -> dict[str, Any]:
    flt = {k: args[a] for a, k in (("name", "method_name"), ("class_name", "type_name"), ("modifier", "modifier"), ("annotation", "annotation")) if a in args}
    return _with_limit({
        "query_type": "method_query",
        "filter": flt or {"method_name": ".*"},
        "output_columns": args.get("columns", ["name"]),
    }, args)


def _calls_spec(args: dict[str, Any]) -> dict[str, Any]:
    flt = {k: args[a] for a, k in (("name", "method_name"), ("in_class", "type_name"), ("argument", "target_identifier")) if a in args}
    return _with_limit({
        "query_type": "call_query",
        "filter": flt or {"method_name": ".*"},
        "output_columns": args.get("columns", ["code"]),
    }, args)


def _flow_spec(args: dict[str, Any], default_columns: list[str]) -> dict[str, Any]:
    return _with_limit({
        "query_type": "data_flow",
        "source": args["source"],
        "sink": args["sink"],
        "output_columns": args.get("columns", default_columns),
    }, args)


def tool_query(name: str, args: dict[str, Any]) -> str:
    """The CPGQL a tool call runs. Raises :class:`BadArguments`."""
    builders: dict[str, Callable[[], tuple[dict[str, Any], bool]]] = {
        "find_methods": lambda: (_methods_spec(args), False),
        "find_calls": lambda: (_calls_spec(args), False),
        "trace_data_flow": lambda: (_flow_spec(args, ["code", "lineNumber"]), False),
        "find_reachable_by": lambda: (_flow_spec(args, ["code"]), True),
    }
    if name == "run_custom_query":
        return args["query"]
    doc, reachable = builders[name]()
    try:
        spec = validate_document(doc)
    except InvalidSpecError as exc:
        raise BadArguments(str(exc)) from None
    return compile_spec(spec, reachable=reachable).text


def parse_arguments(call: ToolCall) -> dict[str, Any]:
    try:
        args = json.loads(call.arguments or "{}")
    except ValueError as exc:
        raise BadArguments(f"arguments are not JSON: {exc}") from None
    if not isinstance(args, dict):
        raise BadArguments("arguments must be a JSON object")
    problems = sorted(_VALIDATORS[call.tool_name].iter_errors(args), key=lambda e: list(e.path))
    if problems:
        raise BadArguments("; ".join(f"/{'/'.join(map(str, e.path))}: {e.message}" for e in problems))
    return args


def tool_dispatch(call: ToolCall, joern: JoernClient) -> str:
    """Execute one tool call; the return value becomes the tool message content."""
    if call.tool_name not in _VALIDATORS:
        return f"error: unknown tool {call.tool_name!r}; available: {', '.join(TOOL_NAMES)}"
    try:
        query = tool_query(call.tool_name, parse_arguments(call))
    except BadArguments as exc:
        return f"error: bad arguments: {exc}"
    result = joern.execute(query)
    if not result.ok:
        kind = result.error_kind.value if result.error_kind else "error"
        return f"error: {kind}: {result.error_message}"
    return result.normalized_output or "(empty result)"
