"""Typed intermediate representation for code-analysis queries.

A :class:`QuerySpec` captures *what* to ask of a code property graph
without any CPGQL syntax. LLM output is turned into a spec with
:func:`parse_spec`, which reports every violation it finds in one pass so
the whole list can be fed back to the model.

Schema v1 enumerations live in :data:`QUERY_TYPES`, :data:`OUTPUT_COLUMNS`
and :data:`ENDPOINT_KINDS`; the published JSON schema document
(``data/query_spec.schema.json``) mirrors them.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any

SCHEMA_VERSION = 1


class QueryType(str, Enum):
    METHOD_QUERY = "method_query"
    CALL_QUERY = "call_query"
    ASSIGNMENT_QUERY = "assignment_query"
    DATA_FLOW = "data_flow"
    COMPOSITE = "composite"


class OutputColumn(str, Enum):
    NAME = "name"
    FULL_NAME = "fullName"
    SIGNATURE = "signature"
    CODE = "code"
    LINE_NUMBER = "lineNumber"
    COLUMN_NUMBER = "columnNumber"
    FILENAME = "filename"
    TYPE_FULL_NAME = "typeFullName"
    METHOD_NAME = "methodName"
    ORDER = "order"


class EndpointKind(str, Enum):
    PARAMETER = "parameter"
    CALL = "call"
    LITERAL = "literal"


class Modifier(str, Enum):
    PUBLIC = "public"
    PRIVATE = "private"
    PROTECTED = "protected"
    STATIC = "static"


QUERY_TYPES = tuple(t.value for t in QueryType)
OUTPUT_COLUMNS = tuple(c.value for c in OutputColumn)
ENDPOINT_KINDS = tuple(k.value for k in EndpointKind)
MODIFIERS = tuple(m.value for m in Modifier)

STRUCTURAL_TYPES = frozenset(
    {QueryType.METHOD_QUERY, QueryType.CALL_QUERY, QueryType.ASSIGNMENT_QUERY}
)
FLOW_TYPES = frozenset({QueryType.DATA_FLOW, QueryType.COMPOSITE})

# field order is the canonical order used by fingerprints and the mapper
SPEC_FIELDS = ("query_type", "filter", "source", "sink", "output_columns", "limit")
FILTER_FIELDS = ("method_name", "type_name", "modifier", "annotation", "target_identifier")
ENDPOINT_FIELDS = ("kind", "method", "name", "value")
REGEX_FIELDS = ("method_name", "type_name")
IDENTIFIER_FIELDS = ("annotation", "target_identifier")

# which endpoint attribute each kind requires; the others must be absent
ENDPOINT_REQUIRES = {
    EndpointKind.PARAMETER: "method",
    EndpointKind.CALL: "name",
    EndpointKind.LITERAL: "value",
}

MAX_TEXT_LENGTH = 512

_CONTROL_CHARS = re.compile(r"[\x00-\x1f\x7f]")
_IDENTIFIER = re.compile(r"[^\s\x00-\x1f\x7f]+")


class ErrorReason(str, Enum):
    PARSE_ERROR = "parse_error"
    UNKNOWN_FIELD = "unknown_field"
    MISSING_FIELD = "missing_field"
    BAD_ENUM = "bad_enum"
    CONSTRAINT_VIOLATION = "constraint_violation"


@dataclass(frozen=True)
class ValidationError:
    """One schema violation. ``path`` is a JSON pointer, empty only for parse errors."""

    path: str
    reason: ErrorReason
    message: str

    def __str__(self) -> str:
        where = self.path or "<document>"
        return f"{where}: {self.reason.value}: {self.message}"


class InvalidSpecError(ValueError):
    """Raised by :func:`parse_spec`; carries every violation found."""

    def __init__(self, errors: list[ValidationError]):
        self.errors = list(errors)
        super().__init__("; ".join(str(e) for e in self.errors))


@dataclass(frozen=True)
class StructuralFilter:
    method_name: str | None = None
    type_name: str | None = None
    modifier: Modifier | None = None
    annotation: str | None = None
    target_identifier: str | None = None

    def is_empty(self) -> bool:
        return all(getattr(self, f) is None for f in FILTER_FIELDS)


@dataclass(frozen=True)
class FlowEndpoint:
    kind: EndpointKind
    method: str | None = None
    name: str | None = None
    value: str | None = None

    @property
    def target(self) -> str:
        """The one attribute this endpoint kind carries."""
        return getattr(self, ENDPOINT_REQUIRES[self.kind])


@dataclass(frozen=True)
class QuerySpec:
    query_type: QueryType
    output_columns: tuple[OutputColumn, ...]
    filter: StructuralFilter | None = None
    source: FlowEndpoint | None = None
    sink: FlowEndpoint | None = None
    limit: int | None = None

    def to_dict(self) -> dict[str, Any]:
        """Plain JSON-ready dict in canonical field order, absent fields omitted."""
        out: dict[str, Any] = {"query_type": self.query_type.value}
        if self.filter is not None:
            out["filter"] = {
                f: _plain(getattr(self.filter, f))
                for f in FILTER_FIELDS
                if getattr(self.filter, f) is not None
            }
        for side in ("source", "sink"):
            ep = getattr(self, side)
            if ep is not None:
                out[side] = {
                    f: _plain(getattr(ep, f))
                    for f in ENDPOINT_FIELDS
                    if getattr(ep, f) is not None
                }
        out["output_columns"] = [c.value for c in self.output_columns]
        if self.limit is not None:
            out["limit"] = self.limit
        return out


def _plain(value: Any) -> Any:
    return value.value if isinstance(value, Enum) else value


def serialize_spec(spec: QuerySpec, indent: int | None = 2) -> str:
    return json.dumps(spec.to_dict(), indent=indent, ensure_ascii=False)


def spec_fingerprint(spec: QuerySpec) -> str:
    """Canonical text for ``spec``. Equal specs give byte-equal fingerprints."""
    return json.dumps(spec.to_dict(), separators=(",", ":"), ensure_ascii=True)


# -- JSON extraction ---------------------------------------------------------

_FENCE = re.compile(r"```[A-Za-z0-9_+-]*[ \t]*\n(.*?)```", re.DOTALL)


def _balanced_object(text: str) -> str | None:
    """First balanced ``{...}`` region of ``text``, string-literal aware."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        # unbalanced from this brace; try the next one
        start = text.find("{", start + 1)
    return None


def extract_json_object(document: str) -> str | None:
    """Return the JSON object text inside ``document``.

    A fenced block that contains an object wins over raw text; otherwise the
    first balanced brace region is taken.
    """
    for match in _FENCE.finditer(document):
        found = _balanced_object(match.group(1))
        if found is not None:
            return found
    return _balanced_object(document)


# -- validation --------------------------------------------------------------

def check_regex(pattern: str) -> str | None:
    """Return a problem description if ``pattern`` is outside the regex dialect.

    Allowed: literals, ``. * + ? [] () |``, anchors and backslash-escaped
    punctuation. Backreferences, class shorthands like ``\\d``, counted
    repetition and ``(?...)`` extensions are rejected.
    """
    if not pattern:
        return "must be a non-empty regex"
    if _CONTROL_CHARS.search(pattern):
        return "must not contain control characters"
    i = 0
    while i < len(pattern):
        ch = pattern[i]
        if ch == "\\":
            if i + 1 == len(pattern):
                return "dangling backslash"
            nxt = pattern[i + 1]
            if nxt.isdigit():
                return "backreferences are not allowed"
            if nxt.isalpha():
                return "escape sequences other than escaped punctuation are not allowed"
            i += 2
            continue
        if ch in "{}":
            return "counted repetition '{m,n}' is not allowed"
        if ch == "(" and pattern.startswith("?", i + 1):
            return "group extensions '(?...)' are not allowed"
        i += 1
    try:
        re.compile(pattern)
    except (re.error, RecursionError, OverflowError) as exc:
        return f"does not compile: {exc}"
    return None


class _Collector:
    def __init__(self) -> None:
        self.errors: list[ValidationError] = []

    def add(self, path: str, reason: ErrorReason, message: str) -> None:
        self.errors.append(ValidationError(path, reason, message))

    def unknown(self, obj: dict, allowed: tuple[str, ...], base: str) -> None:
        for key in obj:
            if key not in allowed:
                self.add(f"{base}/{_escape_pointer(key)}", ErrorReason.UNKNOWN_FIELD, f"unknown field {key!r}")

    def enum(self, value: Any, allowed: tuple[str, ...], path: str) -> str | None:
        if not isinstance(value, str):
            self.add(path, ErrorReason.CONSTRAINT_VIOLATION, f"expected a string, got {type(value).__name__}")
            return None
        if value not in allowed:
            self.add(path, ErrorReason.BAD_ENUM, f"{value!r} is not one of {', '.join(allowed)}")
            return None
        return value

    def identifier(self, value: Any, path: str) -> str | None:
        if not isinstance(value, str):
            self.add(path, ErrorReason.CONSTRAINT_VIOLATION, f"expected a string, got {type(value).__name__}")
            return None
        if len(value) > MAX_TEXT_LENGTH or not _IDENTIFIER.fullmatch(value):
            self.add(path, ErrorReason.CONSTRAINT_VIOLATION, "must be a non-empty identifier without whitespace or control characters")
            return None
        return value

    def literal(self, value: Any, path: str) -> str | None:
        if not isinstance(value, str):
            self.add(path, ErrorReason.CONSTRAINT_VIOLATION, f"expected a string, got {type(value).__name__}")
            return None
        if not value or len(value) > MAX_TEXT_LENGTH or _CONTROL_CHARS.search(value):
            self.add(path, ErrorReason.CONSTRAINT_VIOLATION, "must be a non-empty string without control characters")
            return None
        return value

    def regex(self, value: Any, path: str) -> str | None:
        if not isinstance(value, str):
            self.add(path, ErrorReason.CONSTRAINT_VIOLATION, f"expected a string, got {type(value).__name__}")
            return None
        problem = check_regex(value)
        if problem is None and len(value) > MAX_TEXT_LENGTH:
            problem = "too long"
        if problem:
            self.add(path, ErrorReason.CONSTRAINT_VIOLATION, f"regex {problem}")
            return None
        return value


def _escape_pointer(key: str) -> str:
    return key.replace("~", "~0").replace("/", "~1")


def _validate_filter(raw: Any, c: _Collector) -> StructuralFilter | None:
    if not isinstance(raw, dict):
        c.add("/filter", ErrorReason.CONSTRAINT_VIOLATION, "filter must be an object")
        return None
    c.unknown(raw, FILTER_FIELDS, "/filter")
    values: dict[str, Any] = {}
    ok = True
    for field in FILTER_FIELDS:
        if field not in raw:
            continue
        path = f"/filter/{field}"
        if field in REGEX_FIELDS:
            v = c.regex(raw[field], path)
        elif field == "modifier":
            v = c.enum(raw[field], MODIFIERS, path)
            v = Modifier(v) if v is not None else None
        else:
            v = c.identifier(raw[field], path)
        if v is None:
            ok = False
        else:
            values[field] = v
    if not any(f in raw for f in FILTER_FIELDS):
        c.add("/filter", ErrorReason.CONSTRAINT_VIOLATION, "filter must set at least one of " + ", ".join(FILTER_FIELDS))
        ok = False
    return StructuralFilter(**values) if ok else None


def _validate_endpoint(raw: Any, side: str, c: _Collector) -> FlowEndpoint | None:
    base = f"/{side}"
    if not isinstance(raw, dict):
        c.add(base, ErrorReason.CONSTRAINT_VIOLATION, f"{side} must be an object")
        return None
    c.unknown(raw, ENDPOINT_FIELDS, base)
    if "kind" not in raw:
        c.add(f"{base}/kind", ErrorReason.MISSING_FIELD, "kind is required")
        return None
    kind_value = c.enum(raw["kind"], ENDPOINT_KINDS, f"{base}/kind")
    if kind_value is None:
        return None
    kind = EndpointKind(kind_value)
    required = ENDPOINT_REQUIRES[kind]
    ok = True
    for attr in ("method", "name", "value"):
        if attr == required:
            continue
        if attr in raw:
            c.add(f"{base}/{attr}", ErrorReason.CONSTRAINT_VIOLATION, f"{attr} is not allowed for kind {kind.value!r}")
            ok = False
    if required not in raw:
        c.add(f"{base}/{required}", ErrorReason.MISSING_FIELD, f"{required} is required for kind {kind.value!r}")
        return None
    check = c.literal if required == "value" else c.identifier
    target = check(raw[required], f"{base}/{required}")
    if target is None or not ok:
        return None
    return FlowEndpoint(kind=kind, **{required: target})


def _validate_columns(raw: Any, c: _Collector) -> tuple[OutputColumn, ...] | None:
    if not isinstance(raw, list):
        c.add("/output_columns", ErrorReason.CONSTRAINT_VIOLATION, "output_columns must be a list")
        return None
    if not raw:
        c.add("/output_columns", ErrorReason.CONSTRAINT_VIOLATION, "output_columns must not be empty")
        return None
    ok = True
    if len(raw) > len(OUTPUT_COLUMNS):
        c.add("/output_columns", ErrorReason.CONSTRAINT_VIOLATION, f"at most {len(OUTPUT_COLUMNS)} columns")
        ok = False
    seen: set[str] = set()
    columns: list[OutputColumn] = []
    for i, item in enumerate(raw):
        v = c.enum(item, OUTPUT_COLUMNS, f"/output_columns/{i}")
        if v is None:
            ok = False
            continue
        if v in seen:
            c.add(f"/output_columns/{i}", ErrorReason.CONSTRAINT_VIOLATION, f"duplicate column {v!r}")
            ok = False
            continue
        seen.add(v)
        columns.append(OutputColumn(v))
    return tuple(columns) if ok else None


def validate_document(obj: Any) -> QuerySpec:
    """Validate an already-decoded JSON value; raise :class:`InvalidSpecError`."""
    c = _Collector()
    if not isinstance(obj, dict):
        c.add("", ErrorReason.PARSE_ERROR, "top-level JSON value must be an object")
        raise InvalidSpecError(c.errors)
    c.unknown(obj, SPEC_FIELDS, "")

    query_type: QueryType | None = None
    if "query_type" not in obj:
        c.add("/query_type", ErrorReason.MISSING_FIELD, "query_type is required")
    else:
        v = c.enum(obj["query_type"], QUERY_TYPES, "/query_type")
        query_type = QueryType(v) if v is not None else None

    flt = _validate_filter(obj["filter"], c) if "filter" in obj else None
    source = _validate_endpoint(obj["source"], "source", c) if "source" in obj else None
    sink = _validate_endpoint(obj["sink"], "sink", c) if "sink" in obj else None

    columns = None
    if "output_columns" not in obj:
        c.add("/output_columns", ErrorReason.MISSING_FIELD, "output_columns is required")
    else:
        columns = _validate_columns(obj["output_columns"], c)

    limit = None
    if "limit" in obj:
        raw_limit = obj["limit"]
        if isinstance(raw_limit, bool) or not isinstance(raw_limit, int) or raw_limit < 1:
            c.add("/limit", ErrorReason.CONSTRAINT_VIOLATION, "limit must be a positive integer")
        else:
            limit = raw_limit

    if query_type in FLOW_TYPES:
        for side in ("source", "sink"):
            if side not in obj:
                c.add(f"/{side}", ErrorReason.MISSING_FIELD, f"{side} is required for {query_type.value}")
        if query_type is QueryType.COMPOSITE and "filter" not in obj:
            c.add("/filter", ErrorReason.MISSING_FIELD, "filter is required for composite")
    elif query_type in STRUCTURAL_TYPES:
        for side in ("source", "sink"):
            if side in obj:
                c.add(f"/{side}", ErrorReason.CONSTRAINT_VIOLATION, f"{side} is not allowed for {query_type.value}")
        if "filter" not in obj:
            c.add("/filter", ErrorReason.MISSING_FIELD, f"filter is required for {query_type.value}")

    if c.errors:
        raise InvalidSpecError(c.errors)
    assert query_type is not None and columns is not None
    return QuerySpec(
        query_type=query_type,
        output_columns=columns,
        filter=flt,
        source=source,
        sink=sink,
        limit=limit,
    )


def parse_spec(document: str) -> QuerySpec:
    """Pull a validated QuerySpec out of free-form LLM text.

    Raises :class:`InvalidSpecError` listing all violations. No other
    exception escapes for any ``str`` input.
    """
    if not isinstance(document, str):
        raise InvalidSpecError([ValidationError("", ErrorReason.PARSE_ERROR, "document must be text")])
    text = extract_json_object(document)
    if text is None:
        raise InvalidSpecError([ValidationError("", ErrorReason.PARSE_ERROR, "no JSON object found")])
    try:
        obj = json.loads(text)
    except (ValueError, RecursionError) as exc:
        raise InvalidSpecError([ValidationError("", ErrorReason.PARSE_ERROR, f"invalid JSON: {exc}")]) from None
    return validate_document(obj)


def format_errors(errors: list[ValidationError]) -> str:
    return "\n".join(f"- {e}" for e in errors)
