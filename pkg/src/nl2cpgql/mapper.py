"""Deterministic compiler from :class:`~nl2cpgql.schema.QuerySpec` to CPGQL.

Every spec compiles to exactly one query string. Templates, filter
fragments and column accessors are data (``data/templates.json``); this
module only selects and fills them in a fixed order.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from string import Template
from typing import Any

from .schema import (
    FILTER_FIELDS,
    FLOW_TYPES,
    REGEX_FIELDS,
    FlowEndpoint,
    QuerySpec,
    QueryType,
    StructuralFilter,
    spec_fingerprint,
)

# Java regex metacharacters plus the double quote
_REGEX_META = frozenset('\\^$.|?*+()[]{}"')
_CONTROL = re.compile(r"[\x00-\x1f\x7f]")
_PLACEHOLDER = re.compile(r"\$\{(\w+)\}")
IDENTITY_REGEX = ".*"


class UnsafeIdentifierError(ValueError):
    pass


class TemplateError(RuntimeError):
    """A template placeholder could not be filled. Always a defect in this package."""


@dataclass(frozen=True)
class CpgqlQuery:
    text: str
    spec_fingerprint: str


@dataclass(frozen=True)
class QueryTemplate:
    query_type: QueryType
    skeleton: str
    required_placeholders: frozenset[str]

    def render(self, values: dict[str, str]) -> str:
        missing = self.required_placeholders - values.keys()
        if missing:
            raise TemplateError(f"{self.query_type.value}: unfilled placeholders {sorted(missing)}")
        return Template(self.skeleton).substitute(values)


def placeholders(skeleton: str) -> frozenset[str]:
    return frozenset(_PLACEHOLDER.findall(skeleton))


def escape_identifier(raw: str) -> str:
    """Regex-quote a user identifier so a CPGQL name matcher matches it literally.

    Already-safe identifiers come back unchanged.
    """
    if not raw:
        raise UnsafeIdentifierError("identifier must not be empty")
    if _CONTROL.search(raw):
        raise UnsafeIdentifierError(f"identifier contains control characters: {raw!r}")
    return "".join("\\" + ch if ch in _REGEX_META else ch for ch in raw)


def scala_string(text: str) -> str:
    """Render ``text`` as a double-quoted Scala string literal."""
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


@lru_cache(maxsize=None)
def load_template_data() -> dict[str, Any]:
    raw = resources.files("nl2cpgql").joinpath("data/templates.json").read_text(encoding="utf-8")
    return json.loads(raw)


@lru_cache(maxsize=None)
def templates() -> dict[QueryType, QueryTemplate]:
    data = load_template_data()["templates"]
    out = {}
    for qt in QueryType:
        skeleton = data[qt.value]
        out[qt] = QueryTemplate(qt, skeleton, placeholders(skeleton))
    return out


@lru_cache(maxsize=None)
def reachable_template() -> QueryTemplate:
    skeleton = load_template_data()["reachable_template"]
    return QueryTemplate(QueryType.DATA_FLOW, skeleton, placeholders(skeleton))


def _fill(fragment: str, value: str) -> str:
    return Template(fragment).substitute(value=value)


def _filter_steps(flt: StructuralFilter | None, node: str) -> str:
    if flt is None:
        return ""
    data = load_template_data()
    fragments = data["filters"][node]
    steps = []
    for field in FILTER_FIELDS:  # fixed order regardless of input JSON order
        value = getattr(flt, field)
        if value is None or field not in fragments:
            continue
        if field in REGEX_FIELDS:
            if value == IDENTITY_REGEX:
                continue
            rendered = scala_string(value)
        elif field == "modifier":
            rendered = data["modifiers"][value.value]
        else:
            rendered = scala_string(escape_identifier(value))
        steps.append(_fill(fragments[field], rendered))
    return "".join(steps)


def _projection(columns, node: str) -> str:
    accessors = load_template_data()["columns"][node]
    if len(columns) == 1:
        return accessors[columns[0].value][0]
    exprs = ", ".join(accessors[c.value][1] for c in columns)
    return f".map(n => ({exprs}))"


def _limit(spec: QuerySpec) -> str:
    return f".take({spec.limit})" if spec.limit is not None else ""


def _endpoint(ep: FlowEndpoint, side: str) -> str:
    fragment = load_template_data()["endpoints"][side][ep.kind.value]
    return Template(fragment).substitute(target=scala_string(escape_identifier(ep.target)))


_STRUCTURAL_NODE = {
    QueryType.METHOD_QUERY: "method",
    QueryType.CALL_QUERY: "call",
    QueryType.ASSIGNMENT_QUERY: "assignment",
}


def compile_spec(spec: QuerySpec, *, reachable: bool = False) -> CpgqlQuery:
    """Compile a valid spec to its canonical CPGQL query.

    ``reachable=True`` renders a flow spec as the set of reaching source
    nodes (``reachableBy``) projected onto the output columns instead of
    full paths; the agent's ``find_reachable_by`` tool uses it.
    """
    if reachable and spec.query_type not in FLOW_TYPES:
        raise ValueError(f"reachable rendering needs a flow spec, got {spec.query_type.value}")
    if spec.query_type in FLOW_TYPES:
        if spec.source is None or spec.sink is None:
            raise TemplateError(f"{spec.query_type.value} spec reached the mapper without endpoints")
        values = {
            "source": _endpoint(spec.source, "source"),
            "source_filters": _filter_steps(spec.filter, "flow_source"),
            "sink": _endpoint(spec.sink, "sink"),
            "limit": _limit(spec),
        }
        if reachable:
            template = reachable_template()
            values["projection"] = _projection(spec.output_columns, spec.source.kind.value)
        else:
            template = templates()[spec.query_type]
            values["path_filters"] = _filter_steps(spec.filter, "flow_path")
    else:
        node = _STRUCTURAL_NODE[spec.query_type]
        template = templates()[spec.query_type]
        values = {
            "filters": _filter_steps(spec.filter, node),
            "projection": _projection(spec.output_columns, node),
            "limit": _limit(spec),
        }
    return CpgqlQuery(text=template.render(values), spec_fingerprint=spec_fingerprint(spec))

