from __future__ import annotations

import json
import random
from importlib import resources

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from jsonschema import Draft202012Validator

from nl2cpgql.schema import (
    ErrorReason,
    InvalidSpecError,
    QuerySpec,
    check_regex,
    extract_json_object,
    format_errors,
    parse_spec,
    serialize_spec,
    spec_fingerprint,
    validate_document,
)

from .conftest import ORDER_FLOW_SPEC
from .test_mapper import CASES, random_spec

SCHEMA = json.loads(resources.files("nl2cpgql").joinpath("data/query_spec.schema.json").read_text(encoding="utf-8"))
JSON_SCHEMA = Draft202012Validator(SCHEMA)


def errors_of(doc) -> list[tuple[str, ErrorReason]]:
    with pytest.raises(InvalidSpecError) as info:
        validate_document(doc)
    return [(e.path, e.reason) for e in info.value.errors]


def with_changes(base: dict, **changes) -> dict:
    doc = json.loads(json.dumps(base))
    for key, value in changes.items():
        if value is None:
            doc.pop(key, None)
        else:
            doc[key] = value
    return doc


def test_order_flow_validates():
    spec = validate_document(ORDER_FLOW_SPEC)
    assert spec.query_type.value == "data_flow"
    assert spec.source.target == "processOrder"
    assert spec.sink.target == "execute"
    assert [c.value for c in spec.output_columns] == ["code", "lineNumber"]


def test_unknown_fields_rejected_everywhere():
    doc = with_changes(ORDER_FLOW_SPEC, extra=1)
    doc["source"]["line"] = 3
    errs = errors_of(doc)
    assert ("/extra", ErrorReason.UNKNOWN_FIELD) in errs
    assert ("/source/line", ErrorReason.UNKNOWN_FIELD) in errs


@pytest.mark.parametrize(
    "changes, expected",
    [
        ({"query_type": "taint_query"}, ("/query_type", ErrorReason.BAD_ENUM)),
        ({"query_type": None}, ("/query_type", ErrorReason.MISSING_FIELD)),
        ({"output_columns": ["code", "colour"]}, ("/output_columns/1", ErrorReason.BAD_ENUM)),
        ({"output_columns": []}, ("/output_columns", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"output_columns": ["code", "code"]}, ("/output_columns/1", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"output_columns": None}, ("/output_columns", ErrorReason.MISSING_FIELD)),
        ({"limit": 0}, ("/limit", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"limit": True}, ("/limit", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"limit": "5"}, ("/limit", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"sink": None}, ("/sink", ErrorReason.MISSING_FIELD)),
        ({"source": {"kind": "variable", "name": "x"}}, ("/source/kind", ErrorReason.BAD_ENUM)),
        ({"source": {"kind": "call", "method": "x"}}, ("/source/method", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"source": {"kind": "parameter"}}, ("/source/method", ErrorReason.MISSING_FIELD)),
        ({"source": {"method": "x"}}, ("/source/kind", ErrorReason.MISSING_FIELD)),
        ({"sink": {"kind": "call", "name": "has space"}}, ("/sink/name", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"sink": {"kind": "literal", "value": ""}}, ("/sink/value", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"sink": "execute"}, ("/sink", ErrorReason.CONSTRAINT_VIOLATION)),
    ],
)
def test_flow_violations(changes, expected):
    assert expected in errors_of(with_changes(ORDER_FLOW_SPEC, **changes))


STRUCTURAL = {"query_type": "method_query", "filter": {"method_name": "main"}, "output_columns": ["name"]}


@pytest.mark.parametrize(
    "changes, expected",
    [
        ({"filter": None}, ("/filter", ErrorReason.MISSING_FIELD)),
        ({"filter": {}}, ("/filter", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"filter": {"modifier": "exported"}}, ("/filter/modifier", ErrorReason.BAD_ENUM)),
        ({"filter": {"method_name": "(a"}}, ("/filter/method_name", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"filter": {"method_name": "a{2}"}}, ("/filter/method_name", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"filter": {"type_name": "\\d+"}}, ("/filter/type_name", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"filter": {"annotation": ""}}, ("/filter/annotation", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"source": {"kind": "call", "name": "x"}}, ("/source", ErrorReason.CONSTRAINT_VIOLATION)),
        ({"filter": {"colour": "red"}}, ("/filter/colour", ErrorReason.UNKNOWN_FIELD)),
    ],
)
def test_structural_violations(changes, expected):
    assert expected in errors_of(with_changes(STRUCTURAL, **changes))


def test_composite_requires_filter():
    doc = with_changes(ORDER_FLOW_SPEC, query_type="composite")
    assert ("/filter", ErrorReason.MISSING_FIELD) in errors_of(doc)


def test_all_errors_reported_together():
    doc = {"query_type": "nope", "output_columns": ["x"], "limit": -1, "bogus": 1}
    paths = {p for p, _ in errors_of(doc)}
    assert {"/query_type", "/output_columns/0", "/limit", "/bogus"} <= paths


def test_error_pointer_escaping():
    errs = errors_of(with_changes(STRUCTURAL, **{"a/b~c": 1}))
    assert ("/a~1b~0c", ErrorReason.UNKNOWN_FIELD) in errs


@pytest.mark.parametrize("pattern", ["main", ".*", "get.*", "Str(ing)?", "a|b", "^x$", "[A-Z]+", "a\\.b", "\\$"])
def test_regex_dialect_accepts(pattern):
    assert check_regex(pattern) is None


@pytest.mark.parametrize("pattern", ["", "(", "a{1,2}", "\\1", "\\w", "(?i)x", "a\\", "x\ny", "[z-a]"])
def test_regex_dialect_rejects(pattern):
    assert check_regex(pattern)


# -- parse_spec --------------------------------------------------------------

def test_parse_from_fenced_reply():
    reply = "Here you go:\n```json\n" + json.dumps(ORDER_FLOW_SPEC, indent=2) + "\n```\nDone."
    assert parse_spec(reply) == validate_document(ORDER_FLOW_SPEC)


def test_parse_from_prose_with_braces_in_strings():
    doc = with_changes(ORDER_FLOW_SPEC, sink={"kind": "literal", "value": "{not json}"})
    reply = "Sure. " + json.dumps(doc) + " hope that helps {"
    assert parse_spec(reply).sink.value == "{not json}"


def test_extract_prefers_fence():
    text = 'prefix {"a": 1}\n```\n{"b": 2}\n```'
    assert extract_json_object(text) == '{"b": 2}'


@pytest.mark.parametrize("reply", ["", "no json here", "{unbalanced", "{'single': 'quotes'}", "[1, 2]"])
def test_parse_failures_are_parse_errors(reply):
    with pytest.raises(InvalidSpecError) as info:
        parse_spec(reply)
    assert info.value.errors[0].reason in (ErrorReason.PARSE_ERROR, ErrorReason.CONSTRAINT_VIOLATION)


@settings(max_examples=400, deadline=None)
@given(st.text(max_size=200))
def test_parse_is_total(text):
    try:
        assert isinstance(parse_spec(text), QuerySpec)
    except InvalidSpecError as exc:
        assert exc.errors


json_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.text(max_size=8),
    lambda inner: st.lists(inner, max_size=3) | st.dictionaries(st.sampled_from(["query_type", "filter", "source", "sink", "output_columns", "limit", "kind", "name", "x"]), inner, max_size=4),
    max_leaves=12,
)


@settings(max_examples=400, deadline=None)
@given(json_values)
def test_validate_is_total_on_json_values(value):
    try:
        validate_document(value)
    except InvalidSpecError as exc:
        assert all(isinstance(e.reason, ErrorReason) for e in exc.errors)


# -- round trip and fingerprint ------------------------------------------------

@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False))
def test_serialize_round_trip(rng):
    spec = validate_document(random_spec(rng))
    assert parse_spec(serialize_spec(spec)) == spec
    assert parse_spec(serialize_spec(spec, indent=None)) == spec
    assert validate_document(spec.to_dict()) == spec


def test_fingerprint_ignores_key_order():
    reordered = {k: ORDER_FLOW_SPEC[k] for k in reversed(list(ORDER_FLOW_SPEC))}
    assert spec_fingerprint(validate_document(reordered)) == spec_fingerprint(validate_document(ORDER_FLOW_SPEC))


def test_fingerprint_distinguishes_column_order():
    swapped = with_changes(ORDER_FLOW_SPEC, output_columns=["lineNumber", "code"])
    assert spec_fingerprint(validate_document(swapped)) != spec_fingerprint(validate_document(ORDER_FLOW_SPEC))


def test_format_errors_lists_every_error():
    with pytest.raises(InvalidSpecError) as info:
        validate_document({"query_type": "x"})
    text = format_errors(info.value.errors)
    assert text.count("\n") == len(info.value.errors) - 1
    assert "/query_type: bad_enum" in text


# -- shipped JSON Schema agrees with the validator -----------------------------

def test_json_schema_is_valid_draft_2020_12():
    Draft202012Validator.check_schema(SCHEMA)


def test_json_schema_accepts_conformance_specs():
    for case in CASES:
        assert not list(JSON_SCHEMA.iter_errors(case["spec"])), case["name"]


def test_json_schema_accepts_generated_specs():
    rng = random.Random(11)
    for _ in range(300):
        doc = random_spec(rng)
        assert not list(JSON_SCHEMA.iter_errors(doc)), doc


@pytest.mark.parametrize(
    "doc",
    [
        with_changes(ORDER_FLOW_SPEC, extra=1),
        with_changes(ORDER_FLOW_SPEC, query_type="taint"),
        with_changes(ORDER_FLOW_SPEC, sink=None),
        with_changes(ORDER_FLOW_SPEC, output_columns=[]),
        with_changes(ORDER_FLOW_SPEC, limit=0),
        with_changes(ORDER_FLOW_SPEC, source={"kind": "call", "method": "x"}),
        with_changes(ORDER_FLOW_SPEC, query_type="composite"),
        with_changes(STRUCTURAL, filter=None),
        with_changes(STRUCTURAL, filter={"modifier": "exported"}),
        with_changes(STRUCTURAL, source={"kind": "call", "name": "x"}),
    ],
)
def test_json_schema_rejects_what_validator_rejects(doc):
    with pytest.raises(InvalidSpecError):
        validate_document(doc)
    assert list(JSON_SCHEMA.iter_errors(doc))
