from __future__ import annotations

import json
import random
import re
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nl2cpgql.mapper import (
    CpgqlQuery,
    TemplateError,
    UnsafeIdentifierError,
    compile_spec,
    escape_identifier,
    placeholders,
    reachable_template,
    scala_string,
    templates,
)
from nl2cpgql.schema import (
    ENDPOINT_KINDS,
    MODIFIERS,
    OUTPUT_COLUMNS,
    QUERY_TYPES,
    parse_spec,
    spec_fingerprint,
    validate_document,
)

from .conftest import ORDER_FLOW_SPEC, TESTS

CONFORMANCE = TESTS / "conformance"
CASES = json.loads((CONFORMANCE / "cases.json").read_text(encoding="utf-8"))


def golden(name: str) -> str:
    return (CONFORMANCE / f"{name}.cpgql").read_text(encoding="utf-8").rstrip("\n")


def compile_case(case: dict) -> CpgqlQuery:
    return compile_spec(validate_document(case["spec"]), reachable=case.get("reachable", False))


def run_conformance() -> tuple[int, list[str], float]:
    """Compile every golden case; returns (total, failing names, seconds)."""
    start = time.perf_counter()
    failures = [c["name"] for c in CASES if compile_case(c).text != golden(c["name"])]
    return len(CASES), failures, time.perf_counter() - start


def conformance_coverage() -> dict[str, set[str]]:
    seen: dict[str, set[str]] = {"types": set(), "kinds": set(), "columns": set(), "modifiers": set()}
    for c in CASES:
        spec = c["spec"]
        seen["types"].add(spec["query_type"])
        seen["columns"].update(spec["output_columns"])
        for side in ("source", "sink"):
            if side in spec:
                seen["kinds"].add(spec[side]["kind"])
        if "modifier" in spec.get("filter", {}):
            seen["modifiers"].add(spec["filter"]["modifier"])
    return seen


@pytest.mark.parametrize("case", CASES, ids=[c["name"] for c in CASES])
def test_golden(case):
    assert compile_case(case).text == golden(case["name"])


def test_conformance_suite_size_and_coverage():
    total, failures, seconds = run_conformance()
    assert total >= 22
    assert failures == []
    assert seconds < 1.0
    seen = conformance_coverage()
    assert seen["types"] == set(QUERY_TYPES)
    assert seen["kinds"] == set(ENDPOINT_KINDS)
    assert seen["columns"] == set(OUTPUT_COLUMNS)
    assert seen["modifiers"] == set(MODIFIERS)
    limits = {"limit" in c["spec"] for c in CASES}
    assert limits == {True, False}


def test_order_flow_fingerprint_golden():
    spec = validate_document(ORDER_FLOW_SPEC)
    expected = (CONFORMANCE / "order_flow.fingerprint").read_text(encoding="utf-8").strip()
    assert spec_fingerprint(spec) == expected
    assert compile_spec(spec).spec_fingerprint == expected


def test_order_flow_compiles_to_reaching_flow_paths():
    text = compile_spec(validate_document(ORDER_FLOW_SPEC)).text
    assert 'cpg.method.name("processOrder").parameter' in text
    assert 'cpg.call.name("execute").argument' in text
    assert text.endswith("sink.reachableByFlows(source).p")


def test_identity_method_filter_is_dropped():
    spec = validate_document({"query_type": "method_query", "filter": {"method_name": ".*"}, "output_columns": ["name"]})
    assert compile_spec(spec).text == "cpg.method.name.l"


def test_reachable_rejected_for_structural():
    spec = validate_document({"query_type": "call_query", "filter": {"method_name": "x"}, "output_columns": ["code"]})
    with pytest.raises(ValueError):
        compile_spec(spec, reachable=True)


# -- escaping ----------------------------------------------------------------

ESCAPE_SAMPLES = ["a.b$c", '"', "plain", "a|b", "x(y)", "[0]", "f{1}", "\\", "^start", "end$", "q?", "a+b*c"]


@pytest.mark.parametrize("raw", ESCAPE_SAMPLES)
def test_escaped_identifier_matches_only_itself(raw):
    pattern = re.compile(escape_identifier(raw))
    assert pattern.fullmatch(raw)
    for other in (raw + "x", "x" + raw, raw[:-1] or "z", raw.replace(raw[0], "Q", 1)):
        if other != raw:
            assert not pattern.fullmatch(other)


def test_escape_examples():
    assert escape_identifier("a.b$c") == r"a\.b\$c"
    assert escape_identifier('"') == '\\"'
    assert escape_identifier("processOrder") == "processOrder"


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=30))
def test_escape_is_literal_match(raw):
    assert re.fullmatch(escape_identifier(raw), raw)


@pytest.mark.parametrize("raw", ["", "a\nb", "tab\there", "\x7f"])
def test_escape_rejects_unsafe(raw):
    with pytest.raises(UnsafeIdentifierError):
        escape_identifier(raw)


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=40))
def test_scala_string_round_trips(text):
    literal = scala_string(text)
    assert literal.startswith('"') and literal.endswith('"')
    body = literal[1:-1]
    assert re.sub(r"\\(.)", r"\1", body, flags=re.DOTALL) == text
    assert not re.search(r'(?<!\\)(?:\\\\)*"', body)


# -- templates ---------------------------------------------------------------

def test_every_query_type_has_a_template():
    table = templates()
    assert {t.value for t in table} == set(QUERY_TYPES)
    for tpl in table.values():
        assert tpl.required_placeholders == placeholders(tpl.skeleton)
        assert tpl.required_placeholders


def test_template_render_requires_all_placeholders():
    tpl = reachable_template()
    with pytest.raises(TemplateError):
        tpl.render({})


def test_compiled_queries_have_no_unfilled_placeholders():
    for case in CASES:
        assert "${" not in compile_case(case).text


# -- canonicalization --------------------------------------------------------

NAMES = ["main", "get.*", "execute", "a.b$c", "processOrder", "é", "Ünïcode", '"q"']


def random_spec(rng: random.Random) -> dict:
    qtype = rng.choice(QUERY_TYPES)
    doc: dict = {"query_type": qtype}
    columns = rng.sample(OUTPUT_COLUMNS, rng.randint(1, 4))
    doc["output_columns"] = columns
    if qtype in ("data_flow", "composite"):
        for side in ("source", "sink"):
            kind = rng.choice(ENDPOINT_KINDS)
            key = {"parameter": "method", "call": "name", "literal": "value"}[kind]
            doc[side] = {"kind": kind, key: rng.choice(NAMES)}
    if qtype != "data_flow":
        flt = {}
        fields = ["method_name", "type_name", "modifier", "annotation", "target_identifier"]
        for field in rng.sample(fields, rng.randint(1, len(fields))):
            if field == "modifier":
                flt[field] = rng.choice(MODIFIERS)
            elif field in ("method_name", "type_name"):
                flt[field] = rng.choice(["main", "get.*", "Str(ing)?", ".*Lesson"])
            else:
                flt[field] = rng.choice(["Override", "buf", "x_1"])
        doc["filter"] = flt
    if rng.random() < 0.5:
        doc["limit"] = rng.randint(1, 50)
    return doc


def shuffled(obj, rng: random.Random):
    if isinstance(obj, dict):
        items = list(obj.items())
        rng.shuffle(items)
        return {k: shuffled(v, rng) for k, v in items}
    return obj


def reserialize(doc: dict, rng: random.Random) -> str:
    indent = rng.choice([None, 0, 1, 2, 4, "\t"])
    separators = rng.choice([None, (",", ":"), (" , ", " : ")])
    return json.dumps(shuffled(doc, rng), indent=indent, separators=separators, ensure_ascii=rng.random() < 0.5)


def canonicalization_violations(pairs: int = 1000, seed: int = 7) -> tuple[int, int]:
    """Returns (pairs checked, violations). Each pair is two distinct texts of one spec."""
    rng = random.Random(seed)
    checked = violations = 0
    while checked < pairs:
        doc = random_spec(rng)
        a, b = reserialize(doc, rng), reserialize(doc, rng)
        if a == b:
            continue
        checked += 1
        qa, qb = compile_spec(parse_spec(a)), compile_spec(parse_spec(b))
        if qa.text.encode() != qb.text.encode() or qa.spec_fingerprint != qb.spec_fingerprint:
            violations += 1
    return checked, violations


def test_canonicalization_thousand_pairs():
    assert canonicalization_violations() == (1000, 0)


def test_compile_is_deterministic_across_calls():
    spec = validate_document(ORDER_FLOW_SPEC)
    assert len({compile_spec(spec).text for _ in range(20)}) == 1
