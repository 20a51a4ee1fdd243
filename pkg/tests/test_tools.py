from __future__ import annotations

import json

import pytest

from nl2cpgql.llm import ToolCall
from nl2cpgql.tools import TOOL_NAMES, TOOL_SCHEMAS, BadArguments, parse_arguments, tool_dispatch, tool_query

from .conftest import write_fixture


def call(name: str, args) -> ToolCall:
    return ToolCall("c1", name, args if isinstance(args, str) else json.dumps(args))


def test_tool_names():
    assert TOOL_NAMES == ("find_methods", "find_calls", "trace_data_flow", "find_reachable_by", "run_custom_query")
    for schema in TOOL_SCHEMAS:
        assert schema.to_openai()["function"]["parameters"]["additionalProperties"] is False


@pytest.mark.parametrize(
    "name, args, expected",
    [
        ("find_methods", {}, "cpg.method.name.l"),
        ("find_methods", {"name": "get.*", "modifier": "public", "limit": 3}, 'cpg.method.name("get.*").isPublic.name.take(3).l'),
        ("find_methods", {"class_name": "StringUtils", "columns": ["fullName"]}, 'cpg.method.where(_.typeDecl.name("StringUtils")).fullName.l'),
        ("find_calls", {"name": "executeQuery"}, 'cpg.call.name("executeQuery").code.l'),
        ("find_calls", {"argument": "query", "columns": ["name"]}, 'cpg.call.where(_.argument.isIdentifier.name("query")).name.l'),
        (
            "trace_data_flow",
            {"source": {"kind": "parameter", "method": "processOrder"}, "sink": {"kind": "call", "name": "execute"}},
            'def source = cpg.method.name("processOrder").parameter; def sink = cpg.call.name("execute").argument; sink.reachableByFlows(source).p',
        ),
        (
            "find_reachable_by",
            {"source": {"kind": "call", "name": "getParameter"}, "sink": {"kind": "call", "name": "executeQuery"}},
            'def source = cpg.call.name("getParameter"); def sink = cpg.call.name("executeQuery").argument; sink.reachableBy(source).code.l',
        ),
        ("run_custom_query", {"query": "cpg.literal.code.l"}, "cpg.literal.code.l"),
    ],
)
def test_tool_query(name, args, expected):
    assert tool_query(name, parse_arguments(call(name, args))) == expected


@pytest.mark.parametrize(
    "name, args",
    [
        ("find_methods", {"modifier": "exported"}),
        ("find_methods", {"colour": "red"}),
        ("find_calls", {"columns": []}),
        ("trace_data_flow", {"source": {"kind": "call", "name": "x"}}),
        ("run_custom_query", {"query": ""}),
        ("find_methods", "[1, 2]"),
        ("find_methods", "{not json"),
    ],
)
def test_bad_arguments(name, args):
    with pytest.raises(BadArguments):
        parse_arguments(call(name, args))


def test_semantic_bad_arguments_surface_from_validator():
    args = parse_arguments(call("trace_data_flow", {"source": {"kind": "call", "method": "x"}, "sink": {"kind": "call", "name": "y"}}))
    with pytest.raises(BadArguments):
        tool_query("trace_data_flow", args)


def test_dispatch_results(tmp_path):
    joern = write_fixture(tmp_path, {
        "cpg.method.name.l": 'val res0: List[String] = List("main", "helper")',
        "cpg.call.name.l": "-- [E008] Not Found Error: nope",
        'cpg.call.name("x").code.l': "val res1: List[String] = List()",
    })
    assert tool_dispatch(call("find_methods", {}), joern) == 'List("main", "helper")'
    assert tool_dispatch(call("run_custom_query", {"query": "cpg.call.name.l"}), joern).startswith("error: query_error: -- [E008]")
    assert tool_dispatch(call("find_calls", {"name": "x"}), joern) == "List()"
    assert tool_dispatch(call("run_custom_query", {"query": "cpg.unknown"}), joern).startswith("error: fixture_miss")
    assert tool_dispatch(call("find_methods", {"modifier": "exported"}), joern).startswith("error: bad arguments:")
    assert tool_dispatch(call("delete_everything", {}), joern).startswith("error: unknown tool 'delete_everything'")


def test_dispatch_empty_output(tmp_path):
    joern = write_fixture(tmp_path, {"cpg.method.name.l": "   "})
    assert tool_dispatch(call("find_methods", {}), joern) == "(empty result)"
