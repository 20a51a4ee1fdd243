from __future__ import annotations

import io
import json
from pathlib import Path

import pytest

from nl2cpgql.benchmark import load_benchmark
from nl2cpgql.cli import shipped_fixture, shipped_replay
from nl2cpgql.joern import BackendConfig, JoernClient
from nl2cpgql.llm import CompletionUsage, ReplayScript

TESTS = Path(__file__).parent
DATA = TESTS / "data"

ORDER_FLOW_SPEC = {
    "query_type": "data_flow",
    "source": {"kind": "parameter", "method": "processOrder"},
    "sink": {"kind": "call", "name": "execute"},
    "output_columns": ["code", "lineNumber"],
}


@pytest.fixture(scope="session")
def bench():
    return load_benchmark()


@pytest.fixture(scope="session")
def task_specs():
    return json.loads((DATA / "task_specs.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def fixture_path():
    return shipped_fixture()


@pytest.fixture(scope="session")
def joern(fixture_path):
    return JoernClient(BackendConfig.fixture(fixture_path))


@pytest.fixture(scope="session")
def replay_path():
    return shipped_replay()


def turn(content: str = "", tool_calls=None, usage=(100, 10)) -> dict:
    msg = {"content": content}
    if tool_calls:
        msg["tool_calls"] = [
            {"id": f"call_{i}", "tool_name": name, "arguments": json.dumps(args)} for i, (name, args) in enumerate(tool_calls, 1)
        ]
    return {"assistant_message": msg, "usage": {"input_tokens": usage[0], "output_tokens": usage[1]}}


def script(turns: list[dict], trial: str = "t") -> ReplayScript:
    return ReplayScript(trials={trial: turns})


def usage_sum(turns: list[dict]) -> CompletionUsage:
    total = CompletionUsage()
    for t in turns:
        total = total + CompletionUsage.from_dict(t["usage"])
    return total


def write_fixture(tmp_path: Path, entries: dict[str, str]) -> JoernClient:
    path = tmp_path / "fixture.json"
    path.write_text(json.dumps(entries), encoding="utf-8")
    return JoernClient(BackendConfig.fixture(path))


@pytest.fixture(scope="session")
def shipped_records_path(tmp_path_factory):
    """All 180 shipped trials, run once through the CLI on replay and fixture."""
    from nl2cpgql.cli import main

    path = tmp_path_factory.mktemp("run") / "records.jsonl"
    assert main(["run", "-o", str(path)], out=io.StringIO(), err=io.StringIO()) == 0
    return path


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.VERDICTS):
            terminalreporter.write_line(line)
