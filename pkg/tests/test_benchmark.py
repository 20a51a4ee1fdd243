from __future__ import annotations

import json
import time
from collections import Counter

import pytest

from nl2cpgql.benchmark import (
    BenchmarkError,
    Project,
    Tier,
    default_benchmark_path,
    dump_benchmark,
    leakage_check,
    load_benchmark,
    parse_benchmark,
    validate_ground_truth,
)
from nl2cpgql.mapper import compile_spec
from nl2cpgql.pipelines import prompt_files
from nl2cpgql.schema import validate_document

from .conftest import write_fixture


def raw_benchmark() -> dict:
    return json.loads(default_benchmark_path().read_text(encoding="utf-8"))


def run_gates(bench_path=None, prompts=None, joern=None):
    """The full offline gate: load, leakage, ground-truth execution. Returns (problems, seconds)."""
    start = time.perf_counter()
    problems = []
    bench = load_benchmark(bench_path)
    problems += [str(f) for f in leakage_check(bench, prompts if prompts is not None else prompt_files())]
    if joern is not None:
        problems += [f"{c.task_id}: {c.reason}" for c in validate_ground_truth(bench, joern) if not c.passed]
    return problems, time.perf_counter() - start


def semantic_oracle(bench, task_specs, joern) -> dict[str, str]:
    """Per-task shortfalls where compile(spec) and the ground truth disagree on the fixture."""
    shortfalls = {}
    for task in bench:
        if task.id not in task_specs:
            shortfalls[task.id] = "no reference spec"
            continue
        compiled = joern.execute(compile_spec(validate_document(task_specs[task.id])).text)
        truth = joern.execute(task.ground_truth_query)
        if not (compiled.ok and truth.ok):
            shortfalls[task.id] = f"execution failed: {compiled.error_message or truth.error_message}"
        elif compiled.normalized_output != truth.normalized_output:
            shortfalls[task.id] = "outputs differ"
    return shortfalls


def test_shipped_benchmark_shape(bench):
    assert len(bench) == 20
    assert Counter(t.tier for t in bench) == {Tier.STRUCTURAL: 7, Tier.DATA_FLOW: 7, Tier.COMPOSITE: 6}
    assert Counter(t.project for t in bench) == {Project.COMMONS_LANG: 9, Project.WEBGOAT: 11}
    assert len({t.id for t in bench}) == 20


def test_dump_round_trip(bench):
    assert parse_benchmark(json.loads(dump_benchmark(bench))) == bench


def test_full_gate_passes_fast(joern):
    problems, seconds = run_gates(joern=joern)
    assert problems == []
    assert seconds < 5.0


def test_semantic_oracle_all_tasks(bench, task_specs, joern):
    assert semantic_oracle(bench, task_specs, joern) == {}


def test_reference_specs_cover_every_task(bench, task_specs):
    assert set(task_specs) == {t.id for t in bench}
    for tid, doc in task_specs.items():
        spec = validate_document(doc)
        tier = bench.by_id()[tid].tier
        expected = {"S": {"method_query", "call_query", "assignment_query"}, "D": {"data_flow"}, "C": {"composite"}}[tid[0]]
        assert spec.query_type.value in expected, (tid, tier)


def test_semantic_oracle_detects_wrong_spec(bench, task_specs, joern):
    wrong = dict(task_specs)
    wrong["S01"], wrong["S02"] = task_specs["S02"], task_specs["S01"]
    assert set(semantic_oracle(bench, wrong, joern)) == {"S01", "S02"}


def test_ground_truth_validation_rejects_bad_queries(tmp_path, bench):
    joern = write_fixture(tmp_path, {
        bench.tasks[0].ground_truth_query: "val res0: List[String] = List()",
        bench.tasks[1].ground_truth_query: "-- [E008] Not Found Error: x",
        "cpg.method": "val res1: Iterator[Method] = <iterator>",
    })
    checks = {c.task_id: c for c in validate_ground_truth(bench, joern)}
    assert checks[bench.tasks[0].id].reason == "empty result"
    assert checks[bench.tasks[1].id].reason.startswith("query_error")
    assert checks[bench.tasks[2].id].reason.startswith("fixture_miss")
    assert not any(c.passed for c in checks.values())


def test_negative_control_query_fails_gate(tmp_path, bench):
    data = raw_benchmark()
    data["tasks"][0]["ground_truth_query"] = "cpg.methodz.name.l"
    path = tmp_path / "bench.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    joern = write_fixture(tmp_path, {t.ground_truth_query: 'List("x")' for t in bench})
    problems, _ = run_gates(path, joern=joern)
    assert problems == [f"{bench.tasks[0].id}: fixture_miss: no recorded output for query"]


def test_leakage_clean_on_shipped_prompts(bench):
    assert leakage_check(bench, prompt_files()) == []


def test_leakage_catches_planted_request(bench):
    task = bench.tasks[3]
    prompts = prompt_files() + [("planted.md", "Example:\n" + task.request.upper().replace(" ", "\n  "))]
    findings = leakage_check(bench, prompts)
    assert [(f.task_id, f.file, f.kind) for f in findings] == [(task.id, "planted.md", "request")]
    assert "planted.md" in str(findings[0])


def test_leakage_catches_planted_query(bench):
    task = bench.tasks[9]
    planted = [("planted.md", "Try:\n```\n" + "  ".join(task.ground_truth_query.split()) + "\n```")]
    findings = leakage_check(bench, planted)
    assert (task.id, "ground_truth_query") in {(f.task_id, f.kind) for f in findings}


def test_generic_syntax_is_not_a_leak(bench):
    assert leakage_check(bench, [("syntax.md", "Start every traversal with cpg.method")]) == []


def test_planted_leak_fails_gate(bench):
    problems, _ = run_gates(prompts=prompt_files() + [("leak.md", bench.tasks[0].request)])
    assert len(problems) == 1


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d["tasks"].pop(), "expected 20 tasks, found 19"),
        (lambda d: d["tasks"].append(dict(d["tasks"][0])), "duplicate task id"),
        (lambda d: d["tasks"][0].update(tier="composite"), "does not match tier"),
        (lambda d: d["tasks"][0].update(project="linux"), "unknown project"),
        (lambda d: d["tasks"][0].update(id="X01"), "id must match"),
        (lambda d: d["tasks"][0].update(request="  "), "request must be a non-empty string"),
        (lambda d: d["tasks"][0].update(extra=1), "unknown field 'extra'"),
        (lambda d: d.pop("tasks"), "'tasks' array"),
    ],
)
def test_gate_failures(tmp_path, mutate, fragment):
    data = raw_benchmark()
    mutate(data)
    path = tmp_path / "bench.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(BenchmarkError) as info:
        load_benchmark(path)
    assert any(fragment in p for p in info.value.problems)


def test_tier_and_project_split_enforced(tmp_path):
    data = raw_benchmark()
    task = next(t for t in data["tasks"] if t["project"] == "commons_lang")
    task["project"] = "webgoat"
    path = tmp_path / "bench.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(BenchmarkError) as info:
        load_benchmark(path)
    assert "expected 9 commons_lang tasks, found 8" in info.value.problems


def test_invalid_json(tmp_path):
    path = tmp_path / "bench.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(BenchmarkError):
        load_benchmark(path)
