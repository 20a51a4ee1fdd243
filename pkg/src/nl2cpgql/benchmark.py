"""The 20-task NL-to-CPGQL benchmark: loading, ground-truth validation, leak checks."""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable

from .joern import ExecutionResult, JoernClient

BENCHMARK_VERSION = 1
EXPECTED_TOTAL = 20
EXPECTED_TIERS = {"structural": 7, "data_flow": 7, "composite": 6}
EXPECTED_PROJECTS = {"commons_lang": 9, "webgoat": 11}

_TASK_ID = re.compile(r"^[SDC][0-9]{2}$")


class Tier(str, Enum):
    STRUCTURAL = "structural"
    DATA_FLOW = "data_flow"
    COMPOSITE = "composite"


class Project(str, Enum):
    COMMONS_LANG = "commons_lang"
    WEBGOAT = "webgoat"


TIER_PREFIX = {Tier.STRUCTURAL: "S", Tier.DATA_FLOW: "D", Tier.COMPOSITE: "C"}


class BenchmarkError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__(f"{len(self.problems)} benchmark problem(s):\n" + "\n".join(f"- {p}" for p in self.problems))


@dataclass(frozen=True)
class Task:
    id: str
    tier: Tier
    project: Project
    request: str
    ground_truth_query: str

    def to_dict(self) -> dict[str, str]:
        return {
            "id": self.id,
            "tier": self.tier.value,
            "project": self.project.value,
            "request": self.request,
            "ground_truth_query": self.ground_truth_query,
        }


@dataclass(frozen=True)
class BenchmarkSet:
    tasks: tuple[Task, ...]

    def __iter__(self):
        return iter(self.tasks)

    def __len__(self) -> int:
        return len(self.tasks)

    def by_id(self) -> dict[str, Task]:
        return {t.id: t for t in self.tasks}

    def to_dict(self) -> dict:
        return {"version": BENCHMARK_VERSION, "tasks": [t.to_dict() for t in self.tasks]}


def default_benchmark_path() -> Path:
    return Path(str(resources.files("nl2cpgql").joinpath("data/benchmark.json")))


def _task_problems(i: int, raw: object) -> tuple[Task | None, list[str]]:
    where = f"tasks[{i}]"
    if not isinstance(raw, dict):
        return None, [f"{where}: must be an object"]
    problems = []
    tid = raw.get("id")
    if isinstance(tid, str):
        where = f"task {tid}"
    fields = ("id", "tier", "project", "request", "ground_truth_query")
    for key in raw:
        if key not in fields:
            problems.append(f"{where}: unknown field {key!r}")
    for key in fields:
        if not isinstance(raw.get(key), str) or not raw.get(key, "").strip():
            problems.append(f"{where}: {key} must be a non-empty string")
    if problems:
        return None, problems
    try:
        tier = Tier(raw["tier"])
    except ValueError:
        problems.append(f"{where}: unknown tier {raw['tier']!r}")
        tier = None
    try:
        project = Project(raw["project"])
    except ValueError:
        problems.append(f"{where}: unknown project {raw['project']!r}")
        project = None
    if not _TASK_ID.match(tid):
        problems.append(f"{where}: id must match ^[SDC][0-9]{{2}}$")
    elif tier is not None and tid[0] != TIER_PREFIX[tier]:
        problems.append(f"{where}: id prefix {tid[0]!r} does not match tier {tier.value!r}")
    if problems:
        return None, problems
    return Task(tid, tier, project, raw["request"], raw["ground_truth_query"]), []


def check_benchmark(tasks: list[Task]) -> list[str]:
    problems = []
    ids = Counter(t.id for t in tasks)
    for tid, n in sorted(ids.items()):
        if n > 1:
            problems.append(f"duplicate task id {tid} ({n} occurrences)")
    if len(tasks) != EXPECTED_TOTAL:
        problems.append(f"expected {EXPECTED_TOTAL} tasks, found {len(tasks)}")
    tiers = Counter(t.tier.value for t in tasks)
    for tier, want in EXPECTED_TIERS.items():
        if tiers.get(tier, 0) != want:
            problems.append(f"expected {want} {tier} tasks, found {tiers.get(tier, 0)}")
    projects = Counter(t.project.value for t in tasks)
    for project, want in EXPECTED_PROJECTS.items():
        if projects.get(project, 0) != want:
            problems.append(f"expected {want} {project} tasks, found {projects.get(project, 0)}")
    return problems


def parse_benchmark(data: object) -> BenchmarkSet:
    if not isinstance(data, dict) or not isinstance(data.get("tasks"), list):
        raise BenchmarkError(["benchmark must be an object with a 'tasks' array"])
    problems = []
    tasks = []
    for i, raw in enumerate(data["tasks"]):
        task, errs = _task_problems(i, raw)
        problems.extend(errs)
        if task is not None:
            tasks.append(task)
    # count invariants only make sense once every task parsed
    if not problems:
        problems.extend(check_benchmark(tasks))
    if problems:
        raise BenchmarkError(problems)
    return BenchmarkSet(tuple(tasks))


def load_benchmark(path: str | Path | None = None) -> BenchmarkSet:
    path = Path(path) if path is not None else default_benchmark_path()
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise BenchmarkError([f"{path}: invalid JSON: {exc}"]) from None
    return parse_benchmark(data)


def dump_benchmark(bench: BenchmarkSet) -> str:
    return json.dumps(bench.to_dict(), indent=2, ensure_ascii=False) + "\n"


# -- ground truth validation -------------------------------------------------

@dataclass(frozen=True)
class GroundTruthCheck:
    task_id: str
    passed: bool
    reason: str
    result: ExecutionResult


def validate_ground_truth(bench: BenchmarkSet, joern: JoernClient) -> list[GroundTruthCheck]:
    """Run every ground-truth query; a task passes on ok=True with non-empty output."""
    checks = []
    for task in bench:
        result = joern.execute(task.ground_truth_query)
        if not result.ok:
            kind = result.error_kind.value if result.error_kind else "error"
            checks.append(GroundTruthCheck(task.id, False, f"{kind}: {result.error_message}", result))
        elif not result.normalized_output or _is_empty_collection(result.normalized_output):
            checks.append(GroundTruthCheck(task.id, False, "empty result", result))
        else:
            checks.append(GroundTruthCheck(task.id, True, "ok", result))
    return checks


def _is_empty_collection(text: str) -> bool:
    return re.fullmatch(r"\w+\(\s*\)", text) is not None


# -- leakage -----------------------------------------------------------------

@dataclass(frozen=True)
class LeakFinding:
    task_id: str
    file: str
    kind: str  # "request" or "ground_truth_query"

    def __str__(self) -> str:
        return f"{self.file}: contains the {self.kind.replace('_', ' ')} of task {self.task_id}"


def _collapse(text: str) -> str:
    return " ".join(text.split())


def leakage_check(bench: BenchmarkSet, prompt_files: Iterable[tuple[str, str]]) -> list[LeakFinding]:
    """Flag prompt files that contain a task's request or ground-truth query.

    ``prompt_files`` yields ``(name, text)`` pairs. Requests compare
    whitespace-collapsed and case-folded; queries whitespace-collapsed.
    """
    findings = []
    for name, text in prompt_files:
        collapsed = _collapse(text)
        folded = collapsed.casefold()
        for task in bench:
            if _collapse(task.request).casefold() in folded:
                findings.append(LeakFinding(task.id, name, "request"))
            if _collapse(task.ground_truth_query) in collapsed:
                findings.append(LeakFinding(task.id, name, "ground_truth_query"))
    return findings
