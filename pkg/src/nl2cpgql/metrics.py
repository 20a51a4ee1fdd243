"""Judging, aggregation, solved-set coverage and report rendering.

Percentages are rounded half-up to one decimal. Quartiles use the
inclusive method so token summaries are reproducible elsewhere.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
import statistics
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Iterable, Mapping

from .benchmark import BenchmarkSet, Task, Tier
from .joern import JoernClient, normalize
from .pipelines import ApproachId, Status, TrialRecord

_TENTH = Decimal("0.1")
_QUOTED = re.compile(r'"((?:[^"\\]|\\.)*)"', re.DOTALL)
_COLLECTION = re.compile(r"^(\w+)\((.*)\)$", re.DOTALL)

TIER_LABELS = {Tier.STRUCTURAL: "Structural", Tier.DATA_FLOW: "Data flow", Tier.COMPOSITE: "Composite"}
GLYPH_ALL, GLYPH_SOME, GLYPH_NONE = "\u2713", "\u2022", "\u2014"


class GroundTruthError(RuntimeError):
    """The ground-truth query failed; the benchmark is broken, not the trial."""


class ReportFormat(str, Enum):
    MARKDOWN = "markdown"
    CSV = "csv"
    JSON = "json"


def round_pct(numerator: int, denominator: int) -> float | None:
    if denominator == 0:
        return None
    return float((Decimal(numerator) * 100 / Decimal(denominator)).quantize(_TENTH, rounding=ROUND_HALF_UP))


def round_tenth(value: float) -> float:
    return float(Decimal(repr(value)).quantize(_TENTH, rounding=ROUND_HALF_UP))


# -- comparison ---------------------------------------------------------------

def split_top_level(body: str) -> list[str]:
    """Split on commas outside brackets and string literals (including triple-quoted)."""
    items, depth, start, i = [], 0, 0, 0
    n = len(body)
    while i < n:
        ch = body[i]
        if body.startswith('"""', i):
            end = body.find('"""', i + 3)
            i = n if end < 0 else end + 3
            continue
        if ch == '"':
            i += 1
            while i < n and body[i] != '"':
                i += 2 if body[i] == "\\" else 1
            i += 1
            continue
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        elif ch == "," and depth == 0:
            items.append(body[start:i].strip())
            start = i + 1
        i += 1
    tail = body[start:].strip()
    if tail or items:
        items.append(tail)
    return items


def _as_multiset(text: str) -> tuple[str, Counter] | None:
    m = _COLLECTION.match(text)
    if m is None:
        return None
    return m.group(1), Counter(split_top_level(m.group(2)))


def outputs_match(a: str, b: str) -> bool:
    """Normalized equality, ignoring element order inside ``List(...)``-style output."""
    a, b = normalize(a), normalize(b)
    if a == b:
        return True
    ma, mb = _as_multiset(a), _as_multiset(b)
    return ma is not None and ma == mb


def quoted_strings(text: str) -> frozenset[str]:
    return frozenset(_QUOTED.findall(text))


@dataclass(frozen=True)
class MatchVerdict:
    result_match: bool
    relaxed_match: bool
    exact_match: bool | None = None

    def __post_init__(self) -> None:
        if self.result_match and not self.relaxed_match:
            raise ValueError("result_match implies relaxed_match")


def verdict_for(record: TrialRecord, task: Task, ground_truth_output: str) -> MatchVerdict:
    out = record.outcome.final_output if record.outcome.status is Status.SUCCESS else None
    result = out is not None and outputs_match(out, ground_truth_output)
    quoted = quoted_strings(out) if out is not None else frozenset()
    # a set comparison over empty sets says nothing, so it never matches
    relaxed = result or (bool(quoted) and quoted == quoted_strings(ground_truth_output))
    exact = None
    if record.approach is not ApproachId.A3_AGENTIC:
        exact = record.outcome.generated_query is not None and record.outcome.generated_query == task.ground_truth_query
    return MatchVerdict(result, relaxed, exact)


class GroundTruthCache:
    def __init__(self, joern: JoernClient):
        self.joern = joern
        self._outputs: dict[str, str] = {}

    def output(self, task: Task) -> str:
        if task.id not in self._outputs:
            res = self.joern.execute(task.ground_truth_query)
            if not res.ok:
                raise GroundTruthError(f"ground truth of {task.id} failed: {res.error_kind.value}: {res.error_message}")
            self._outputs[task.id] = res.normalized_output
        return self._outputs[task.id]


def judge_trial(record: TrialRecord, task: Task, joern: JoernClient | GroundTruthCache) -> MatchVerdict:
    cache = joern if isinstance(joern, GroundTruthCache) else GroundTruthCache(joern)
    return verdict_for(record, task, cache.output(task))


Key = tuple[str, str, str, int]


def judge_all(records: Iterable[TrialRecord], bench: BenchmarkSet, joern: JoernClient) -> dict[Key, MatchVerdict]:
    tasks = bench.by_id()
    cache = GroundTruthCache(joern)
    verdicts = {}
    for rec in records:
        if rec.task_id not in tasks:
            raise KeyError(f"record references unknown task {rec.task_id!r}")
        verdicts[rec.key] = judge_trial(rec, tasks[rec.task_id], cache)
    return verdicts


# -- aggregation ----------------------------------------------------------------

def executed(record: TrialRecord) -> bool:
    """Per-approach execution success: ran without runtime failure."""
    status = record.outcome.status
    if record.approach is ApproachId.A2_STRUCTURED:
        # a valid QuerySpec reached Joern
        return status in (Status.SUCCESS, Status.FAIL_EXECUTION)
    return status is Status.SUCCESS


@dataclass(frozen=True)
class FiveNumber:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float

    @classmethod
    def of(cls, values: list[int]) -> FiveNumber | None:
        if not values:
            return None
        data = sorted(values)
        if len(data) == 1:
            q1 = med = q3 = float(data[0])
        else:
            q1, med, q3 = statistics.quantiles(data, n=4, method="inclusive")
        return cls(float(data[0]), q1, med, q3, float(data[-1]), round_tenth(statistics.fmean(data)))


@dataclass(frozen=True)
class CellAggregate:
    model_id: str
    approach: ApproachId
    trials: int
    excluded: int
    result_matches: int
    relaxed_matches: int
    exact_matches: int | None
    executed: int
    result_match_rate: float | None
    relaxed_match_rate: float | None
    exec_success_rate: float | None
    exact_match_rate: float | None
    mean_attempts: float | None
    mean_steps: float | None
    mean_tool_calls: float | None
    token_stats: FiveNumber | None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["approach"] = self.approach.value
        return d


@dataclass(frozen=True)
class TierRow:
    model_id: str
    approach: ApproachId
    tier: str  # a Tier value, or "all"
    matches: int
    trials: int
    rate: float | None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["approach"] = self.approach.value
        return d


@dataclass(frozen=True)
class TaskTally:
    model_id: str
    task_id: str
    approach: ApproachId
    matches: int
    trials: int

    @property
    def glyph(self) -> str:
        return tally_glyph(self.matches, self.trials)


def tally_glyph(matches: int, trials: int) -> str:
    if trials == 0:
        return "n/a"
    if matches == trials:
        return GLYPH_ALL
    return GLYPH_SOME if matches else GLYPH_NONE


@dataclass(frozen=True)
class Coverage:
    model_id: str
    solved: dict[ApproachId, frozenset[str]]
    relations: tuple[tuple[ApproachId, ApproachId, str], ...]
    tallies: tuple[TaskTally, ...]

    def relation(self, a: ApproachId, b: ApproachId) -> str:
        return set_relation(self.solved[a], self.solved[b])

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "solved": {a.value: sorted(s) for a, s in self.solved.items()},
            "relations": [{"approach": a.value, "versus": b.value, "relation": r} for a, b, r in self.relations],
            "tallies": [
                {"task_id": t.task_id, "approach": t.approach.value, "matches": t.matches, "trials": t.trials, "glyph": t.glyph}
                for t in self.tallies
            ],
        }


@dataclass(frozen=True)
class Report:
    cells: tuple[CellAggregate, ...] = ()
    tiers: tuple[TierRow, ...] = ()
    coverage: tuple[Coverage, ...] = ()
    task_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "report_version": 1,
            "cells": [c.to_dict() for c in self.cells],
            "tiers": [t.to_dict() for t in self.tiers],
            "coverage": [c.to_dict() for c in self.coverage],
        }


def _mean(values: list[int]) -> float | None:
    return round_tenth(statistics.fmean(values)) if values else None


def _included(records: Iterable[TrialRecord]) -> list[TrialRecord]:
    return sorted((r for r in records if not r.infrastructure_failed), key=lambda r: r.key)


def _cell(model: str, approach: ApproachId, recs: list[TrialRecord], excluded: int,
          verdicts: Mapping[Key, MatchVerdict]) -> CellAggregate:
    vs = [verdicts[r.key] for r in recs]
    n = len(recs)
    result = sum(v.result_match for v in vs)
    relaxed = sum(v.relaxed_match for v in vs)
    ran = sum(executed(r) for r in recs)
    agentic = approach is ApproachId.A3_AGENTIC
    exact = None if agentic else sum(bool(v.exact_match) for v in vs)
    return CellAggregate(
        model_id=model,
        approach=approach,
        trials=n,
        excluded=excluded,
        result_matches=result,
        relaxed_matches=relaxed,
        exact_matches=exact,
        executed=ran,
        result_match_rate=round_pct(result, n),
        relaxed_match_rate=round_pct(relaxed, n),
        exec_success_rate=round_pct(ran, n),
        exact_match_rate=None if exact is None else round_pct(exact, n),
        mean_attempts=None if agentic else _mean([r.outcome.attempts for r in recs]),
        mean_steps=_mean([r.outcome.steps for r in recs]) if agentic else None,
        mean_tool_calls=_mean([r.outcome.tool_calls for r in recs]) if agentic else None,
        token_stats=FiveNumber.of([r.usage.total for r in recs]),
    )


def aggregate(records: Iterable[TrialRecord], verdicts: Mapping[Key, MatchVerdict],
              bench: BenchmarkSet) -> tuple[list[CellAggregate], list[TierRow]]:
    """Roll trials up per model and approach, and per tier.

    Infrastructure-failed trials are counted in ``excluded`` and appear in no
    denominator.
    """
    records = list(records)
    tiers = {t.id: t.tier for t in bench}
    groups: dict[tuple[str, ApproachId], list[TrialRecord]] = defaultdict(list)
    excluded: Counter = Counter()
    for rec in records:
        groups.setdefault((rec.model_id, rec.approach), [])
        if rec.infrastructure_failed:
            excluded[(rec.model_id, rec.approach)] += 1
        else:
            groups[(rec.model_id, rec.approach)].append(rec)
    cells, rows = [], []
    for (model, approach) in sorted(groups, key=lambda k: (k[0], k[1].value)):
        recs = sorted(groups[(model, approach)], key=lambda r: r.key)
        cells.append(_cell(model, approach, recs, excluded[(model, approach)], verdicts))
        for tier in Tier:
            sub = [r for r in recs if tiers[r.task_id] is tier]
            hits = sum(verdicts[r.key].result_match for r in sub)
            rows.append(TierRow(model, approach, tier.value, hits, len(sub), round_pct(hits, len(sub))))
        hits = sum(verdicts[r.key].result_match for r in recs)
        rows.append(TierRow(model, approach, "all", hits, len(recs), round_pct(hits, len(recs))))
    return cells, rows


def set_relation(a: frozenset[str], b: frozenset[str]) -> str:
    if a == b:
        return "equal"
    if a < b:
        return "strict subset"
    if a > b:
        return "strict superset"
    return "incomparable"


def coverage_analysis(records: Iterable[TrialRecord], verdicts: Mapping[Key, MatchVerdict]) -> list[Coverage]:
    """Per model: tasks solved at least once by each approach, and how those sets relate."""
    by_model: dict[str, list[TrialRecord]] = defaultdict(list)
    for rec in _included(records):
        by_model[rec.model_id].append(rec)
    out = []
    for model in sorted(by_model):
        counts: dict[tuple[str, ApproachId], list[int]] = defaultdict(lambda: [0, 0])
        for rec in by_model[model]:
            c = counts[(rec.task_id, rec.approach)]
            c[0] += verdicts[rec.key].result_match
            c[1] += 1
        approaches = sorted({a for _, a in counts}, key=lambda a: a.value)
        tasks = sorted({t for t, _ in counts})
        solved = {a: frozenset(t for (t, ap), (m, _) in counts.items() if ap is a and m > 0) for a in approaches}
        relations = tuple(
            (later, earlier, set_relation(solved[later], solved[earlier]))
            for i, earlier in enumerate(approaches)
            for later in approaches[i + 1:]
        )
        tallies = tuple(
            TaskTally(model, t, a, *counts.get((t, a), (0, 0)))
            for t in tasks for a in approaches
        )
        out.append(Coverage(model, solved, relations, tallies))
    return out


def compound_success(per_step_accuracy: float, steps: float) -> float:
    """End-to-end success of a chain of independent steps: ``p ** steps``."""
    if isinstance(per_step_accuracy, bool) or not 0.0 <= per_step_accuracy <= 1.0 or math.isnan(per_step_accuracy):
        raise ValueError(f"per-step accuracy must lie in [0, 1], got {per_step_accuracy!r}")
    if isinstance(steps, bool) or not steps >= 0 or math.isinf(steps):
        raise ValueError(f"steps must be a finite non-negative number, got {steps!r}")
    if steps == 0:
        return 1.0
    return per_step_accuracy ** steps


def build_report(records: Iterable[TrialRecord], verdicts: Mapping[Key, MatchVerdict], bench: BenchmarkSet) -> Report:
    records = list(records)
    cells, tiers = aggregate(records, verdicts, bench)
    coverage = coverage_analysis(records, verdicts)
    return Report(tuple(cells), tuple(tiers), tuple(coverage), tuple(t.id for t in bench))


# -- rendering ------------------------------------------------------------------

def _fmt(value: float | int | None) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def _pct(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.1f}"


def _row(cells: Iterable[str]) -> str:
    return "| " + " | ".join(cells) + " |"


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    return [_row(header), _row(["---"] * len(header)), *(_row(r) for r in rows)]


COMPOUND_PER_STEP = 0.9


def _markdown(report: Report) -> str:
    if not report.cells:
        return "# Evaluation report\n\nNo trials.\n"
    lines = ["# Evaluation report", ""]
    approaches = sorted({c.approach for c in report.cells}, key=lambda a: a.value)
    models = sorted({c.model_id for c in report.cells})
    cell = {(c.model_id, c.approach): c for c in report.cells}

    lines += ["## Result match and execution success (%)", ""]
    header = ["Model"] + [f"{a.short} {k}" for a in approaches for k in ("Res.", "Exec.")]
    rows = []
    for m in models:
        row = [m]
        for a in approaches:
            c = cell.get((m, a))
            row += [_pct(c.result_match_rate), _pct(c.exec_success_rate)] if c else ["n/a", "n/a"]
        rows.append(row)
    lines += _table(header, rows) + [""]

    lines += ["## Result match by tier", ""]
    tier_row = {(t.model_id, t.approach, t.tier): t for t in report.tiers}
    for m in models:
        lines += [f"### {m}", ""]
        header = ["Tier"] + [f"{a.short} {k}" for a in approaches for k in ("n", "N", "%")]
        rows = []
        for key, label in [*((t.value, TIER_LABELS[t]) for t in Tier), ("all", "All")]:
            row = [label]
            for a in approaches:
                t = tier_row.get((m, a, key))
                row += [str(t.matches), str(t.trials), _pct(t.rate)] if t else ["n/a"] * 3
            rows.append(row)
        lines += _table(header, rows) + [""]

    lines += ["## Secondary metrics", ""]
    header = ["Model", "Approach", "Trials", "Excluded", "Relaxed %", "Exact %", "Mean attempts", "Mean steps", "Mean tool calls"]
    rows = [
        [c.model_id, c.approach.short, str(c.trials), str(c.excluded), _pct(c.relaxed_match_rate), _pct(c.exact_match_rate),
         _fmt(c.mean_attempts), _fmt(c.mean_steps), _fmt(c.mean_tool_calls)]
        for c in report.cells
    ]
    lines += _table(header, rows) + [""]

    lines += ["## Tokens per trial", ""]
    header = ["Model", "Approach", "Min", "Q1", "Median", "Q3", "Max", "Mean"]
    rows = []
    for c in report.cells:
        s = c.token_stats
        vals = [s.min, s.q1, s.median, s.q3, s.max, s.mean] if s else [None] * 6
        rows.append([c.model_id, c.approach.short, *(_fmt(v) for v in vals)])
    lines += _table(header, rows) + [""]

    for cov in report.coverage:
        lines += [f"## Per-task outcomes: {cov.model_id}", "", f"{GLYPH_ALL} every repetition matched, {GLYPH_SOME} some did, {GLYPH_NONE} none did.", ""]
        tally = {(t.task_id, t.approach): t for t in cov.tallies}
        task_ids = [t for t in report.task_ids if any((t, a) in tally for a in approaches)]
        task_ids += sorted({t.task_id for t in cov.tallies} - set(task_ids))
        cov_approaches = sorted(cov.solved, key=lambda a: a.value)
        rows = [[t] + [tally[(t, a)].glyph if (t, a) in tally else "n/a" for a in cov_approaches] for t in task_ids]
        lines += _table(["Task"] + [a.short for a in cov_approaches], rows) + [""]
        lines += ["Solved sets:", ""]
        order = {t: i for i, t in enumerate(task_ids)}
        lines += [
            f"- {a.short}: {len(s)} tasks ({', '.join(sorted(s, key=order.__getitem__)) or 'none'})"
            for a, s in sorted(cov.solved.items(), key=lambda kv: kv[0].value)
        ]
        lines += [f"- {a.short} vs {b.short}: {r}" for a, b, r in cov.relations]
        lines.append("")

    agentic = [c for c in report.cells if c.mean_steps is not None]
    if agentic:
        lines += ["## Compounding", ""]
        for c in agentic:
            p = compound_success(COMPOUND_PER_STEP, c.mean_steps)
            lines.append(f"- {c.model_id} {c.approach.short}: {COMPOUND_PER_STEP:.0%} per step over {_fmt(c.mean_steps)} steps compounds to {p * 100:.1f}%")
        lines.append("")
    return "\n".join(lines)


CSV_COLUMNS = (
    "model_id", "approach", "trials", "excluded", "result_matches", "result_match_rate", "exec_success_rate",
    "relaxed_match_rate", "exact_match_rate", "mean_attempts", "mean_steps", "mean_tool_calls",
    "tokens_min", "tokens_q1", "tokens_median", "tokens_q3", "tokens_max", "tokens_mean",
)


def _csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for c in report.cells:
        s = c.token_stats
        tokens = [s.min, s.q1, s.median, s.q3, s.max, s.mean] if s else [None] * 6
        values = [c.model_id, c.approach.value, c.trials, c.excluded, c.result_matches, c.result_match_rate,
                  c.exec_success_rate, c.relaxed_match_rate, c.exact_match_rate, c.mean_attempts, c.mean_steps,
                  c.mean_tool_calls, *tokens]
        writer.writerow(["" if v is None else _fmt(v) if isinstance(v, float) else v for v in values])
    return buf.getvalue()


def emit_report(report: Report, fmt: ReportFormat | str) -> str:
    fmt = ReportFormat(fmt)
    if fmt is ReportFormat.MARKDOWN:
        return _markdown(report)
    if fmt is ReportFormat.CSV:
        return _csv(report)
    return json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"
