"""Command-line entry point: ``nl2cpgql compile|validate|run|report``.

Exit codes: 0 success, 1 domain failure, 2 I/O or usage error.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence, TextIO

from .benchmark import BenchmarkError, BenchmarkSet, Task, leakage_check, load_benchmark, validate_ground_truth
from .joern import BackendConfig, JoernClient, Mode
from .llm import ENDPOINT_ENV, Backend, LlmConfig
from .mapper import compile_spec
from .metrics import GroundTruthError, ReportFormat, build_report, emit_report, judge_all
from .pipelines import ApproachId, TrialRecord, prompt_files, run_trial
from .schema import InvalidSpecError, format_errors, parse_spec

log = logging.getLogger("nl2cpgql")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_SEEDS = (42, 43, 44)
DEFAULT_MODEL = "replay-model"

_APPROACH_ALIASES = {a.short: a for a in ApproachId} | {a.value: a for a in ApproachId}


class UsageError(Exception):
    pass


def _data_path(*parts: str) -> Path:
    return Path(str(resources.files("nl2cpgql").joinpath("data", *parts)))


def shipped_fixture() -> Path:
    return _data_path("fixtures", "joern_fixture.json")


def shipped_replay() -> Path:
    return _data_path("replay", "replay_corpus.json")


def _read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


def _joern_config(args: argparse.Namespace) -> BackendConfig:
    if args.joern_endpoint:
        return BackendConfig.live(args.joern_endpoint, timeout=args.joern_timeout)
    path = Path(args.fixture) if args.fixture else shipped_fixture()
    if not path.is_file():
        raise UsageError(f"fixture file not found: {path}")
    return BackendConfig.fixture(path)


def _joern_client(args: argparse.Namespace) -> JoernClient:
    config = _joern_config(args)
    try:
        return JoernClient(config)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load fixture {config.fixture_path}: {exc}") from None


def _benchmark(args: argparse.Namespace) -> BenchmarkSet:
    if args.benchmark and not Path(args.benchmark).is_file():
        raise UsageError(f"benchmark file not found: {args.benchmark}")
    return load_benchmark(args.benchmark)


# -- compile ----------------------------------------------------------------------

def cmd_compile(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    text = _read_text(args.spec)
    try:
        spec = parse_spec(text)
    except InvalidSpecError as exc:
        print(format_errors(exc.errors), file=err)
        return EXIT_FAIL
    print(compile_spec(spec, reachable=args.reachable).text, file=out)
    return EXIT_OK


# -- validate ---------------------------------------------------------------------

def cmd_validate(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    try:
        bench = _benchmark(args)
    except BenchmarkError as exc:
        print(str(exc), file=err)
        return EXIT_FAIL
    joern = _joern_client(args)
    checks = validate_ground_truth(bench, joern)
    passed = sum(c.passed for c in checks)
    for c in checks:
        print(f"{c.task_id}: {'pass' if c.passed else 'FAIL'}{'' if c.passed else ' (' + c.reason + ')'}", file=out)
    print(f"ground truth: {passed}/{len(checks)} pass", file=out)

    prompts = prompt_files() + [(p, _read_text(p)) for p in args.prompt]
    findings = leakage_check(bench, prompts)
    for f in findings:
        print(f"leak: {f}", file=out)
    print(f"leakage: {len(findings)} finding(s) in {len(prompts)} prompt file(s)", file=out)
    if args.record:
        entries = {task.ground_truth_query: c.result.raw_output for c, task in zip(checks, bench) if c.passed}
        Path(args.record).write_text(json.dumps(entries, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return EXIT_OK if passed == len(checks) and not findings else EXIT_FAIL


# -- run ----------------------------------------------------------------------------

@dataclass(frozen=True)
class RunPlan:
    approaches: tuple[ApproachId, ...]
    model_ids: tuple[str, ...]
    seeds: tuple[int, ...]
    benchmark: BenchmarkSet
    llm: LlmConfig
    joern: BackendConfig
    output_path: Path
    jobs: int = 1

    def __post_init__(self) -> None:
        if not self.approaches or not self.model_ids or not self.seeds:
            raise UsageError("a run needs at least one trial to select")
        if self.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        if self.jobs > 1 and (self.llm.backend is not Backend.REPLAY or self.joern.mode is not Mode.FIXTURE):
            raise UsageError("--jobs > 1 is only allowed with the replay and fixture backends")

    def trials(self) -> Iterator[tuple[ApproachId, str, Task, int]]:
        """Deterministic order: approach, model, task id, seed."""
        tasks = sorted(self.benchmark, key=lambda t: t.id)
        for approach in sorted(self.approaches, key=lambda a: a.value):
            for model in self.model_ids:
                for task in tasks:
                    for seed in self.seeds:
                        yield approach, model, task, seed


def read_records(path: Path, *, repair_tail: bool = False) -> list[TrialRecord]:
    """Parse a JSONL record file. A torn final line is dropped when ``repair_tail`` is set."""
    text = _read_text(path)
    lines = text.split("\n")
    records = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(TrialRecord.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            last = i == len(lines) - 1
            if repair_tail and last:
                log.warning("dropping torn final record line in %s", path)
                Path(path).write_text("\n".join(lines[:i]) + ("\n" if i else ""), encoding="utf-8")
                break
            raise ValueError(f"{path}:{i + 1}: unreadable trial record: {exc}") from None
    return records


def _approach(name: str) -> ApproachId:
    try:
        return _APPROACH_ALIASES[name]
    except KeyError:
        raise argparse.ArgumentTypeError(f"unknown approach {name!r}; use A1, A2 or A3") from None


def _plan(args: argparse.Namespace) -> RunPlan:
    bench = _benchmark(args)
    if args.tasks:
        wanted = set(args.tasks)
        unknown = wanted - set(bench.by_id())
        if unknown:
            raise UsageError(f"unknown task id(s): {', '.join(sorted(unknown))}")
        bench = BenchmarkSet(tuple(t for t in bench if t.id in wanted))
    models = tuple(args.model or [DEFAULT_MODEL])
    if args.llm_backend == Backend.HTTP.value:
        endpoint = args.llm_endpoint or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise UsageError(f"the http backend needs --llm-endpoint or {ENDPOINT_ENV}")
        llm = LlmConfig(models[0], backend=Backend.HTTP, endpoint=endpoint, temperature=args.temperature)
    else:
        replay = Path(args.replay) if args.replay else shipped_replay()
        if not replay.is_file():
            raise UsageError(f"replay file not found: {replay}")
        llm = LlmConfig(models[0], backend=Backend.REPLAY, replay_path=replay, temperature=args.temperature)
    return RunPlan(
        approaches=tuple(dict.fromkeys(args.approach or list(ApproachId))),
        model_ids=models,
        seeds=tuple(args.seed or DEFAULT_SEEDS),
        benchmark=bench,
        llm=llm,
        joern=_joern_config(args),
        output_path=Path(args.output),
        jobs=args.jobs,
    )


def execute_plan(plan: RunPlan, err: TextIO | None = None) -> tuple[int, int]:
    """Run every trial not already in the output file; returns (written, skipped)."""
    out_path = plan.output_path
    if out_path.exists():
        try:
            done = {r.key for r in read_records(out_path, repair_tail=True)}
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        done = set()
    pending = []
    skipped = 0
    for approach, model, task, seed in plan.trials():
        if (approach.value, model, task.id, seed) in done:
            skipped += 1
        else:
            pending.append((approach, model, task, seed))
    try:
        joern = JoernClient(plan.joern)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load fixture: {exc}") from None

    def one(item) -> TrialRecord:
        approach, model, task, seed = item
        llm = plan.llm if model == plan.llm.model_id else _with_model(plan.llm, model)
        return run_trial(approach, task, llm, joern, seed=seed)

    try:
        fh = out_path.open("a", encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot write {out_path}: {exc.strerror or exc}") from None
    with fh:
        if plan.jobs > 1:
            with ThreadPoolExecutor(max_workers=plan.jobs) as pool:
                # map yields in submission order, so the file order stays deterministic
                results = pool.map(one, pending)
                for rec in results:
                    _write(fh, rec, err)
        else:
            for item in pending:
                _write(fh, one(item), err)
    return len(pending), skipped


def _with_model(llm: LlmConfig, model: str) -> LlmConfig:
    return replace(llm, model_id=model)


def _write(fh: TextIO, rec: TrialRecord, err: TextIO | None) -> None:
    fh.write(rec.to_json() + "\n")
    fh.flush()
    if err is not None:
        log.info("%s %s %s seed=%d: %s", rec.approach.short, rec.model_id, rec.task_id, rec.seed, rec.outcome.status.value)


def cmd_run(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    try:
        plan = _plan(args)
    except BenchmarkError as exc:
        print(str(exc), file=err)
        return EXIT_FAIL
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    written, skipped = execute_plan(plan, err)
    print(f"wrote {written} trial record(s), skipped {skipped} already present", file=out)
    return EXIT_OK


# -- report -------------------------------------------------------------------------

def cmd_report(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    try:
        fmt = ReportFormat(args.format)
    except ValueError:
        print(args.usage, file=err, end="")
        print(f"error: unknown report format {args.format!r}; choose from {', '.join(f.value for f in ReportFormat)}", file=err)
        return EXIT_FAIL
    try:
        records = read_records(Path(args.records))
    except ValueError as exc:
        print(str(exc), file=err)
        return EXIT_FAIL
    try:
        bench = _benchmark(args)
    except BenchmarkError as exc:
        print(str(exc), file=err)
        return EXIT_FAIL
    joern = _joern_client(args)
    try:
        verdicts = judge_all(records, bench, joern)
    except (GroundTruthError, KeyError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_FAIL
    document = emit_report(build_report(records, verdicts, bench), fmt)
    if args.output:
        try:
            Path(args.output).write_text(document, encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot write {args.output}: {exc.strerror or exc}") from None
    else:
        out.write(document)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def _add_joern_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("Joern backend")
    g.add_argument("--fixture", help="recorded fixture JSON (default: the shipped fixture)")
    g.add_argument("--joern-endpoint", help="live Joern server URL; overrides --fixture")
    g.add_argument("--joern-timeout", type=float, default=30.0, help="live query timeout in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nl2cpgql", description="Translate analysis questions to CPGQL and evaluate the pipelines.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a QuerySpec JSON file to CPGQL")
    p.add_argument("spec", help="QuerySpec JSON file")
    p.add_argument("--reachable", action="store_true", help="render flows as reaching sources instead of paths")

    p = sub.add_parser("validate", help="check the benchmark, its ground truth and prompt leakage")
    p.add_argument("--benchmark", help="benchmark JSON (default: the shipped benchmark)")
    p.add_argument("--prompt", action="append", default=[], help="extra prompt file to leak-check (repeatable)")
    p.add_argument("--record", help="write passing ground-truth outputs to this fixture file")
    _add_joern_flags(p)

    p = sub.add_parser("run", help="run trials and append JSONL records")
    p.add_argument("--output", "-o", required=True, help="JSONL file; existing records are skipped")
    p.add_argument("--approach", action="append", type=_approach, help="A1, A2 or A3 (repeatable; default all)")
    p.add_argument("--model", action="append", help=f"model id (repeatable; default {DEFAULT_MODEL})")
    p.add_argument("--seed", action="append", type=int, help="seed (repeatable; default 42 43 44)")
    p.add_argument("--task", dest="tasks", action="append", help="restrict to a task id (repeatable)")
    p.add_argument("--benchmark", help="benchmark JSON (default: the shipped benchmark)")
    p.add_argument("--llm-backend", choices=[b.value for b in Backend], default=Backend.REPLAY.value)
    p.add_argument("--replay", help="replay corpus JSON (default: the shipped corpus)")
    p.add_argument("--llm-endpoint", help="OpenAI-compatible base URL for the http backend (default: $NL2CPGQL_LLM_ENDPOINT)")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--jobs", type=int, default=1, help="concurrent trials (replay and fixture backends only)")
    _add_joern_flags(p)

    p = sub.add_parser("report", help="judge trial records and render a report")
    p.add_argument("records", help="JSONL trial records")
    p.add_argument("--format", default=ReportFormat.MARKDOWN.value, help="markdown, csv or json")
    p.add_argument("--benchmark", help="benchmark JSON (default: the shipped benchmark)")
    p.add_argument("--output", "-o", help="write the report here instead of stdout")
    _add_joern_flags(p)
    p.set_defaults(usage=p.format_usage())
    return parser


COMMANDS = {"compile": cmd_compile, "validate": cmd_validate, "run": cmd_run, "report": cmd_report}


def main(argv: Sequence[str] | None = None, out: TextIO | None = None, err: TextIO | None = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s", stream=err)
    try:
        return COMMANDS[args.command](args, out, err)
    except UsageError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
