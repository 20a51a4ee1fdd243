#!/usr/bin/env python3
"""Regenerate the shipped Joern fixture and replay corpus.

The fixture is an authored stand-in for a recorded Joern session over the
two benchmark projects: every query that the benchmark, the reference specs
or the replay corpus can issue maps to a REPL-style raw output. The replay
corpus scripts one model ("replay-model") through all 3 x 20 x 3 trials.

Run from the repository root:

    python3 tools/build_corpus.py          # write both files
    python3 tools/build_corpus.py --check  # fail if the shipped files are stale
"""
from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from nl2cpgql.benchmark import load_benchmark  # noqa: E402
from nl2cpgql.mapper import compile_spec  # noqa: E402
from nl2cpgql.metrics import quoted_strings  # noqa: E402
from nl2cpgql.pipelines import ApproachId, trial_id  # noqa: E402
from nl2cpgql.schema import validate_document  # noqa: E402
from nl2cpgql.tools import tool_query  # noqa: E402

DATA = ROOT / "src" / "nl2cpgql" / "data"
FIXTURE = DATA / "fixtures" / "joern_fixture.json"
REPLAY = DATA / "replay" / "replay_corpus.json"
SPECS = ROOT / "tests" / "data" / "task_specs.json"
MODEL = "replay-model"
SEEDS = (42, 43, 44)

CL = "src/main/java/org/apache/commons/lang3/"
WG = "src/main/java/org/owasp/webgoat/lessons/"


# -- rendering Joern-like output ------------------------------------------------

def strings(*items: str) -> str:
    if len(items) <= 3:
        return "List(" + ", ".join(json.dumps(s) for s in items) + ")"
    return "List(\n" + ",\n".join("  " + json.dumps(s) for s in items) + "\n)"


def tuples(*rows: tuple) -> str:
    def cell(v):
        return json.dumps(v) if isinstance(v, str) else str(v)
    items = ["(" + ", ".join(cell(v) for v in row) + ")" for row in rows]
    if len(items) <= 2:
        return "List(" + ", ".join(items) + ")"
    return "List(\n" + ",\n".join("  " + i for i in items) + "\n)"


def table(rows: list[tuple[str, str, int, str, str]]) -> str:
    header = ("nodeType", "tracked", "line", "method", "file")
    body = [tuple(str(c) for c in r) for r in rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(5)]

    def line(cells):
        return "│" + "│".join(c.ljust(w) for c, w in zip(cells, widths)) + "│"

    def rule(left, mid, right):
        return left + mid.join("─" * w for w in widths) + right

    return "\n".join([rule("┌", "┬", "┐"), line(header), rule("├", "┼", "┤"), *(line(r) for r in body), rule("└", "┴", "┘")])


def paths(*ps: list) -> str:
    if not ps:
        return "List()"
    return "List(\n" + ",\n".join('  """' + table(p) + '"""' for p in ps) + "\n)"


def compile_error(query: str, message: str) -> str:
    return (
        "-- [E008] Not Found Error: ----------------------------------------------------\n"
        f"1 |{query}\n"
        f"  |{'^' * min(len(query), 12)}\n"
        f"  |{message}\n"
        "1 error found"
    )


EMPTY = "List()"

# -- per-task authored content ---------------------------------------------------
# gt: raw output of the ground truth; wrong/alt/error: A1 attempts;
# wrong_spec: the A2 spec used by failing trials; all/extra_paths: the
# composite's flows without its structural filter.

P = "MethodParameterIn"
I = "Identifier"
C = "Call"

SQLI = WG + "sqlinjection/"
PATH_CHALLENGE = [(C, 'req.getParameter("userid")', 64, "completed", SQLI + "advanced/SqlInjectionChallenge.java"),
                  (I, "query", 66, "completed", SQLI + "advanced/SqlInjectionChallenge.java"),
                  (C, "statement.executeQuery(query)", 69, "completed", SQLI + "advanced/SqlInjectionChallenge.java")]
PATH_ESCAPED = [(C, 'request.getParameter("account")', 48, "attack", SQLI + "mitigation/SqlInjectionLesson13.java"),
                (C, "ESAPI.encoder().encodeForSQL(codec, account)", 50, "attack", SQLI + "mitigation/SqlInjectionLesson13.java"),
                (C, "statement.executeQuery(query)", 55, "attack", SQLI + "mitigation/SqlInjectionLesson13.java")]
PATH_SERVERS = [(C, 'request.getParameter("column")', 41, "sort", SQLI + "mitigation/Servers.java"),
                (I, "query", 44, "sort", SQLI + "mitigation/Servers.java"),
                (C, "statement.executeQuery(query)", 47, "sort", SQLI + "mitigation/Servers.java")]

TASKS = {
    "S01": {
        "gt": strings("abbreviate", "capitalize", "center", "chomp", "contains", "defaultString", "isBlank",
                      "isEmpty", "join", "leftPad", "repeat", "replace", "split", "substring", "trim"),
        "wrong": ('cpg.method.name("StringUtils").isPublic.name.l', EMPTY),
    },
    "S02": {
        "gt": strings(
            "org.apache.commons.lang3.StringUtils.chomp:java.lang.String(java.lang.String,java.lang.String)",
            "org.apache.commons.lang3.StringUtils.getLevenshteinDistance:int(java.lang.CharSequence,java.lang.CharSequence,int)",
            "org.apache.commons.lang3.ObjectUtils.toString:java.lang.String(java.lang.Object,java.lang.String)",
            "org.apache.commons.lang3.time.DateUtils.toCalendar:java.util.Calendar(java.util.Date)",
        ),
        "wrong": ('cpg.annotation.name("Deprecated").method.name.l', strings("chomp", "getLevenshteinDistance", "toString", "toCalendar")),
    },
    "S03": {
        "gt": strings("void(boolean,java.lang.String,java.lang.Object[])",
                      "java.lang.Object(java.lang.Object,java.lang.String,java.lang.Object[])",
                      "java.lang.CharSequence(java.lang.CharSequence,java.lang.String,java.lang.Object[])",
                      "void(double,double,double)",
                      "void(java.lang.Object[],java.lang.String,java.lang.Object[])"),
        "wrong": ('cpg.method.name("Validate").isStatic.signature.l', EMPTY),
        "error": ['cpg.typeDecl("Validate").method.isStatic.signature.l'],
        "wrong_spec": {"query_type": "method_query", "filter": {"method_name": "Validate", "modifier": "static"}, "output_columns": ["signature"]},
    },
    "S04": {
        "gt": tuples(("buf = new StringBuilder(str.length() + 16)", 4021), ("buf = new char[len]", 5502), ("buf = new StringBuilder(size)", 7310)),
        "alt": 'cpg.assignment.where(_.target.isIdentifier.name("buf")).map(x => (x.code, x.lineNumber.getOrElse(-1))).l',
        "wrong": ('cpg.identifier.name("buf").map(i => (i.code, i.lineNumber.getOrElse(-1))).l',
                  tuples(("buf", 4021), ("buf", 4023), ("buf", 5502), ("buf", 5507), ("buf", 7310))),
        "error": ['cpg.assignment.target.name("buf").map(a => (a.code, a.lineNumber)).l'],
    },
    "S05": {
        "gt": tuples((CL + "StringUtils.java", 3174), (CL + "StringUtils.java", 3233), (CL + "StringUtils.java", 3241)),
        "wrong": ('cpg.method.name("indexOfDifference").map(m => (m.filename, m.lineNumber.getOrElse(-1))).l',
                  tuples((CL + "StringUtils.java", 3160), (CL + "StringUtils.java", 3225))),
        "wrong_spec": {"query_type": "method_query", "filter": {"method_name": "indexOfDifference"}, "output_columns": ["filename", "lineNumber"]},
    },
    "S06": {
        "gt": strings("completed", "login", "registration", "attack", "resetPassword", "changePassword"),
        "wrong": ('cpg.method.name("PostMapping").name.l', EMPTY),
    },
    "S07": {
        "gt": tuples(("injectableQuery", 67), ("injectableQueryAvailability", 59), ("injectableQueryIntegrity", 61),
                     ("checkSalaryRanking", 85), ("executeSqlInjection", 72)),
        "wrong": ('cpg.call.name("createStatement").method.fullName.l', strings(
            "org.owasp.webgoat.lessons.sqlinjection.introduction.SqlInjectionLesson5a.injectableQuery:org.owasp.webgoat.container.assignments.AttackResult(java.lang.String)",
            "org.owasp.webgoat.lessons.sqlinjection.introduction.SqlInjectionLesson9.injectableQueryIntegrity:org.owasp.webgoat.container.assignments.AttackResult(java.lang.String,java.lang.String)",
            "org.owasp.webgoat.lessons.sqlinjection.introduction.SqlInjectionLesson10.injectableQueryAvailability:org.owasp.webgoat.container.assignments.AttackResult(java.lang.String)",
            "org.owasp.webgoat.lessons.sqlinjection.introduction.SqlInjectionLesson8.checkSalaryRanking:org.owasp.webgoat.container.assignments.AttackResult(java.lang.String,java.lang.String)",
            "org.owasp.webgoat.lessons.sqlinjection.advanced.SqlInjectionLesson6a.executeSqlInjection:org.owasp.webgoat.container.assignments.AttackResult(java.lang.String)",
        )),
        "error": ['cpg.call("createStatement").method.name.l', 'cpg.calls.name("createStatement").l',
                  'cpg.call.name("createStatement").methodName.l'],
        "wrong_spec": {"query_type": "call_query", "filter": {"method_name": "createStatement"}, "output_columns": ["methodName"]},
        "wrong_spec_output": strings("injectableQuery", "injectableQueryAvailability", "injectableQueryIntegrity", "checkSalaryRanking", "executeSqlInjection"),
    },
    "D01": {
        "gt": paths(
            [(P, "String str", 283, "abbreviate", CL + "StringUtils.java"),
             (I, "str.substring(0, maxWidth - 3)", 301, "abbreviate", CL + "StringUtils.java")],
            [(P, "int maxWidth", 283, "abbreviate", CL + "StringUtils.java"),
             (I, "maxWidth - 3", 301, "abbreviate", CL + "StringUtils.java")],
        ),
        "wrong": ('cpg.method.name("abbreviate").parameter.reachableByFlows(cpg.call.name("substring")).p', EMPTY),
        "error": ["sink.reachableByFlows(source).p"],
    },
    "D02": {
        "gt": paths(
            [(P, "int size", 6712, "leftPad", CL + "StringUtils.java"),
             (I, "pads", 6715, "leftPad", CL + "StringUtils.java"),
             (C, "repeat(padChar, pads)", 6719, "leftPad", CL + "StringUtils.java")],
            [(P, "char padChar", 6712, "leftPad", CL + "StringUtils.java"),
             (C, "repeat(padChar, pads)", 6719, "leftPad", CL + "StringUtils.java")],
        ),
        "wrong": ('cpg.method.name("repeat").parameter.reachableByFlows(cpg.method.name("leftPad").parameter).p', EMPTY),
        "wrong_spec": {"query_type": "data_flow", "source": {"kind": "parameter", "method": "repeat"}, "sink": {"kind": "call", "name": "leftPad"}, "output_columns": ["code"]},
    },
    "D03": {
        "gt": paths(
            [(P, "Object[] array", 4190, "join", CL + "StringUtils.java"),
             (I, "array[i]", 4212, "join", CL + "StringUtils.java"),
             (C, "buf.append(array[i])", 4212, "join", CL + "StringUtils.java")],
            [(P, "char delimiter", 4190, "join", CL + "StringUtils.java"),
             (C, "buf.append(delimiter)", 4209, "join", CL + "StringUtils.java")],
            [(P, "Iterable<?> iterable", 4391, "join", CL + "StringUtils.java"),
             (I, "iterator", 4395, "join", CL + "StringUtils.java"),
             (C, "buf.append(obj)", 4402, "join", CL + "StringUtils.java")],
        ),
        "alt": 'def source = cpg.method.name("join").parameter\ndef sink = cpg.call.name("append").argument\nsink.reachableByFlows(source).dedup.p',
        "error": ['cpg.method.name("join").parameter.reachableByFlows(cpg.call.name("append").argument).p'],
    },
    "D04": {
        "gt": paths(
            [(P, "String accountName", 58, "injectableQuery", WG + "sqlinjection/introduction/SqlInjectionLesson5a.java"),
             (I, "query", 61, "injectableQuery", WG + "sqlinjection/introduction/SqlInjectionLesson5a.java"),
             (C, "statement.executeQuery(query)", 68, "injectableQuery", WG + "sqlinjection/introduction/SqlInjectionLesson5a.java")],
            [(P, "String login_count", 52, "injectableQuery", WG + "sqlinjection/introduction/SqlInjectionLesson5b.java"),
             (I, "queryString", 55, "injectableQuery", WG + "sqlinjection/introduction/SqlInjectionLesson5b.java"),
             (C, "query.executeQuery()", 71, "injectableQuery", WG + "sqlinjection/introduction/SqlInjectionLesson5b.java")],
        ),
        "wrong": ('cpg.method.name("injectableQuery").parameter.reachableBy(cpg.call.name("executeQuery")).p', EMPTY),
    },
    "D05": {
        "gt": paths(
            [("Literal", '"admin"', 47, "login", WG + "challenges/challenge5/Assignment5.java"),
             (C, 'username_login.equals("admin")', 47, "login", WG + "challenges/challenge5/Assignment5.java")],
        ),
        "wrong": ('cpg.literal.code("admin").reachableByFlows(cpg.call.name("equals").argument).p', EMPTY),
    },
    "D06": {
        "gt": paths(PATH_CHALLENGE, PATH_ESCAPED, PATH_SERVERS),
    },
    "D07": {
        "gt": paths(
            [(P, "String username", 41, "login", WG + "challenges/challenge1/Assignment1.java"),
             (C, 'session.setAttribute("user", username)', 49, "login", WG + "challenges/challenge1/Assignment1.java")],
        ),
        "wrong": ('cpg.method.name("login").parameter.reachableByFlows(cpg.call.name("setAttribute")).p', EMPTY),
        "wrong_spec": {"query_type": "data_flow", "source": {"kind": "parameter", "method": "setAttribute"}, "sink": {"kind": "call", "name": "login"}, "output_columns": ["code"]},
    },
    "C01": {
        "gt": paths(
            [(P, "String searchString", 6102, "replace", CL + "StringUtils.java"),
             (C, "text.indexOf(searchString, start)", 6118, "replace", CL + "StringUtils.java")],
            [(P, "String text", 6102, "replace", CL + "StringUtils.java"),
             (C, "text.indexOf(searchString, start)", 6118, "replace", CL + "StringUtils.java")],
        ),
        "extra_paths": [[(P, "int max", 6102, "replace", CL + "StringUtils.java"),
                   (I, "max", 6130, "replace", CL + "StringUtils.java"),
                   (C, "text.indexOf(searchString, start)", 6131, "replace", CL + "StringUtils.java")]],
        "alt": 'def source = cpg.method.name("replace").parameter.filter(_.typeFullName == "java.lang.String")\ndef sink = cpg.call.name("indexOf").argument\nsink.reachableByFlows(source).p',
    },
    "C02": {
        "gt": paths(PATH_CHALLENGE, PATH_ESCAPED),
        "all": [PATH_CHALLENGE, PATH_ESCAPED, PATH_SERVERS],
        "wrong": ('cpg.method.where(_.annotation.name("PostMapping")).call.name("getParameter").reachableByFlows(cpg.call.name("executeQuery")).p', EMPTY),
    },
    "C03": {
        "gt": paths(PATH_CHALLENGE, PATH_SERVERS),
        "all": [PATH_CHALLENGE, PATH_ESCAPED, PATH_SERVERS],
    },
    "C04": {
        "gt": paths(
            [(P, "String userid", 60, "completed", WG + "sqlinjection/advanced/SqlInjectionChallenge.java"),
             (I, "query", 66, "completed", WG + "sqlinjection/advanced/SqlInjectionChallenge.java"),
             (C, "statement.executeQuery(query)", 69, "completed", WG + "sqlinjection/advanced/SqlInjectionChallenge.java")],
        ),
        "extra_paths": [[(P, "HttpServletRequest req", 60, "completed", WG + "sqlinjection/advanced/SqlInjectionChallenge.java"),
                   (C, 'req.getParameter("userid")', 64, "completed", WG + "sqlinjection/advanced/SqlInjectionChallenge.java"),
                   (C, "statement.executeQuery(query)", 69, "completed", WG + "sqlinjection/advanced/SqlInjectionChallenge.java")]],
        "wrong": ('cpg.method.name("completed").parameter.typeFullName("String").reachableByFlows(cpg.call.name("executeQuery").argument).p', EMPTY),
        "error": ['def source = cpg.method.name("completed").parameter.typeFullName == "java.lang.String"\nsink.reachableByFlows(source).p'],
    },
    "C05": {
        "gt": paths(
            [(P, "String ip", 44, "attack", WG + "cia/CommandInjection.java"),
             (I, "command", 47, "attack", WG + "cia/CommandInjection.java"),
             (C, "Runtime.getRuntime().exec(command)", 52, "attack", WG + "cia/CommandInjection.java")],
        ),
        "extra_paths": [[(P, "String host", 38, "attack", WG + "cia/CommandInjection.java"),
                   (C, "sanitize(host)", 40, "attack", WG + "cia/CommandInjection.java"),
                   (C, "Runtime.getRuntime().exec(command)", 52, "attack", WG + "cia/CommandInjection.java")]],
        "wrong": ('cpg.method.name("attack").isPublic.parameter.reachableByFlows(cpg.call.name("exec").argument).p', EMPTY),
    },
    "C06": {
        "gt": paths(
            [(C, 'request.getHeader("X-Forwarded-For")', 77, "getLogin", WG + "hijacksession/HijackSessionAssignment.java"),
             (I, "cookieValue", 80, "getLogin", WG + "hijacksession/HijackSessionAssignment.java"),
             (C, "response.addCookie(cookie)", 84, "getLogin", WG + "hijacksession/HijackSessionAssignment.java")],
        ),
        "extra_paths": [[(C, 'request.getHeader("referer")', 58, "handleLogin", WG + "hijacksession/HijackSessionAssignment.java"),
                   (C, "response.addCookie(cookie)", 64, "handleLogin", WG + "hijacksession/HijackSessionAssignment.java")]],
        "alt": 'def source = cpg.method.where(_.annotation.name("GetMapping")).ast.isCall.name("getHeader")\ndef sink = cpg.call.name("addCookie").argument\nsink.reachableByFlows(source).p',
        "wrong": ('cpg.call.name("getHeader").reachableByFlows(cpg.call.name("addCookie").argument).p', EMPTY),
    },
}

# Trial plans, one entry per seed 42, 43, 44.
# A1: X exact, Y equivalent, W wrong, e<plan> an erroring query first, F three errors.
# A2: C correct spec, W wrong spec, i<plan> an invalid reply first.
# A3: C/R/W answer (correct, quoted strings only, wrong) after k tool calls; M step budget spent.
PLANS = {
    ApproachId.A1_DIRECT: {
        "S01": "X X X", "S02": "X X X", "S03": "W eW W", "S04": "Y eY W", "S05": "W W W", "S06": "X X X", "S07": "W F W",
        "D01": "W W eW", "D02": "W W W", "D03": "Y Y eY", "D04": "W W W", "D05": "W X W", "D06": "X X X", "D07": "W W W",
        "C01": "Y Y Y", "C02": "W W W", "C03": "X X X", "C04": "W W eW", "C05": "W W W", "C06": "Y W Y",
    },
    ApproachId.A2_STRUCTURED: {
        "S01": "C C C", "S02": "C C C", "S03": "W W W", "S04": "C iC C", "S05": "W W W", "S06": "C C C", "S07": "W W W",
        "D01": "C C C", "D02": "W W W", "D03": "C C C", "D04": "iC C C", "D05": "C C C", "D06": "C C C", "D07": "W W iW",
        "C01": "W C W", "C02": "W W W", "C03": "C C C", "C04": "W W C", "C05": "W W W", "C06": "C C iC",
    },
    ApproachId.A3_AGENTIC: {
        "S01": "C2 C3 C2", "S02": "C3 C2 R4", "S03": "R3 W5 M", "S04": "R3 R3 W4", "S05": "R3 R3 W3", "S06": "C1 C2 C2",
        "S07": "W3 W4 W4", "D01": "W2 W3 W4", "D02": "M W6 W4", "D03": "W3 C3 W4", "D04": "W3 W4 W3", "D05": "W2 W3 W4",
        "D06": "C2 C2 C3", "D07": "M M W7", "C01": "W3 W4 W3", "C02": "W3 W4 W4", "C03": "C2 C3 C3", "C04": "W3 W2 W4",
        "C05": "W6 M M", "C06": "W3 W2 W4",
    },
}

# Token totals per trial: anchors (sorted position -> total) interpolated
# linearly; trials are ranked by their number of LLM calls.
TOKEN_ANCHORS = {
    ApproachId.A1_DIRECT: {0: 1420, 14: 1431, 15: 1431, 29: 1438, 30: 1438, 44: 1449, 45: 1449, 53: 1462, 54: 2876, 58: 2951, 59: 6793},
    ApproachId.A2_STRUCTURED: {0: 1583, 14: 1595, 15: 1595, 29: 1608, 30: 1608, 44: 1620, 45: 1620, 55: 1641, 56: 3190, 59: 3355},
    ApproachId.A3_AGENTIC: {0: 3081, 14: 4768, 15: 4768, 29: 6756, 30: 6756, 44: 21883, 45: 21883, 53: 30512, 54: 34020, 59: 42790},
}
OUTPUT_TOKENS = {ApproachId.A1_DIRECT: 48, ApproachId.A2_STRUCTURED: 74, ApproachId.A3_AGENTIC: 61}

EXTRA_FIXTURE = {
    # generic samples used in documentation and tests
    'def source = cpg.method.name("processOrder").parameter; def sink = cpg.call.name("execute").argument; sink.reachableByFlows(source).p': EMPTY,
    'cpg.method.name("processOrder").name.l': strings("processOrder"),
    "cpg.method.name.l": strings("<init>", "main", "toString"),
}


def interpolate(anchors: dict[int, int], n: int = 60) -> list[int]:
    keys = sorted(anchors)
    out = []
    for i in range(n):
        lo = max(k for k in keys if k <= i)
        hi = min(k for k in keys if k >= i)
        if lo == hi:
            out.append(anchors[lo])
        else:
            frac = (i - lo) / (hi - lo)
            out.append(round(anchors[lo] + frac * (anchors[hi] - anchors[lo])))
    assert out == sorted(out)
    return out


def split_usage(total: int, calls: int, out_tokens: int) -> list[dict[str, int]]:
    weights = [10 + j for j in range(calls)]
    parts = [total * w // sum(weights) for w in weights]
    parts[-1] += total - sum(parts)
    usages = []
    for p in parts:
        o = min(out_tokens, p // 4)
        usages.append({"input_tokens": p - o, "output_tokens": o})
    return usages


def fence(text: str, lang: str = "") -> str:
    return f"```{lang}\n{text}\n```"


def spec_query(spec: dict) -> str:
    return compile_spec(validate_document(spec)).text


def invalid_reply(spec: dict, seed_index: int) -> str:
    bad = dict(spec)
    if seed_index % 2 == 0:
        bad["columns"] = bad.pop("output_columns")
        return json.dumps(bad)
    return json.dumps(bad)[:-12]  # truncated mid-object


def spec_reply(spec: dict, variant: int) -> str:
    # key order and layout vary across trials; the compiled query must not
    if variant % 3 == 0:
        return json.dumps(spec)
    if variant % 3 == 1:
        return fence(json.dumps(dict(reversed(list(spec.items()))), indent=2), "json")
    return "Here is the specification:\n" + fence(json.dumps(spec, indent=1, sort_keys=True), "json")


def tool_plan(tid: str, spec: dict) -> list[tuple[str, dict]]:
    qt = spec["query_type"]
    if qt == "method_query":
        f = spec["filter"]
        args = {a: f[k] for k, a in (("method_name", "name"), ("type_name", "class_name"), ("modifier", "modifier"), ("annotation", "annotation")) if k in f}
        probes = [("find_methods", {**args, "columns": spec["output_columns"]})]
    elif qt == "call_query":
        f = spec["filter"]
        probes = [("find_calls", {"name": f["method_name"], "columns": spec["output_columns"]})]
    elif qt == "assignment_query":
        probes = [("run_custom_query", {"query": spec_query(spec)})]
    elif qt == "data_flow":
        probes = [("trace_data_flow", {"source": spec["source"], "sink": spec["sink"]})]
    else:
        probes = [("trace_data_flow", {"source": spec["source"], "sink": spec["sink"]}),
                  ("run_custom_query", {"query": spec_query(spec)})]
    extra = []
    wrong = TASKS[tid].get("wrong")
    if wrong:
        extra.append(("run_custom_query", {"query": wrong[0]}))
    extra.append(("find_methods", {"modifier": "exported"}))  # rejected by the tool schema
    return probes + extra


def first_tracked(raw: str) -> list[str]:
    """The tracked code of each path's first row, i.e. the reaching source nodes."""
    out = []
    for chunk in raw.split('"""')[1::2]:
        row = chunk.split("\n")[3]
        out.append(row.strip("│").split("│")[1].strip())
    return out


def prose_with_quotes(gt_raw: str) -> str:
    quoted = sorted(quoted_strings(normalize_raw(gt_raw)))
    return "I found these results: " + ", ".join(json.dumps(q) for q in quoted) + "."


def normalize_raw(raw: str) -> str:
    from nl2cpgql.joern import normalize
    return normalize(raw)


def reordered(raw: str) -> str:
    """The same list with its elements in reverse order, on one line."""
    from nl2cpgql.metrics import split_top_level
    norm = normalize_raw(raw)
    name, body = norm.split("(", 1)
    items = split_top_level(body[:-1])
    return f"{name}(" + ", ".join(reversed(items)) + ")"


class Builder:
    def __init__(self):
        self.bench = load_benchmark(DATA / "benchmark.json")
        self.specs = json.loads(SPECS.read_text(encoding="utf-8"))
        self.outputs: dict[str, str] = {}
        self.trials: dict[str, list[dict]] = {}
        self.calls: dict[str, int] = {}

    def record(self, query: str, raw: str) -> None:
        prev = self.outputs.get(query)
        assert prev is None or prev == raw, f"conflicting fixture output for {query!r}"
        self.outputs[query] = raw

    def error(self, query: str) -> None:
        self.record(query, compile_error(query.splitlines()[-1], "value is not a member of the traversal, or the name is not in scope"))

    def build_fixture(self) -> None:
        for task in self.bench:
            info = TASKS[task.id]
            spec = self.specs[task.id]
            self.record(task.ground_truth_query, info["gt"])
            self.record(spec_query(spec), info["gt"])
            if "alt" in info:
                self.record(info["alt"], info["gt"])
            if "wrong" in info:
                self.record(*info["wrong"])
            for q in info.get("error", []):
                self.error(q)
            if spec["query_type"] == "composite":
                unfiltered = {k: v for k, v in spec.items() if k != "filter"} | {"query_type": "data_flow"}
                if "all" in info:
                    everything = paths(*info["all"])
                else:
                    extra = ",\n".join('  """' + table(p) + '"""' for p in info["extra_paths"])
                    everything = info["gt"][:-len("\n)")] + ",\n" + extra + "\n)"
                self.record(spec_query(unfiltered), everything)
                info.setdefault("wrong_spec", unfiltered)
            ws = info.get("wrong_spec")
            if ws is not None:
                q = spec_query(ws)
                if q not in self.outputs:
                    self.record(q, info.get("wrong_spec_output", EMPTY))
            if spec["query_type"] == "data_flow":
                reach = tool_query("find_reachable_by", {"source": spec["source"], "sink": spec["sink"]})
                self.record(reach, strings(*sorted(set(first_tracked(info["gt"])))))
        for q, raw in EXTRA_FIXTURE.items():
            self.record(q, raw)

    # each builder returns the scripted assistant turns (without usage)
    def a1_turns(self, tid: str, plan: str, seed_index: int) -> list[dict]:
        info = TASKS[tid]
        task = self.bench.by_id()[tid]
        if plan == "F":
            return [{"content": fence(q)} for q in info["error"][:3]]
        turns = []
        if plan.startswith("e"):
            turns.append({"content": "```scala\n" + info["error"][0] + "\n```"})
            plan = plan[1:]
        query = {"X": task.ground_truth_query, "Y": info.get("alt"), "W": (info.get("wrong") or (None,))[0]}[plan]
        assert query is not None, (tid, plan)
        styles = [fence(query), "The query is:\n" + fence(query, "scala"), query if "\n" not in query else fence(query)]
        turns.append({"content": styles[seed_index]})
        return turns

    def a2_turns(self, tid: str, plan: str, seed_index: int) -> list[dict]:
        info = TASKS[tid]
        turns = []
        spec = self.specs[tid]
        if plan.startswith("i"):
            turns.append({"content": invalid_reply(spec, seed_index)})
            plan = plan[1:]
        chosen = spec if plan == "C" else info["wrong_spec"]
        turns.append({"content": spec_reply(chosen, seed_index + int(tid[1:]))})
        return turns

    def a3_turns(self, tid: str, plan: str, seed_index: int) -> list[dict]:
        info = TASKS[tid]
        pool = tool_plan(tid, self.specs[tid])
        n_calls = 10 if plan == "M" else int(plan[1:])
        turns = []
        for j, (name, args) in zip(range(n_calls), itertools.cycle(pool)):
            turns.append({"content": "", "tool_calls": [{"id": f"call_{j + 1}", "tool_name": name, "arguments": json.dumps(args)}]})
        if plan == "M":
            return turns
        kind = plan[0]
        if kind == "C":
            gt = info["gt"]
            answer = reordered(gt) if seed_index == 1 and "\"\"\"" not in gt else normalize_raw(gt)
        elif kind == "R":
            answer = prose_with_quotes(info["gt"])
        else:
            answer = ["List()", "I could not find any results that answer this request.", "No matching flows or nodes exist."][seed_index]
        turns.append({"content": answer})
        return turns

    def build_replay(self) -> None:
        builders = {ApproachId.A1_DIRECT: self.a1_turns, ApproachId.A2_STRUCTURED: self.a2_turns, ApproachId.A3_AGENTIC: self.a3_turns}
        for approach, plans in PLANS.items():
            scripted = {}
            for tid, plan_text in plans.items():
                for i, (seed, plan) in enumerate(zip(SEEDS, plan_text.split())):
                    scripted[trial_id(approach, MODEL, tid, seed)] = builders[approach](tid, plan, i)
            ranked = sorted(scripted, key=lambda k: (len(scripted[k]), k))
            totals = interpolate(TOKEN_ANCHORS[approach])
            for key, total in zip(ranked, totals):
                turns = scripted[key]
                usages = split_usage(total, len(turns), OUTPUT_TOKENS[approach])
                self.trials[key] = [{"assistant_message": t, "usage": u} for t, u in zip(turns, usages)]

    def documents(self) -> dict[Path, str]:
        self.build_fixture()
        self.build_replay()
        res = {}
        keyed = {}
        for n, query in enumerate(sorted(self.outputs)):
            raw = self.outputs[query]
            if raw.startswith("-- ["):
                keyed[query] = raw
            else:
                kind = "List[String]" if raw.startswith("List(\"") or raw.startswith("List(\n  \"") else "List[Any]"
                keyed[query] = f"val res{n}: {kind} = {raw}\n"
        res[FIXTURE] = json.dumps(keyed, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
        res[REPLAY] = json.dumps({"version": 1, "trials": dict(sorted(self.trials.items()))}, indent=1, sort_keys=True, ensure_ascii=False) + "\n"
        return res


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--check", action="store_true", help="verify the shipped files instead of writing them")
    args = parser.parse_args(argv)
    docs = Builder().documents()
    stale = []
    for path, text in docs.items():
        if args.check:
            if not path.is_file() or path.read_text(encoding="utf-8") != text:
                stale.append(path)
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
            print(f"wrote {path.relative_to(ROOT)}")
    if stale:
        print("stale: " + ", ".join(str(p.relative_to(ROOT)) for p in stale), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
