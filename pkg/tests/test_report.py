import json
import xml.etree.ElementTree as ET
from dataclasses import replace
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clonewatch.clonedetect import CloneMatch, ProjectVerdict, Status
from clonewatch.report import (
    ScanReport,
    emit_json,
    emit_summary,
    emit_xml,
    load_json,
    parse_xml,
    to_xml,
    validate_xml,
)

WHEN = datetime(2018, 9, 20, 12, 0, tzinfo=timezone.utc)


def report(*verdicts, **kw):
    base = dict(cve_id="CVE-2018-17144", scan_timestamp=WHEN, tool_version="0.1.0",
                corpus_size=len(verdicts), filtered_count=len(verdicts), verdicts=verdicts,
                settings={"min_block": 6, "language": "C++"})
    base.update(kw)
    return ScanReport(**base)


def test_xml_golden_block(tmp_path):
    match = CloneMatch("src/main.cpp", 100, 119, 20, 0)
    emit_xml(report(ProjectVerdict("pigeon", Status.VULNERABLE, (match,), elapsed=1.23456)),
             tmp_path / "r.xml")
    text = (tmp_path / "r.xml").read_text()
    assert 'sourceFile="src/main.cpp" startLineNumber="100" endLineNumber="119" lineCount="20"' in text
    assert 'processingTime="1.235"' in text
    assert text.startswith("<?xml version='1.0' encoding='utf-8'?>")
    validate_xml(tmp_path / "r.xml")


def test_xml_empty(tmp_path):
    emit_xml(report(), tmp_path / "r.xml")
    root = ET.parse(tmp_path / "r.xml").getroot()
    assert root.tag == "clonewatch" and root.get("cve") == "CVE-2018-17144"
    assert root.findall("project") == []
    validate_xml(tmp_path / "r.xml")


def test_schema_rejects_bad_status(tmp_path):
    import xmlschema

    text = to_xml(report(ProjectVerdict("a", Status.NOT_AFFECTED))).replace(b"NOT_AFFECTED", b"MAYBE")
    (tmp_path / "r.xml").write_bytes(text)
    with pytest.raises(xmlschema.XMLSchemaValidationError):
        validate_xml(tmp_path / "r.xml")


def test_invariants():
    with pytest.raises(ValueError):
        report(corpus_size=1, filtered_count=2)
    r = report(ProjectVerdict("b", Status.NOT_AFFECTED), ProjectVerdict("a", Status.FILTERED_OUT))
    assert [v.project for v in r.verdicts] == ["a", "b"]


def test_summary_totals():
    m = CloneMatch("f.cpp", 1, 4, 4)
    r = report(
        ProjectVerdict("a", Status.VULNERABLE, (m,)),
        ProjectVerdict("b", Status.VULNERABLE, (m, m)),
        ProjectVerdict("c", Status.FIXED, (), (m,)),
    )
    text = emit_summary(r)
    assert text.rstrip().splitlines()[-1] == "VULNERABLE 2, FIXED 1, NOT_AFFECTED 0, FILTERED_OUT 0, ERROR 0"
    assert "b        VULNERABLE        2      0" in text


def test_summary_empty():
    lines = emit_summary(report()).rstrip().splitlines()
    assert lines[1].startswith("PROJECT") and len(lines) == 5
    assert lines[-1] == "VULNERABLE 0, FIXED 0, NOT_AFFECTED 0, FILTERED_OUT 0, ERROR 0"


names = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc", "Cn")), min_size=1, max_size=12)
matches = st.builds(
    lambda f, s, n, i: CloneMatch(f, s, s + n + 2, n, i),
    names, st.integers(1, 10_000), st.integers(1, 50), st.integers(0, 3),
)


@st.composite
def verdicts(draw):
    status = draw(st.sampled_from(list(Status)))
    vm = fm = ()
    if status is Status.VULNERABLE:
        vm = tuple(draw(st.lists(matches, min_size=1, max_size=3)))
    elif status is Status.FIXED:
        vm = tuple(draw(st.lists(matches, max_size=2)))
        fm = tuple(draw(st.lists(matches, min_size=1, max_size=3)))
    elapsed = draw(st.floats(0, 1000, allow_nan=False))
    diag = draw(st.sampled_from(["", "unreadable tree"])) if status is Status.ERROR else ""
    return ProjectVerdict(draw(names), status, vm, fm, elapsed, diag)


reports = st.lists(verdicts(), max_size=6, unique_by=lambda v: v.project).map(
    lambda vs: report(*vs, settings={"globs": ["*.cpp"], "min_block": 6, "x": None})
)


@settings(max_examples=60, deadline=None)
@given(reports)
def test_xml_valid_and_round_trips(tmp_path_factory, r):
    path = tmp_path_factory.mktemp("x") / "r.xml"
    emit_xml(r, path)
    validate_xml(path)
    back = parse_xml(path)
    rounded = replace(r, verdicts=tuple(replace(v, elapsed=float(f"{v.elapsed:.3f}")) for v in r.verdicts))
    assert back == rounded


@settings(max_examples=60, deadline=None)
@given(reports)
def test_json_round_trip(tmp_path_factory, r):
    path = tmp_path_factory.mktemp("j") / "r.json"
    emit_json(r, path)
    assert load_json(path) == r
    json.loads(path.read_text())
