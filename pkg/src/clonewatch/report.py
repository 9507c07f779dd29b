"""Scan reports: XML (Simian-like block elements), JSON, and a plain-text summary."""

from __future__ import annotations

import json
import os
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from ._time import format_timestamp, parse_timestamp
from .clonedetect import CloneMatch, ProjectVerdict, Status


@dataclass(frozen=True)
class ScanReport:
    cve_id: str
    scan_timestamp: datetime
    tool_version: str
    corpus_size: int
    filtered_count: int
    verdicts: tuple[ProjectVerdict, ...] = ()
    settings: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.filtered_count > self.corpus_size:
            raise ValueError("filtered_count exceeds corpus_size")
        object.__setattr__(self, "verdicts", tuple(sorted(self.verdicts, key=lambda v: v.project)))

    def status_counts(self) -> dict[Status, int]:
        counts = Counter(v.status for v in self.verdicts)
        return {status: counts.get(status, 0) for status in Status}


# ---------------------------------------------------------------------------
# XML
# ---------------------------------------------------------------------------

def _block(parent: ET.Element, kind: str, match: CloneMatch) -> None:
    ET.SubElement(parent, "block", {
        "kind": kind,
        "snippetIndex": str(match.snippet_index),
        "sourceFile": match.source_file,
        "startLineNumber": str(match.start_line),
        "endLineNumber": str(match.end_line),
        "lineCount": str(match.line_count),
    })


def to_xml(report: ScanReport) -> bytes:
    root = ET.Element("clonewatch", {
        "cve": report.cve_id,
        "timestamp": format_timestamp(report.scan_timestamp),
        "toolVersion": report.tool_version,
        "corpusSize": str(report.corpus_size),
        "filteredCount": str(report.filtered_count),
    })
    settings = ET.SubElement(root, "settings")
    for name in sorted(report.settings):
        ET.SubElement(settings, "setting", {
            "name": name, "value": json.dumps(report.settings[name], sort_keys=True),
        })
    for verdict in report.verdicts:
        attrs = {
            "name": verdict.project,
            "status": verdict.status.value,
            "processingTime": f"{verdict.elapsed:.3f}",
        }
        if verdict.diagnostic:
            attrs["diagnostic"] = verdict.diagnostic
        project = ET.SubElement(root, "project", attrs)
        for match in verdict.vuln_matches:
            _block(project, "vulnerable", match)
        for match in verdict.fix_matches:
            _block(project, "fix", match)
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


def emit_xml(report: ScanReport, path: str | os.PathLike) -> None:
    Path(path).write_bytes(to_xml(report))


def _match_from_xml(el: ET.Element) -> CloneMatch:
    return CloneMatch(
        source_file=el.get("sourceFile"),
        start_line=int(el.get("startLineNumber")),
        end_line=int(el.get("endLineNumber")),
        line_count=int(el.get("lineCount")),
        snippet_index=int(el.get("snippetIndex")),
    )


def parse_xml(path: str | os.PathLike) -> ScanReport:
    root = ET.parse(path).getroot()
    verdicts = []
    for project in root.iter("project"):
        blocks = project.findall("block")
        verdicts.append(ProjectVerdict(
            project=project.get("name"),
            status=Status(project.get("status")),
            vuln_matches=tuple(_match_from_xml(b) for b in blocks if b.get("kind") == "vulnerable"),
            fix_matches=tuple(_match_from_xml(b) for b in blocks if b.get("kind") == "fix"),
            elapsed=float(project.get("processingTime")),
            diagnostic=project.get("diagnostic", ""),
        ))
    settings = {s.get("name"): json.loads(s.get("value")) for s in root.iter("setting")}
    return ScanReport(
        cve_id=root.get("cve"),
        scan_timestamp=parse_timestamp(root.get("timestamp")),
        tool_version=root.get("toolVersion"),
        corpus_size=int(root.get("corpusSize")),
        filtered_count=int(root.get("filteredCount")),
        verdicts=tuple(verdicts),
        settings=settings,
    )


@lru_cache(maxsize=1)
def report_schema():
    import xmlschema

    with resources.as_file(resources.files("clonewatch").joinpath("data/report.xsd")) as xsd:
        return xmlschema.XMLSchema(str(xsd))


def validate_xml(path: str | os.PathLike) -> None:
    """Raise ``xmlschema.XMLSchemaValidationError`` if the report does not fit the schema."""
    report_schema().validate(str(path))


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def _match_json(m: CloneMatch) -> dict:
    return {
        "source_file": m.source_file,
        "start_line": m.start_line,
        "end_line": m.end_line,
        "line_count": m.line_count,
        "snippet_index": m.snippet_index,
    }


def report_to_json(report: ScanReport) -> dict:
    return {
        "cve_id": report.cve_id,
        "timestamp": format_timestamp(report.scan_timestamp),
        "tool_version": report.tool_version,
        "corpus_size": report.corpus_size,
        "filtered_count": report.filtered_count,
        "settings": dict(report.settings),
        "verdicts": [
            {
                "project": v.project,
                "status": v.status.value,
                "processing_time": v.elapsed,
                "diagnostic": v.diagnostic,
                "vuln_matches": [_match_json(m) for m in v.vuln_matches],
                "fix_matches": [_match_json(m) for m in v.fix_matches],
            }
            for v in report.verdicts
        ],
    }


def report_from_json(data: Mapping) -> ScanReport:
    return ScanReport(
        cve_id=data["cve_id"],
        scan_timestamp=parse_timestamp(data["timestamp"]),
        tool_version=data["tool_version"],
        corpus_size=data["corpus_size"],
        filtered_count=data["filtered_count"],
        settings=data.get("settings", {}),
        verdicts=tuple(
            ProjectVerdict(
                project=v["project"],
                status=Status(v["status"]),
                vuln_matches=tuple(CloneMatch(**m) for m in v["vuln_matches"]),
                fix_matches=tuple(CloneMatch(**m) for m in v["fix_matches"]),
                elapsed=v["processing_time"],
                diagnostic=v.get("diagnostic", ""),
            )
            for v in data["verdicts"]
        ),
    )


def emit_json(report: ScanReport, path: str | os.PathLike) -> None:
    text = json.dumps(report_to_json(report), indent=2, sort_keys=True, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_json(path: str | os.PathLike) -> ScanReport:
    return report_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Summary
# ---------------------------------------------------------------------------

def emit_summary(report: ScanReport) -> str:
    width = max([7, *(len(v.project) for v in report.verdicts)])
    header = f"{'PROJECT':<{width}}  {'STATUS':<12}  {'VULN':>5}  {'FIX':>5}  {'TIME(s)':>8}"
    rows = [
        f"{v.project:<{width}}  {v.status.value:<12}  {len(v.vuln_matches):>5}  "
        f"{len(v.fix_matches):>5}  {v.elapsed:>8.3f}"
        for v in report.verdicts
    ]
    totals = ", ".join(f"{s.value} {n}" for s, n in report.status_counts().items())
    lines = [
        f"{report.cve_id}: {report.filtered_count} of {report.corpus_size} projects in window",
        header,
        "-" * len(header),
        *rows,
        "-" * len(header),
        totals,
    ]
    return "\n".join(lines) + "\n"
