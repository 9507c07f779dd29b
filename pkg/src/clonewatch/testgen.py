"""Detection tests: annotated vulnerable and fix fragments packaged for the clone detector."""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .clonedetect import DEFAULT_PROFILE, NormalizationProfile, normalize_source
from .cve import CveDescriptor
from .errors import EmptyAfterNormalization, SchemaViolation

FORMAT_VERSION = 1


class SnippetLabel(str, enum.Enum):
    VULNERABLE = "VULNERABLE"
    FIX = "FIX"


@dataclass(frozen=True)
class Origin:
    commit: str = ""
    path: str = ""
    start_line: int = 1


@dataclass(frozen=True)
class CodeSnippet:
    label: SnippetLabel
    source_lines: tuple[str, ...]
    origin: Origin
    normalized: tuple[str, ...]

    @classmethod
    def build(
        cls,
        label: SnippetLabel,
        lines: Iterable[str],
        origin: Origin,
        profile: NormalizationProfile = DEFAULT_PROFILE,
    ) -> CodeSnippet:
        lines = tuple(lines)
        return cls(label, lines, origin, normalize_source(lines, profile).lines)

    @property
    def threshold(self) -> int:
        return len(self.normalized)


@dataclass(frozen=True)
class DetectionTest:
    cve_id: str
    language: str
    vulnerable_snippets: tuple[CodeSnippet, ...]
    fix_snippets: tuple[CodeSnippet, ...]
    profile: NormalizationProfile = DEFAULT_PROFILE

    @property
    def thresholds(self) -> tuple[int, ...]:
        """Exact match length per snippet, vulnerable snippets first."""
        return tuple(s.threshold for s in (*self.vulnerable_snippets, *self.fix_snippets))


Fragment = tuple[Sequence[str], "Origin | tuple | None"]


def _as_origin(origin) -> Origin:
    if origin is None:
        return Origin()
    if isinstance(origin, Origin):
        return origin
    return Origin(*origin)


def _snippets(label, fragments, profile) -> tuple[CodeSnippet, ...]:
    out = []
    for index, (lines, origin) in enumerate(fragments):
        snippet = CodeSnippet.build(label, lines, _as_origin(origin), profile)
        if not snippet.normalized:
            raise EmptyAfterNormalization(label.value, index)
        out.append(snippet)
    return tuple(out)


def build_detection_test(
    cve: CveDescriptor | str,
    vuln_fragments: Iterable[Fragment],
    fix_fragments: Iterable[Fragment],
    profile: NormalizationProfile = DEFAULT_PROFILE,
    language: str | None = None,
) -> DetectionTest:
    """Normalize annotated fragments; each snippet must later match in full."""
    if isinstance(cve, CveDescriptor):
        cve_id, language = cve.id, language or cve.affected_language
    else:
        cve_id = cve
    if not language:
        raise ValueError("language is required when no CveDescriptor is given")
    vuln = _snippets(SnippetLabel.VULNERABLE, vuln_fragments, profile)
    fix = _snippets(SnippetLabel.FIX, fix_fragments, profile)
    if not vuln:
        raise ValueError("at least one vulnerable fragment is required")
    if not fix:
        raise ValueError("at least one fix fragment is required")
    return DetectionTest(cve_id, language, vuln, fix, profile)


def _snippet_to_json(snippet: CodeSnippet) -> dict:
    return {
        "label": snippet.label.value,
        "origin": {
            "commit": snippet.origin.commit,
            "path": snippet.origin.path,
            "start_line": snippet.origin.start_line,
        },
        "lines": list(snippet.source_lines),
        "threshold": snippet.threshold,
    }


def detection_test_to_json(test: DetectionTest) -> dict:
    return {
        "format": FORMAT_VERSION,
        "cve_id": test.cve_id,
        "language": test.language,
        "profile": test.profile.to_json(),
        "snippets": [_snippet_to_json(s) for s in (*test.vulnerable_snippets, *test.fix_snippets)],
    }


def detection_test_from_json(data: Mapping) -> DetectionTest:
    for key in ("cve_id", "language", "snippets"):
        if key not in data:
            raise SchemaViolation(key)
    try:
        profile = NormalizationProfile.from_json(data.get("profile", {}))
    except (TypeError, ValueError) as exc:
        raise SchemaViolation("profile", str(exc)) from exc

    groups: dict[SnippetLabel, list[CodeSnippet]] = {l: [] for l in SnippetLabel}
    for n, entry in enumerate(data["snippets"]):
        where = f"snippets[{n}]"
        try:
            label = SnippetLabel(entry["label"])
            lines = entry["lines"]
            origin = Origin(**entry.get("origin", {}))
            threshold = entry["threshold"]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(where, str(exc)) from exc
        if not isinstance(lines, list) or not all(isinstance(x, str) for x in lines):
            raise SchemaViolation(f"{where}.lines", "expected a list of strings")
        snippet = CodeSnippet.build(label, lines, origin, profile)
        if not snippet.normalized:
            raise SchemaViolation(f"{where}.lines", "empty after normalization")
        if threshold != snippet.threshold:
            raise SchemaViolation(
                f"{where}.threshold",
                f"{threshold} does not equal normalized length {snippet.threshold}",
            )
        groups[label].append(snippet)

    if not groups[SnippetLabel.VULNERABLE] or not groups[SnippetLabel.FIX]:
        raise SchemaViolation("snippets", "need at least one VULNERABLE and one FIX snippet")
    return DetectionTest(
        cve_id=data["cve_id"],
        language=data["language"],
        vulnerable_snippets=tuple(groups[SnippetLabel.VULNERABLE]),
        fix_snippets=tuple(groups[SnippetLabel.FIX]),
        profile=profile,
    )


def save_test(test: DetectionTest, path: str | os.PathLike) -> None:
    text = json.dumps(detection_test_to_json(test), indent=2, ensure_ascii=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def load_test(path: str | os.PathLike) -> DetectionTest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaViolation("<document>", str(exc)) from exc
    if not isinstance(data, Mapping):
        raise SchemaViolation("<document>", "expected an object")
    return detection_test_from_json(data)
