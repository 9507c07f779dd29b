"""Vulnerability descriptors and issue records."""

from __future__ import annotations

import json
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping

from ._time import parse_timestamp
from .errors import BadCveId, SchemaViolation

if TYPE_CHECKING:
    from .history import CommitRef

CVE_ID_RE = re.compile(r"^CVE-\d{4}-\d{4,}$")
TOKEN_RE = re.compile(r"cve-\d{4}-\d{4,}|[^\W_]+")


@dataclass(frozen=True)
class CveDescriptor:
    id: str
    published: datetime
    description: str
    keywords: tuple[str, ...]
    reference_links: tuple[str, ...]
    affected_language: str
    affected_projects: tuple[str, ...] = ()
    code_specific: bool = True
    introduced_in: tuple[str, ...] = ()
    fixed_in: tuple[str, ...] = ()


@dataclass(frozen=True)
class IssueRecord:
    issue_id: str
    state_labels: frozenset[str] = frozenset()
    linked_commits: tuple[CommitRef, ...] = ()
    title_and_body: str = field(default="", repr=False)


def load_stopwords(path: str | os.PathLike | None = None) -> frozenset[str]:
    """Read a stopword file (one token per line, ``#`` comments). Defaults to the bundled list."""
    if path is None:
        text = resources.files("clonewatch").joinpath("data/stopwords.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    words = (line.strip().lower() for line in text.splitlines())
    return frozenset(w for w in words if w and not w.startswith("#"))


def extract_keywords(description: str, stopwords: Iterable[str] = ()) -> list[str]:
    """Lowercase keywords ordered by descending frequency, ties by first appearance.

    CVE identifiers in the text are kept whole and always bring the token
    ``cve`` along with them, regardless of the stopword list.
    """
    stop = {w.lower() for w in stopwords}
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    for match in TOKEN_RE.finditer(description.lower()):
        token = match.group()
        if token.startswith("cve-") and token[4:5].isdigit():
            emitted = ["cve", token]
        elif token in stop:
            continue
        else:
            emitted = [token]
        for tok in emitted:
            counts[tok] += 1
            first_seen.setdefault(tok, len(first_seen))
    return sorted(counts, key=lambda t: (-counts[t], first_seen[t]))


def _require(doc: Mapping, key: str, kind: type | tuple[type, ...]):
    if key not in doc or not isinstance(doc[key], kind):
        raise SchemaViolation(key)
    return doc[key]


def _description(doc: Mapping) -> str:
    if isinstance(doc.get("description"), str):
        return doc["description"]
    # NVD 2.0 style: "descriptions": [{"lang": "en", "value": ...}]
    for entry in doc.get("descriptions", ()):
        if isinstance(entry, Mapping) and entry.get("lang", "en") == "en":
            return str(entry.get("value", ""))
    raise SchemaViolation("description")


def _links(doc: Mapping) -> tuple[str, ...]:
    links = []
    for ref in _require(doc, "references", list):
        url = ref.get("url") if isinstance(ref, Mapping) else ref
        if not isinstance(url, str) or not url:
            raise SchemaViolation("references", f"bad entry {ref!r}")
        links.append(url)
    return tuple(links)


def _str_list(doc: Mapping, key: str) -> tuple[str, ...]:
    value = doc.get(key, [])
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaViolation(key, "expected a list of strings")
    return tuple(value)


def parse_cve(document: str | Mapping, stopwords: Iterable[str] | None = None) -> CveDescriptor:
    """Build a :class:`CveDescriptor` from JSON text or an already-decoded mapping."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaViolation("<document>", str(exc)) from exc
    if not isinstance(document, Mapping):
        raise SchemaViolation("<document>", "expected an object")

    cve_id = _require(document, "id", str).strip()
    if not CVE_ID_RE.match(cve_id):
        raise BadCveId(f"not a CVE identifier: {cve_id!r}")
    try:
        published = parse_timestamp(_require(document, "published", str))
    except ValueError as exc:
        raise SchemaViolation("published", str(exc)) from exc
    description = _description(document)
    protocol_level = document.get("protocol_level", False)
    if not isinstance(protocol_level, bool):
        raise SchemaViolation("protocol_level", "expected a boolean")

    if stopwords is None:
        stopwords = load_stopwords()
    return CveDescriptor(
        id=cve_id,
        published=published,
        description=description,
        keywords=tuple(extract_keywords(description, stopwords)),
        reference_links=_links(document),
        affected_language=_require(document, "affected_language", str),
        affected_projects=_str_list(document, "affected_projects"),
        code_specific=not protocol_level,
        introduced_in=_str_list(document, "introduced_in"),
        fixed_in=_str_list(document, "fixed_in"),
    )


def load_cve(path: str | os.PathLike, stopwords: Iterable[str] | None = None) -> CveDescriptor:
    return parse_cve(Path(path).read_text(encoding="utf-8"), stopwords)


def build_issue_query(cve: CveDescriptor, k: int = 5) -> str:
    """Case-insensitive alternation of the CVE id, ``CVE`` and the top ``k`` keywords."""
    if k < 0:
        raise ValueError("k must be non-negative")
    terms = [cve.id, "CVE"]
    seen = {t.lower() for t in terms}
    for kw in cve.keywords:
        if len(terms) - 2 >= k:
            break
        if kw not in seen:
            terms.append(kw)
            seen.add(kw)
    return "(?i)(?:" + "|".join(re.escape(t) for t in terms) + ")"
