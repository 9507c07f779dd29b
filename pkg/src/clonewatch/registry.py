"""Monitored-project corpus: manifest I/O, language filter and fork-date window filter."""

from __future__ import annotations

import csv
import enum
import io
import logging
import os
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator

from ._time import format_timestamp, parse_timestamp, utcnow
from .errors import DuplicateProject, MalformedManifest, UnresolvedForkDate
from .history import RepositoryHandle, VulnWindow, first_commit_date

log = logging.getLogger(__name__)

MANIFEST_HEADER = ("name", "repo", "language", "fork_date")


class ForkDateSource(str, enum.Enum):
    MANIFEST = "MANIFEST"
    FIRST_COMMIT = "FIRST_COMMIT"
    RESOLVED_FORK_POINT = "RESOLVED_FORK_POINT"


@dataclass(frozen=True)
class ProjectRecord:
    name: str
    repo_location: str
    declared_language: str
    fork_date: datetime | None = None
    fork_date_source: ForkDateSource | None = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("project name must be non-empty")
        if self.fork_date is not None and self.fork_date_source is None:
            object.__setattr__(self, "fork_date_source", ForkDateSource.MANIFEST)


class ProjectSet:
    """Immutable, name-ordered collection of :class:`ProjectRecord`."""

    __slots__ = ("_projects",)

    def __init__(self, projects: Iterable[ProjectRecord] = ()):
        projects = sorted(projects, key=lambda p: p.name)
        for a, b in zip(projects, projects[1:]):
            if a.name == b.name:
                raise DuplicateProject(a.name)
        self._projects = tuple(projects)

    def __iter__(self) -> Iterator[ProjectRecord]:
        return iter(self._projects)

    def __len__(self) -> int:
        return len(self._projects)

    def __contains__(self, name) -> bool:
        return any(p.name == name for p in self._projects)

    def __eq__(self, other) -> bool:
        return isinstance(other, ProjectSet) and self._projects == other._projects

    def __hash__(self):
        return hash(self._projects)

    def __repr__(self) -> str:
        return f"ProjectSet({[p.name for p in self._projects]!r})"

    def __getitem__(self, name: str) -> ProjectRecord:
        for p in self._projects:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self._projects]


def parse_manifest(text: str, now: datetime | None = None) -> ProjectSet:
    now = now or utcnow()
    records: list[ProjectRecord] = []
    seen: set[str] = set()
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        try:
            row = next(csv.reader([raw]))
        except csv.Error as exc:
            raise MalformedManifest(lineno, str(exc)) from exc
        row = [cell.strip() for cell in row]
        if not header_seen:
            if tuple(c.lower() for c in row) != MANIFEST_HEADER:
                raise MalformedManifest(lineno, f"expected header {','.join(MANIFEST_HEADER)}")
            header_seen = True
            continue
        if len(row) != len(MANIFEST_HEADER):
            raise MalformedManifest(lineno, f"expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
        name, repo, language, fork_date = row
        if not name:
            raise MalformedManifest(lineno, "empty project name")
        if not repo:
            log.warning("manifest line %d: %s has no repository location; skipped", lineno, name)
            continue
        if name in seen:
            raise DuplicateProject(name)
        seen.add(name)
        when = None
        if fork_date:
            try:
                when = parse_timestamp(fork_date)
            except ValueError as exc:
                raise MalformedManifest(lineno, f"bad fork_date {fork_date!r}") from exc
            if when > now:
                raise MalformedManifest(lineno, f"fork_date {fork_date} is in the future")
        records.append(ProjectRecord(name, repo, language, when))
    if not header_seen:
        raise MalformedManifest(1, "missing header")
    return ProjectSet(records)


def load_manifest(path: str | os.PathLike) -> ProjectSet:
    """Read a ``name,repo,language,fork_date`` manifest.

    Rows without a repository location are dropped with a warning.
    """
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def dump_manifest(projects: ProjectSet) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for p in projects:
        # only manifest-declared dates belong in a manifest
        declared = p.fork_date if p.fork_date_source == ForkDateSource.MANIFEST else None
        writer.writerow([p.name, p.repo_location, p.declared_language,
                         format_timestamp(declared) if declared else ""])
    return buf.getvalue()


def save_manifest(projects: ProjectSet, path: str | os.PathLike) -> None:
    Path(path).write_text(dump_manifest(projects), encoding="utf-8")


def filter_by_language(projects: ProjectSet, language: str) -> ProjectSet:
    if not language:
        raise ValueError("language tag must be non-empty")
    tag = language.casefold()
    return ProjectSet(p for p in projects if p.declared_language.casefold() == tag)


def resolve_fork_date(project: ProjectRecord, history: RepositoryHandle) -> ProjectRecord:
    """Fill a missing fork date from the earliest commit of the project's repository."""
    if project.fork_date is not None:
        return project
    return replace(
        project,
        fork_date=first_commit_date(history),
        fork_date_source=ForkDateSource.FIRST_COMMIT,
    )


def filter_candidates(projects: ProjectSet, window: VulnWindow) -> ProjectSet:
    """Projects forked inside the window, both ends inclusive."""
    kept = []
    for p in projects:
        if p.fork_date is None:
            raise UnresolvedForkDate(p.name)
        if window.intro_min <= p.fork_date <= window.fix_max:
            kept.append(p)
    return ProjectSet(kept)
