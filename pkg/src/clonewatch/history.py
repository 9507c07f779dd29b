"""Parent-project history: fix-commit matching, blame-based introducer search
and the vulnerability window.

Git is driven as a subprocess; nothing here mutates a repository.
"""

from __future__ import annotations

import json
import logging
import os
import re
import subprocess
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping

from ._time import format_timestamp, from_epoch, parse_timestamp
from .cve import IssueRecord
from .errors import (
    BadPattern,
    CommitNotFound,
    EmptyCommitSet,
    EmptyHistory,
    InvertedWindow,
    MalformedIssueExport,
    RepoUnreadable,
)

log = logging.getLogger(__name__)

HEX_RE = re.compile(r"^[0-9a-f]{7,40}$")
HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
BLAME_HEADER_RE = re.compile(r"^([0-9a-f]{40}) (\d+) (\d+)")

#: Issue labels that mark an issue as resolved or as a bug report.
FIX_LABELS = frozenset({"fixed", "resolved", "closed", "bug"})


@dataclass(frozen=True)
class CommitRef:
    """A commit identified by hash. Equality and hashing use the hash only."""

    hash: str
    committer_date: datetime | None = field(default=None, compare=False)
    author_date: datetime | None = field(default=None, compare=False)
    touched_files: tuple[str, ...] = field(default=(), compare=False)
    parent_hashes: tuple[str, ...] = field(default=(), compare=False)
    message: str = field(default="", compare=False, repr=False)

    def __post_init__(self):
        if not HEX_RE.match(self.hash):
            raise ValueError(f"not a lowercase hex commit hash: {self.hash!r}")

    @property
    def short(self) -> str:
        return self.hash[:7]


@dataclass(frozen=True)
class RepositoryHandle:
    root_path: Path
    default_branch: str = "HEAD"


@dataclass(frozen=True)
class VulnWindow:
    intro_min: datetime
    fix_max: datetime
    intro_commits: frozenset[CommitRef] = frozenset()
    fix_commits: frozenset[CommitRef] = frozenset()

    def __post_init__(self):
        if self.intro_min > self.fix_max:
            raise InvertedWindow(
                f"oldest introducing commit ({format_timestamp(self.intro_min)}) is newer "
                f"than newest fixing commit ({format_timestamp(self.fix_max)})"
            )

    def contains(self, when: datetime) -> bool:
        return self.intro_min <= when <= self.fix_max


# ---------------------------------------------------------------------------
# git plumbing
# ---------------------------------------------------------------------------

def _git(repo: RepositoryHandle | Path | str, *args: str) -> str:
    root = repo.root_path if isinstance(repo, RepositoryHandle) else Path(repo)
    cmd = ["git", "-c", "core.quotepath=false", "-C", str(root), *args]
    env = dict(os.environ, LC_ALL="C", GIT_PAGER="cat")
    try:
        proc = subprocess.run(cmd, capture_output=True, env=env, check=False)
    except OSError as exc:
        raise RepoUnreadable(f"cannot run git: {exc}") from exc
    if proc.returncode != 0:
        raise subprocess.CalledProcessError(
            proc.returncode, cmd, proc.stdout, proc.stderr.decode("utf-8", "replace")
        )
    return proc.stdout.decode("utf-8", "replace")


def open_repository(path: str | os.PathLike, branch: str | None = None) -> RepositoryHandle:
    root = Path(path)
    if not root.is_dir():
        raise RepoUnreadable(f"{root}: not a directory")
    try:
        _git(root, "rev-parse", "--git-dir")
    except subprocess.CalledProcessError as exc:
        raise RepoUnreadable(f"{root}: not a git repository") from exc
    if branch is None:
        try:
            branch = _git(root, "symbolic-ref", "--short", "-q", "HEAD").strip() or "HEAD"
        except subprocess.CalledProcessError:
            branch = "HEAD"
    return RepositoryHandle(root_path=root, default_branch=branch)


def _has_commits(repo: RepositoryHandle) -> bool:
    try:
        _git(repo, "rev-parse", "--verify", "-q", f"{repo.default_branch}^{{commit}}")
    except subprocess.CalledProcessError:
        return False
    return True


def get_commit(repo: RepositoryHandle, rev: str) -> CommitRef:
    try:
        full = _git(repo, "rev-parse", "--verify", "-q", f"{rev}^{{commit}}").strip()
    except subprocess.CalledProcessError as exc:
        raise CommitNotFound(f"{rev} not found in {repo.root_path}") from exc
    out = _git(repo, "log", "-1", "--format=%P%x00%at%x00%ct%x00%B", full)
    parents, author_ts, commit_ts, message = out.split("\x00", 3)
    parent_hashes = tuple(parents.split())
    if parent_hashes:
        files = _git(repo, "diff", "--name-only", "--no-renames", parent_hashes[0], full)
    else:
        files = _git(repo, "diff-tree", "--root", "--no-commit-id", "-r", "--name-only", full)
    return CommitRef(
        hash=full,
        committer_date=from_epoch(int(commit_ts)),
        author_date=from_epoch(int(author_ts)),
        touched_files=tuple(f for f in files.splitlines() if f),
        parent_hashes=parent_hashes,
        message=message.rstrip("\n"),
    )


def read_file_at(repo: RepositoryHandle, rev: str, path: str) -> str:
    try:
        return _git(repo, "show", f"{rev}:{path}")
    except subprocess.CalledProcessError as exc:
        raise CommitNotFound(f"{rev}:{path} not found in {repo.root_path}") from exc


def first_commit_date(repo: RepositoryHandle) -> datetime:
    """Earliest committer timestamp reachable from the default branch."""
    if not _has_commits(repo):
        raise EmptyHistory(f"{repo.root_path}: no commits on {repo.default_branch}")
    try:
        out = _git(repo, "log", "--format=%ct", repo.default_branch)
    except subprocess.CalledProcessError as exc:
        raise RepoUnreadable(str(exc.stderr).strip()) from exc
    return from_epoch(min(int(t) for t in out.split()))


# ---------------------------------------------------------------------------
# Fix-commit matching
# ---------------------------------------------------------------------------

def qualifying_issues(
    issues: Iterable[IssueRecord], labels: Iterable[str] = FIX_LABELS
) -> list[IssueRecord]:
    wanted = {label.lower() for label in labels}
    return [issue for issue in issues if issue.state_labels & wanted]


def fix_commit_matches(
    issues: Iterable[IssueRecord], pattern: str
) -> dict[CommitRef, frozenset[str]]:
    """Map each matching linked commit to what matched: ``message``, ``issue`` or both."""
    try:
        regex = re.compile(pattern)
    except re.error as exc:
        raise BadPattern(f"{pattern!r}: {exc}") from exc
    found: dict[CommitRef, set[str]] = {}
    for issue in issues:
        issue_hit = bool(regex.search(issue.title_and_body))
        for commit in issue.linked_commits:
            targets = set()
            if commit.message and regex.search(commit.message):
                targets.add("message")
            if issue_hit:
                targets.add("issue")
            if targets:
                found.setdefault(commit, set()).update(targets)
    return {commit: frozenset(t) for commit, t in found.items()}


def match_fix_commits(issues: Iterable[IssueRecord], pattern: str) -> frozenset[CommitRef]:
    """Bug-fixing commits: linked commits whose message or issue text matches ``pattern``."""
    return frozenset(fix_commit_matches(issues, pattern))


# ---------------------------------------------------------------------------
# Blame
# ---------------------------------------------------------------------------

@dataclass
class _FileChange:
    old_path: str | None
    removed: set[int] = field(default_factory=set)
    insert_after: set[int] = field(default_factory=set)


def _strip_prefix(raw: str, prefix: str) -> str | None:
    raw = raw.rstrip("\n").split("\t", 1)[0]
    if raw.startswith('"') and raw.endswith('"'):
        raw = raw[1:-1].encode("latin-1", "backslashreplace").decode("unicode_escape")
    if raw == "/dev/null":
        return None
    return raw[len(prefix):] if raw.startswith(prefix) else raw


def _parse_zero_context_diff(diff: str) -> list[_FileChange]:
    changes: list[_FileChange] = []
    current: _FileChange | None = None
    for line in diff.splitlines():
        if line.startswith("diff --git "):
            current = _FileChange(old_path=None)
            changes.append(current)
        elif current is None:
            continue
        elif line.startswith("--- "):
            current.old_path = _strip_prefix(line[4:], "a/")
        elif line.startswith("@@"):
            m = HUNK_RE.match(line)
            if not m or current.old_path is None:
                continue
            start = int(m.group(1))
            count = 1 if m.group(2) is None else int(m.group(2))
            if count:
                current.removed.update(range(start, start + count))
            else:
                # pure insertion after old line ``start`` (0 = top of file)
                current.insert_after.add(start)
    return [c for c in changes if c.old_path is not None]


def _blame_lines(repo: RepositoryHandle, rev: str, path: str) -> dict[int, str]:
    out = _git(repo, "blame", "--porcelain", rev, "--", path)
    owners = {}
    for line in out.splitlines():
        m = BLAME_HEADER_RE.match(line)
        if m:
            owners[int(m.group(3))] = m.group(1)
    return owners


def blame_previous_commits(fix: CommitRef | str, repo: RepositoryHandle) -> frozenset[CommitRef]:
    """Commits that last touched the lines a fix removed or changed.

    Lines are blamed at the fix's first parent. For insert-only hunks the
    lines directly above and below the insertion point are blamed instead.
    """
    rev = fix.hash if isinstance(fix, CommitRef) else fix
    fix_commit = get_commit(repo, rev)
    if not fix_commit.parent_hashes:
        return frozenset()
    parent = fix_commit.parent_hashes[0]
    diff = _git(
        repo, "diff", "-U0", "-M", "--no-color", "--no-ext-diff",
        "--src-prefix=a/", "--dst-prefix=b/", parent, fix_commit.hash,
    )
    owners: set[str] = set()
    for change in _parse_zero_context_diff(diff):
        try:
            blame = _blame_lines(repo, parent, change.old_path)
        except subprocess.CalledProcessError:
            log.warning("cannot blame %s at %s; skipped", change.old_path, parent[:7])
            continue
        wanted = set(change.removed)
        for after in change.insert_after:
            wanted.update((after, after + 1))
        owners.update(blame[n] for n in wanted if n in blame)
    owners.discard(fix_commit.hash)
    return frozenset(get_commit(repo, h) for h in sorted(owners))


# ---------------------------------------------------------------------------
# Window
# ---------------------------------------------------------------------------

def _dates(commits: Iterable[CommitRef]) -> list[datetime]:
    dates = []
    for commit in commits:
        if commit.committer_date is None:
            raise ValueError(f"commit {commit.short} has no committer date; resolve it first")
        dates.append(commit.committer_date)
    return dates


def compute_window(intro: Iterable[CommitRef], fix: Iterable[CommitRef]) -> VulnWindow:
    intro, fix = frozenset(intro), frozenset(fix)
    if not intro:
        raise EmptyCommitSet("bug-introducing")
    if not fix:
        raise EmptyCommitSet("bug-fixing")
    return VulnWindow(
        intro_min=min(_dates(intro)),
        fix_max=max(_dates(fix)),
        intro_commits=intro,
        fix_commits=fix,
    )


def _commit_to_json(commit: CommitRef) -> dict:
    return {
        "hash": commit.hash,
        "committer_date": commit.committer_date and format_timestamp(commit.committer_date),
        "author_date": commit.author_date and format_timestamp(commit.author_date),
        "parents": list(commit.parent_hashes),
        "files": list(commit.touched_files),
        "message": commit.message,
    }


def _commit_from_json(data: Mapping) -> CommitRef:
    def ts(key):
        return parse_timestamp(data[key]) if data.get(key) else None

    return CommitRef(
        hash=str(data["hash"]).lower(),
        committer_date=ts("committer_date"),
        author_date=ts("author_date"),
        parent_hashes=tuple(data.get("parents", ())),
        touched_files=tuple(data.get("files", ())),
        message=data.get("message", ""),
    )


def window_to_json(window: VulnWindow) -> dict:
    order = lambda c: (c.committer_date, c.hash)  # noqa: E731
    return {
        "intro_min": format_timestamp(window.intro_min),
        "fix_max": format_timestamp(window.fix_max),
        "intro_commits": [_commit_to_json(c) for c in sorted(window.intro_commits, key=order)],
        "fix_commits": [_commit_to_json(c) for c in sorted(window.fix_commits, key=order)],
    }


def window_from_json(data: Mapping) -> VulnWindow:
    return VulnWindow(
        intro_min=parse_timestamp(data["intro_min"]),
        fix_max=parse_timestamp(data["fix_max"]),
        intro_commits=frozenset(_commit_from_json(c) for c in data.get("intro_commits", ())),
        fix_commits=frozenset(_commit_from_json(c) for c in data.get("fix_commits", ())),
    )


def save_window(window: VulnWindow, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(window_to_json(window), indent=2) + "\n", encoding="utf-8")


def load_window(path: str | os.PathLike) -> VulnWindow:
    return window_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Issue export
# ---------------------------------------------------------------------------

def _issue_commit(entry, repo: RepositoryHandle | None) -> CommitRef:
    if isinstance(entry, str):
        entry = {"hash": entry}
    if not isinstance(entry, Mapping) or not entry.get("hash"):
        raise MalformedIssueExport(f"bad commit entry: {entry!r}")
    if repo is not None:
        return get_commit(repo, str(entry["hash"]))
    try:
        return _commit_from_json(entry)
    except (ValueError, KeyError) as exc:
        raise MalformedIssueExport(f"bad commit entry {entry!r}: {exc}") from exc


def read_issues(
    source: str | os.PathLike, repo: RepositoryHandle | None = None
) -> list[IssueRecord]:
    """Load an issue-tracker export.

    The file is a JSON list (or ``{"issues": [...]}``) of objects with
    ``issue_id``, ``labels``, ``commits`` and ``text``. Commits may be bare
    hashes or objects with ``hash``/``message``/dates. With ``repo`` given,
    every hash is resolved against it so messages and dates are filled in.
    """
    text = Path(source).read_text(encoding="utf-8")
    try:
        data = json.loads(text) if text.strip() else []
    except json.JSONDecodeError as exc:
        raise MalformedIssueExport(f"{source}: {exc}") from exc
    if isinstance(data, Mapping):
        data = data.get("issues", [])
    if not isinstance(data, list):
        raise MalformedIssueExport(f"{source}: expected a list of issues")

    issues = []
    for n, row in enumerate(data):
        if not isinstance(row, Mapping) or row.get("issue_id") in (None, ""):
            raise MalformedIssueExport(f"{source}: issue #{n} has no issue_id")
        labels = row.get("labels", [])
        commits = row.get("commits", [])
        if not isinstance(labels, list) or not isinstance(commits, list):
            raise MalformedIssueExport(f"{source}: issue {row['issue_id']}: labels/commits must be lists")
        issues.append(
            IssueRecord(
                issue_id=str(row["issue_id"]),
                state_labels=frozenset(str(label).lower() for label in labels),
                linked_commits=tuple(_issue_commit(c, repo) for c in commits),
                title_and_body=str(row.get("text", "")),
            )
        )
    return issues
