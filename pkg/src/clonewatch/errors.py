"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class ClonewatchError(Exception):
    """Base class. ``code`` is a stable machine-readable tag."""

    code = "ERROR"


class MalformedManifest(ClonewatchError):
    code = "MALFORMED_MANIFEST"

    def __init__(self, line: int, reason: str):
        super().__init__(f"manifest line {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateProject(ClonewatchError):
    code = "DUPLICATE_PROJECT"

    def __init__(self, name: str):
        super().__init__(f"duplicate project name: {name!r}")
        self.name = name


class UnresolvedForkDate(ClonewatchError):
    code = "UNRESOLVED_FORK_DATE"

    def __init__(self, name: str):
        super().__init__(f"project {name!r} has no fork date")
        self.name = name


class SchemaViolation(ClonewatchError):
    code = "SCHEMA_VIOLATION"

    def __init__(self, field: str, reason: str = "missing or invalid"):
        super().__init__(f"{field}: {reason}")
        self.field = field


class BadCveId(ClonewatchError):
    code = "BAD_CVE_ID"


class BadPattern(ClonewatchError):
    code = "BAD_PATTERN"


class MalformedIssueExport(ClonewatchError):
    code = "MALFORMED_ISSUE_EXPORT"


class RepoUnreadable(ClonewatchError):
    code = "REPO_UNREADABLE"


class EmptyHistory(ClonewatchError):
    code = "EMPTY_HISTORY"


class CommitNotFound(ClonewatchError):
    code = "COMMIT_NOT_FOUND"


class EmptyCommitSet(ClonewatchError):
    code = "EMPTY_COMMIT_SET"

    def __init__(self, which: str):
        super().__init__(f"{which} commit set is empty")
        self.which = which


class InvertedWindow(ClonewatchError):
    code = "INVERTED_WINDOW"


class EmptyAfterNormalization(ClonewatchError):
    code = "EMPTY_AFTER_NORMALIZATION"

    def __init__(self, label: str, index: int):
        super().__init__(f"{label.lower()} fragment {index} is empty after normalization")
        self.label = label
        self.index = index


class EmptyTarget(ClonewatchError):
    code = "EMPTY_TARGET"
