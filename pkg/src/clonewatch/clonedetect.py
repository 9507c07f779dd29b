"""Type I clone detection over whole normalized lines.

Source text is normalized (comments and indentation removed, whitespace
collapsed, blank lines dropped) and clones are contiguous runs of equal
normalized lines.
"""

from __future__ import annotations

import enum
import fnmatch
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from .errors import EmptyTarget

if TYPE_CHECKING:
    from .testgen import DetectionTest

log = logging.getLogger(__name__)

WS_RE = re.compile(r"\s+")

LANGUAGE_GLOBS = {
    "c++": ("*.cpp", "*.h", "*.hpp", "*.cc", "*.cxx"),
    "c": ("*.c", "*.h"),
    "go": ("*.go",),
    "java": ("*.java",),
    "javascript": ("*.js",),
    "rust": ("*.rs",),
}
OPTIONAL_EXCLUDES = ("test", "tests", "doc", "docs")


@dataclass(frozen=True)
class NormalizationProfile:
    line_comment_markers: tuple[str, ...] = ("//",)
    block_comment_delims: tuple[tuple[str, str], ...] = (("/*", "*/"),)
    string_delims: tuple[str, ...] = ('"', "'")
    collapse_internal_whitespace: bool = True
    drop_blank_lines: bool = True

    def __post_init__(self):
        if any(not m for m in self.line_comment_markers):
            raise ValueError("empty line-comment marker")
        if any(not o or not c for o, c in self.block_comment_delims):
            raise ValueError("empty block-comment delimiter")

    def to_json(self) -> dict:
        return {
            "line_comment_markers": list(self.line_comment_markers),
            "block_comment_delims": [list(pair) for pair in self.block_comment_delims],
            "string_delims": list(self.string_delims),
            "collapse_internal_whitespace": self.collapse_internal_whitespace,
            "drop_blank_lines": self.drop_blank_lines,
        }

    @classmethod
    def from_json(cls, data: dict) -> NormalizationProfile:
        kwargs = dict(data)
        if "line_comment_markers" in kwargs:
            kwargs["line_comment_markers"] = tuple(kwargs["line_comment_markers"])
        if "block_comment_delims" in kwargs:
            kwargs["block_comment_delims"] = tuple(tuple(p) for p in kwargs["block_comment_delims"])
        if "string_delims" in kwargs:
            kwargs["string_delims"] = tuple(kwargs["string_delims"])
        return cls(**kwargs)


DEFAULT_PROFILE = NormalizationProfile()


@dataclass(frozen=True)
class NormalizedFile:
    path: str
    lines: tuple[str, ...]
    line_map: tuple[int, ...]

    def __post_init__(self):
        if len(self.lines) != len(self.line_map):
            raise ValueError("lines and line_map differ in length")

    def __len__(self) -> int:
        return len(self.lines)


@dataclass(frozen=True)
class CloneMatch:
    source_file: str
    start_line: int
    end_line: int
    line_count: int
    snippet_index: int = 0


class Status(str, enum.Enum):
    VULNERABLE = "VULNERABLE"
    FIXED = "FIXED"
    NOT_AFFECTED = "NOT_AFFECTED"
    FILTERED_OUT = "FILTERED_OUT"
    ERROR = "ERROR"


@dataclass(frozen=True)
class ProjectVerdict:
    project: str
    status: Status
    vuln_matches: tuple[CloneMatch, ...] = ()
    fix_matches: tuple[CloneMatch, ...] = ()
    elapsed: float = 0.0
    diagnostic: str = ""

    def __post_init__(self):
        if self.status is Status.VULNERABLE and (not self.vuln_matches or self.fix_matches):
            raise ValueError("VULNERABLE needs vulnerable matches and no fix matches")
        if self.status is Status.FIXED and not self.fix_matches:
            raise ValueError("FIXED needs fix matches")
        if self.status is Status.NOT_AFFECTED and self.vuln_matches:
            raise ValueError("NOT_AFFECTED cannot carry vulnerable matches")


@dataclass(frozen=True)
class CloneRatioResult:
    target: str
    reference: str
    cloned_lines: int
    total_lines: int
    min_block: int = field(default=6)

    @property
    def ratio(self) -> float:
        return self.cloned_lines / self.total_lines


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def _strip_comments(lines: Sequence[str], profile: NormalizationProfile) -> list[str]:
    """Remove comments line by line; block comments may span lines.

    A removed comment becomes a single space so neighbouring text is not fused.
    Comment markers inside string literals are ignored; strings end at end of line.
    """
    out = []
    closing: str | None = None  # closing delimiter of an open block comment
    for line in lines:
        buf = []
        i, n = 0, len(line)
        while i < n:
            if closing is not None:
                j = line.find(closing, i)
                if j < 0:
                    i = n
                    break
                i = j + len(closing)
                closing = None
                buf.append(" ")
                continue
            ch = line[i]
            if ch in profile.string_delims and not (ch == "'" and i and line[i - 1].isalnum()):
                j = i + 1
                while j < n and line[j] != ch:
                    j += 2 if line[j] == "\\" else 1
                j = min(j + 1, n)
                buf.append(line[i:j])
                i = j
                continue
            if any(line.startswith(m, i) for m in profile.line_comment_markers):
                break
            for opener, closer in profile.block_comment_delims:
                if line.startswith(opener, i):
                    closing = closer
                    i += len(opener)
                    break
            else:
                buf.append(ch)
                i += 1
        out.append("".join(buf))
    if closing is not None:
        log.warning("unterminated block comment; treated as running to end of file")
    return out


def normalize_source(
    raw_lines: Iterable[str],
    profile: NormalizationProfile = DEFAULT_PROFILE,
    path: str = "",
) -> NormalizedFile:
    raw = [line.rstrip("\r\n") for line in raw_lines]
    lines, line_map = [], []
    for lineno, text in enumerate(_strip_comments(raw, profile), start=1):
        text = text.strip()
        if profile.collapse_internal_whitespace:
            text = WS_RE.sub(" ", text)
        if not text and profile.drop_blank_lines:
            continue
        lines.append(text)
        line_map.append(lineno)
    return NormalizedFile(path=path, lines=tuple(lines), line_map=tuple(line_map))


def read_source(path: str | os.PathLike) -> list[str] | None:
    """Decode a file as UTF-8 lines; ``None`` for binary or unreadable files."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        log.warning("%s: unreadable (%s); skipped", path, exc)
        return None
    if b"\x00" in data[:8192]:
        log.warning("%s: binary file; skipped", path)
        return None
    text = data.decode("utf-8", errors="replace")
    if "�" in text and b"\xef\xbf\xbd" not in data:
        log.warning("%s: invalid UTF-8 bytes replaced", path)
    return text.split("\n")


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

def _failure_table(needle: Sequence[str]) -> list[int]:
    table = [0] * len(needle)
    k = 0
    for i in range(1, len(needle)):
        while k and needle[i] != needle[k]:
            k = table[k - 1]
        if needle[i] == needle[k]:
            k += 1
        table[i] = k
    return table


def find_positions(needle: Sequence[str], haystack: Sequence[str]) -> list[int]:
    """0-based start indices of every (possibly overlapping) occurrence, via KMP."""
    m = len(needle)
    if m == 0:
        raise ValueError("needle must be non-empty")
    table = _failure_table(needle)
    hits, k = [], 0
    for i, line in enumerate(haystack):
        while k and line != needle[k]:
            k = table[k - 1]
        if line == needle[k]:
            k += 1
            if k == m:
                hits.append(i - m + 1)
                k = table[k - 1]
    return hits


def find_clones(
    needle: Sequence[str],
    haystack: NormalizedFile,
    threshold: int | None = None,
    snippet_index: int = 0,
) -> list[CloneMatch]:
    """Every place the full needle occurs in ``haystack``.

    ``threshold`` must equal ``len(needle)``: only complete snippets count.
    """
    if threshold is not None and threshold != len(needle):
        raise ValueError(f"threshold {threshold} != needle length {len(needle)}")
    m = len(needle)
    return [
        CloneMatch(
            source_file=haystack.path,
            start_line=haystack.line_map[pos],
            end_line=haystack.line_map[pos + m - 1],
            line_count=m,
            snippet_index=snippet_index,
        )
        for pos in find_positions(needle, haystack.lines)
    ]


# ---------------------------------------------------------------------------
# Tree walking
# ---------------------------------------------------------------------------

def globs_for_language(language: str) -> tuple[str, ...]:
    try:
        return LANGUAGE_GLOBS[language.casefold()]
    except KeyError:
        raise ValueError(f"no default file globs for language {language!r}") from None


def iter_source_files(
    root: str | os.PathLike,
    file_globs: Sequence[str],
    exclude_dirs: Iterable[str] = (),
) -> list[str]:
    """Repository-relative POSIX paths of matching files, sorted."""
    root = Path(root)
    skip = {".git", ".hg", ".svn", *exclude_dirs}
    found = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = [d for d in dirnames if d not in skip]
        for name in filenames:
            rel = (Path(dirpath) / name).relative_to(root).as_posix()
            if any(fnmatch.fnmatch(name, g) or fnmatch.fnmatch(rel, g) for g in file_globs):
                found.append(rel)
    return sorted(found)


def normalize_tree(
    root: str | os.PathLike,
    profile: NormalizationProfile = DEFAULT_PROFILE,
    file_globs: Sequence[str] = LANGUAGE_GLOBS["c++"],
    exclude_dirs: Iterable[str] = (),
) -> list[NormalizedFile]:
    root = Path(root)
    files = []
    for rel in iter_source_files(root, file_globs, exclude_dirs):
        raw = read_source(root / rel)
        if raw is not None:
            files.append(normalize_source(raw, profile, path=rel))
    return files


def scan_project(
    test: DetectionTest,
    project_root: str | os.PathLike,
    profile: NormalizationProfile | None = None,
    file_globs: Sequence[str] | None = None,
    name: str | None = None,
    exclude_dirs: Iterable[str] = (),
) -> ProjectVerdict:
    """Look for every vulnerable and fix snippet of ``test`` in one project tree."""
    started = time.perf_counter()
    project_root = Path(project_root)
    name = name or project_root.name
    profile = profile or test.profile
    if file_globs is None:
        file_globs = globs_for_language(test.language)
    if not project_root.is_dir() or not os.access(project_root, os.R_OK | os.X_OK):
        return ProjectVerdict(
            name, Status.ERROR, elapsed=time.perf_counter() - started,
            diagnostic=f"unreadable project tree: {project_root}",
        )

    vuln, fix = [], []
    for nfile in normalize_tree(project_root, profile, file_globs, exclude_dirs):
        for idx, snippet in enumerate(test.vulnerable_snippets):
            vuln += find_clones(snippet.normalized, nfile, len(snippet.normalized), idx)
        for idx, snippet in enumerate(test.fix_snippets):
            fix += find_clones(snippet.normalized, nfile, len(snippet.normalized), idx)

    if fix:
        status = Status.FIXED
    elif vuln:
        status = Status.VULNERABLE
    else:
        status = Status.NOT_AFFECTED
    return ProjectVerdict(
        name, status, tuple(vuln), tuple(fix), elapsed=time.perf_counter() - started
    )


# ---------------------------------------------------------------------------
# Clone ratio
# ---------------------------------------------------------------------------

def clone_ratio(
    target_root: str | os.PathLike,
    reference_root: str | os.PathLike,
    profile: NormalizationProfile = DEFAULT_PROFILE,
    min_block: int = 6,
    file_globs: Sequence[str] = LANGUAGE_GLOBS["c++"],
) -> CloneRatioResult:
    """Share of the target's normalized lines that also appear in the reference.

    A target line counts as cloned when it lies inside a run of at least
    ``min_block`` consecutive lines found verbatim in some reference file,
    or when its whole file is identical to a whole reference file. Blocks
    never cross file boundaries.
    """
    if min_block < 2:
        raise ValueError("min_block must be at least 2")
    target = normalize_tree(target_root, profile, file_globs)
    reference = normalize_tree(reference_root, profile, file_globs)
    total = sum(len(f) for f in target)
    if total == 0:
        raise EmptyTarget(f"{target_root}: no normalized source lines")

    intern: dict[str, int] = {}
    ids = lambda f: [intern.setdefault(line, len(intern)) for line in f.lines]  # noqa: E731
    windows: set[tuple[int, ...]] = set()
    whole_files: set[tuple[int, ...]] = set()
    for f in reference:
        seq = ids(f)
        whole_files.add(tuple(seq))
        windows.update(tuple(seq[i:i + min_block]) for i in range(len(seq) - min_block + 1))

    cloned = 0
    for f in target:
        seq = ids(f)
        if tuple(seq) in whole_files:
            cloned += len(seq)
            continue
        covered = [False] * len(seq)
        for i in range(len(seq) - min_block + 1):
            if tuple(seq[i:i + min_block]) in windows:
                covered[i:i + min_block] = [True] * min_block
        cloned += sum(covered)
    return CloneRatioResult(
        target=str(target_root), reference=str(reference_root),
        cloned_lines=cloned, total_lines=total, min_block=min_block,
    )
