"""Command-line entry point.

Subcommands mirror the pipeline stages::

    clonewatch szz         --repo PARENT --issues ISSUES.json --cve CVE.json --out OUT
    clonewatch build-test  --cve CVE.json --annotations ANN.yaml [--repo PARENT] --test TEST.json
    clonewatch filter      --manifest MANIFEST.csv --out OUT [--window WINDOW.json]
    clonewatch scan        --manifest MANIFEST.csv --test TEST.json --out OUT [--jobs N]
    clonewatch ratio       TARGET REFERENCE [--min-block 6]

Exit codes: 0 success (no vulnerable project), 2 at least one VULNERABLE
verdict, 1 any operational or usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import __version__
from ._time import format_timestamp, utcnow
from .clonedetect import (
    DEFAULT_PROFILE,
    OPTIONAL_EXCLUDES,
    NormalizationProfile,
    ProjectVerdict,
    Status,
    clone_ratio,
    globs_for_language,
    scan_project,
)
from .cve import build_issue_query, load_cve, load_stopwords
from .errors import ClonewatchError, EmptyCommitSet
from .history import (
    VulnWindow,
    blame_previous_commits,
    compute_window,
    fix_commit_matches,
    load_window,
    open_repository,
    qualifying_issues,
    read_file_at,
    read_issues,
    save_window,
)
from .registry import ProjectRecord, ProjectSet, filter_by_language, load_manifest, resolve_fork_date
from .report import ScanReport, emit_json, emit_summary, emit_xml
from .testgen import DetectionTest, Origin, build_detection_test, load_test, save_test

log = logging.getLogger("clonewatch")

EXIT_OK, EXIT_ERROR, EXIT_VULNERABLE = 0, 1, 2


@dataclass
class ScanConfig:
    cve_descriptor_path: Path | None = None
    manifest_path: Path | None = None
    issue_export_path: Path | None = None
    parent_repo_path: Path | None = None
    detection_test_path: Path | None = None
    window_path: Path | None = None
    annotations_path: Path | None = None
    stopwords_path: Path | None = None
    output_dir: Path = Path("clonewatch-out")
    profile: NormalizationProfile = DEFAULT_PROFILE
    parallelism: int = 1
    language_filter: str | None = None
    min_block: int = 6
    query_keywords: int = 5
    file_globs: tuple[str, ...] | None = None
    exclude_dirs: tuple[str, ...] = ()

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def echo(self) -> dict[str, Any]:
        """Settings that influence results. Parallelism and output location are left out."""
        def p(path):
            return None if path is None else str(path)

        return {
            "cve": p(self.cve_descriptor_path),
            "manifest": p(self.manifest_path),
            "issues": p(self.issue_export_path),
            "repo": p(self.parent_repo_path),
            "test": p(self.detection_test_path),
            "language": self.language_filter,
            "min_block": self.min_block,
            "query_keywords": self.query_keywords,
            "file_globs": None if self.file_globs is None else list(self.file_globs),
            "exclude_dirs": list(self.exclude_dirs),
            "normalization": self.profile.to_json(),
        }


class StageFailure(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {_describe(cause)}")
        self.stage = stage
        self.cause = cause


def _describe(exc: BaseException) -> str:
    if isinstance(exc, FileNotFoundError):
        return f"FILE_NOT_FOUND: {exc.filename or exc}"
    if isinstance(exc, ClonewatchError):
        return f"{exc.code}: {exc}"
    if isinstance(exc, subprocess.CalledProcessError):
        return f"git failed: {(exc.stderr or '').strip()}"
    return f"{type(exc).__name__}: {exc}"


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageFailure:
        raise
    except (ClonewatchError, OSError, ValueError, KeyError, subprocess.CalledProcessError) as exc:
        raise StageFailure(name, exc) from exc


def _need(value: Path | None, flag: str) -> Path:
    if value is None:
        raise StageFailure("config", ValueError(f"{flag} is required"))
    return value


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def cmd_szz(config: ScanConfig) -> VulnWindow:
    """Fix commits from the issue export, introducers via blame, then the window."""
    with stage("open_repository"):
        repo = open_repository(_need(config.parent_repo_path, "--repo"))
    with stage("parse_cve"):
        stopwords = load_stopwords(config.stopwords_path)
        cve = load_cve(_need(config.cve_descriptor_path, "--cve"), stopwords)
    with stage("read_issues"):
        issues = read_issues(_need(config.issue_export_path, "--issues"), repo)
    pattern = build_issue_query(cve, config.query_keywords)
    with stage("match_fix_commits"):
        matches = fix_commit_matches(qualifying_issues(issues), pattern)
        if not matches:
            raise EmptyCommitSet("bug-fixing")
    for commit, targets in sorted(matches.items(), key=lambda kv: kv[0].hash):
        log.info("fix commit %s matched on %s", commit.short, "+".join(sorted(targets)))
    with stage("blame_previous_commits"):
        intro = set()
        for commit in matches:
            intro |= blame_previous_commits(commit, repo)
    with stage("compute_window"):
        window = compute_window(intro, matches)
    with stage("save_window"):
        config.output_dir.mkdir(parents=True, exist_ok=True)
        save_window(window, config.output_dir / "window.json")
    print(f"window {format_timestamp(window.intro_min)} .. {format_timestamp(window.fix_max)}")
    print("  fixing:      " + " ".join(sorted(c.short for c in window.fix_commits)))
    print("  introducing: " + " ".join(sorted(c.short for c in window.intro_commits)))
    return window


def _window_for(config: ScanConfig) -> VulnWindow:
    path = config.window_path
    if path is None and (config.output_dir / "window.json").exists():
        path = config.output_dir / "window.json"
    if path is not None:
        with stage("load_window"):
            return load_window(path)
    return cmd_szz(config)


def _project_root(config: ScanConfig, project: ProjectRecord) -> Path | None:
    loc = project.repo_location
    if "://" in loc or loc.startswith("git@"):
        return None
    root = Path(loc)
    if not root.is_absolute() and config.manifest_path is not None:
        root = config.manifest_path.parent / root
    return root


@dataclass
class Triage:
    corpus: ProjectSet
    candidates: list[ProjectRecord] = field(default_factory=list)
    rejected: dict[str, tuple[Status, str]] = field(default_factory=dict)


def _triage(config: ScanConfig, window: VulnWindow, language: str) -> Triage:
    with stage("load_manifest"):
        corpus = filter_by_language(load_manifest(_need(config.manifest_path, "--manifest")), language)
    result = Triage(corpus)
    for project in corpus:
        if project.fork_date is None:
            root = _project_root(config, project)
            if root is None:
                result.rejected[project.name] = (
                    Status.ERROR, "UNRESOLVED_FORK_DATE: repository not available locally")
                continue
            try:
                project = resolve_fork_date(project, open_repository(root))
            except (ClonewatchError, OSError, subprocess.CalledProcessError) as exc:
                result.rejected[project.name] = (
                    Status.ERROR, f"UNRESOLVED_FORK_DATE: {_describe(exc)}")
                continue
        when = format_timestamp(project.fork_date)
        if project.fork_date < window.intro_min:
            result.rejected[project.name] = (
                Status.FILTERED_OUT, f"forked {when}, before the flaw was introduced")
        elif project.fork_date > window.fix_max:
            result.rejected[project.name] = (
                Status.FILTERED_OUT, f"forked {when}, after the fix")
        else:
            result.candidates.append(project)
    return result


def _language(config: ScanConfig, test: DetectionTest | None = None) -> str:
    if config.language_filter:
        return config.language_filter
    if test is not None:
        return test.language
    if config.cve_descriptor_path is not None and config.cve_descriptor_path.exists():
        return load_cve(config.cve_descriptor_path).affected_language
    return "C++"


def cmd_filter(config: ScanConfig, window: VulnWindow | None = None) -> list[ProjectRecord]:
    """Language and fork-date filtering; writes ``candidates.json``."""
    window = window or _window_for(config)
    triage = _triage(config, window, _language(config))
    doc = {
        "window": {"intro_min": format_timestamp(window.intro_min),
                   "fix_max": format_timestamp(window.fix_max)},
        "corpus_size": len(triage.corpus),
        "candidates": [
            {
                "name": p.name,
                "repo": p.repo_location,
                "fork_date": format_timestamp(p.fork_date),
                "fork_date_source": p.fork_date_source.value,
                "reason": "fork date inside window",
            }
            for p in triage.candidates
        ],
        "rejected": [
            {"name": name, "status": status.value, "reason": reason}
            for name, (status, reason) in sorted(triage.rejected.items())
        ],
    }
    with stage("write_candidates"):
        config.output_dir.mkdir(parents=True, exist_ok=True)
        (config.output_dir / "candidates.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(f"{len(triage.candidates)} of {len(triage.corpus)} projects forked inside the window")
    for name, (status, reason) in sorted(triage.rejected.items()):
        if status is Status.ERROR:
            print(f"  {name}: {reason}")
    return triage.candidates


def _scan_one(job) -> ProjectVerdict:
    test, root, profile, globs, name, exclude = job
    return scan_project(test, root, profile, globs, name=name, exclude_dirs=exclude)


def cmd_scan(config: ScanConfig) -> tuple[ScanReport, int]:
    with stage("load_test"):
        test = load_test(_need(config.detection_test_path, "--test"))
    window = _window_for(config)
    triage = _triage(config, window, _language(config, test))
    with stage("file_globs"):
        globs = config.file_globs or globs_for_language(test.language)

    verdicts = [ProjectVerdict(name, status, diagnostic=reason)
                for name, (status, reason) in triage.rejected.items()]
    jobs = []
    for project in triage.candidates:
        root = _project_root(config, project)
        if root is None:
            verdicts.append(ProjectVerdict(project.name, Status.ERROR,
                                           diagnostic="repository not available locally"))
        else:
            jobs.append((test, root, config.profile, tuple(globs), project.name, config.exclude_dirs))
    if config.parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            verdicts += pool.map(_scan_one, jobs)
    else:
        verdicts += map(_scan_one, jobs)

    report = ScanReport(
        cve_id=test.cve_id,
        scan_timestamp=utcnow(),
        tool_version=__version__,
        corpus_size=len(triage.corpus),
        filtered_count=len(triage.candidates),
        verdicts=tuple(verdicts),
        settings={
            **config.echo(),
            "window": {"intro_min": format_timestamp(window.intro_min),
                       "fix_max": format_timestamp(window.fix_max)},
        },
    )
    with stage("write_report"):
        out = config.output_dir
        out.mkdir(parents=True, exist_ok=True)
        emit_xml(report, out / "report.xml")
        emit_json(report, out / "report.json")
        summary = emit_summary(report)
        (out / "summary.txt").write_text(summary, encoding="utf-8")
    print(summary, end="")
    vulnerable = any(v.status is Status.VULNERABLE for v in report.verdicts)
    return report, EXIT_VULNERABLE if vulnerable else EXIT_OK


def cmd_ratio(config: ScanConfig, target: Path, reference: Path, min_block: int | None = None):
    min_block = config.min_block if min_block is None else min_block
    with stage("clone_ratio"):
        globs = config.file_globs or globs_for_language(config.language_filter or "C++")
        result = clone_ratio(target, reference, config.profile, min_block, globs)
    print(f"{result.target} vs {result.reference}: {result.cloned_lines}/{result.total_lines} "
          f"= {result.ratio:.4f} (min_block={result.min_block})")
    return result


def _fragment(entry: dict, repo_path: Path | None) -> tuple[list[str], Origin]:
    origin = Origin(
        commit=str(entry.get("commit", "")),
        path=str(entry.get("path", "")),
        start_line=int(entry.get("start_line", 1)),
    )
    if "lines" in entry:
        lines = entry["lines"]
        if isinstance(lines, str):
            lines = lines.split("\n")
        return list(lines), origin
    if repo_path is None:
        raise ValueError("annotation refers to a commit but --repo was not given")
    text = read_file_at(open_repository(repo_path), origin.commit, origin.path)
    all_lines = text.split("\n")
    end = int(entry.get("end_line", len(all_lines)))
    return all_lines[origin.start_line - 1:end], origin


def cmd_build_test(config: ScanConfig) -> DetectionTest:
    """Package annotated fragments (YAML or JSON with ``vulnerable``/``fix`` lists)."""
    with stage("parse_cve"):
        cve = load_cve(_need(config.cve_descriptor_path, "--cve"))
    with stage("read_annotations"):
        ann = yaml.safe_load(_need(config.annotations_path, "--annotations").read_text("utf-8"))
        if not isinstance(ann, dict):
            raise ValueError("annotation file must be a mapping with 'vulnerable' and 'fix'")
        vuln = [_fragment(e, config.parent_repo_path) for e in ann.get("vulnerable", [])]
        fix = [_fragment(e, config.parent_repo_path) for e in ann.get("fix", [])]
    with stage("build_detection_test"):
        test = build_detection_test(cve, vuln, fix, config.profile,
                                    language=config.language_filter or cve.affected_language)
    path = config.detection_test_path or config.output_dir / "detection_test.json"
    with stage("save_test"):
        path.parent.mkdir(parents=True, exist_ok=True)
        save_test(test, path)
    print(f"wrote {path}: thresholds {list(test.thresholds)}")
    return test


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


_PATH_KEYS = {
    "cve": "cve_descriptor_path",
    "manifest": "manifest_path",
    "issues": "issue_export_path",
    "repo": "parent_repo_path",
    "test": "detection_test_path",
    "window": "window_path",
    "annotations": "annotations_path",
    "stopwords": "stopwords_path",
    "out": "output_dir",
}
_VALUE_KEYS = {
    "jobs": "parallelism",
    "language": "language_filter",
    "min_block": "min_block",
    "keywords": "query_keywords",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML file with defaults for any flag")
    common.add_argument("--manifest", type=Path, help="project manifest (name,repo,language,fork_date)")
    common.add_argument("--cve", type=Path, help="CVE descriptor JSON")
    common.add_argument("--issues", type=Path, help="issue-tracker export JSON")
    common.add_argument("--repo", type=Path, help="parent project git repository")
    common.add_argument("--test", type=Path, help="detection test JSON")
    common.add_argument("--window", type=Path, help="saved vulnerability window JSON")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--jobs", type=int, help="parallel scan workers")
    common.add_argument("--language", help="language tag, e.g. C++")
    common.add_argument("--min-block", dest="min_block", type=int, help="ratio mode block size")
    common.add_argument("--keywords", type=int, help="top keywords in the issue query")
    common.add_argument("--stopwords", type=Path, help="stopword file")
    common.add_argument("--glob", dest="globs", action="append", help="source file glob (repeatable)")
    common.add_argument("--exclude-tests-docs", action="store_true",
                        help="skip test/ and doc/ directories")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="clonewatch", description="Find forks that inherited vulnerable code but not its fix.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("szz", parents=[common], help="find fixing/introducing commits and the window")
    sub.add_parser("filter", parents=[common], help="filter the manifest by language and fork date")
    sub.add_parser("scan", parents=[common], help="scan candidate projects for the vulnerable code")
    build = sub.add_parser("build-test", parents=[common], help="package annotated fragments")
    build.add_argument("--annotations", type=Path, help="YAML/JSON with vulnerable and fix fragments")
    ratio = sub.add_parser("ratio", parents=[common], help="clone ratio of TARGET against REFERENCE")
    ratio.add_argument("target", type=Path)
    ratio.add_argument("reference", type=Path)
    return parser


def load_config(args: argparse.Namespace) -> ScanConfig:
    values: dict[str, Any] = {}
    profile = DEFAULT_PROFILE.to_json()
    globs = excludes = None

    if args.config is not None:
        data = yaml.safe_load(args.config.read_text(encoding="utf-8")) or {}
        base = args.config.parent
        for key, value in data.items():
            key = key.replace("-", "_")
            if key in _PATH_KEYS:
                values[_PATH_KEYS[key]] = base / value
            elif key in _VALUE_KEYS:
                values[_VALUE_KEYS[key]] = value
            elif key == "normalization":
                profile.update(value)
            elif key == "globs":
                globs = tuple(value)
            elif key == "exclude_dirs":
                excludes = tuple(value)
            else:
                raise ValueError(f"{args.config}: unknown setting {key!r}")

    for key, attr in {**_PATH_KEYS, **_VALUE_KEYS}.items():
        value = getattr(args, key, None)
        if value is not None:
            values[attr] = value
    if args.globs:
        globs = tuple(args.globs)
    if args.exclude_tests_docs:
        excludes = OPTIONAL_EXCLUDES
    return ScanConfig(
        **values,
        profile=NormalizationProfile.from_json(profile),
        file_globs=globs,
        exclude_dirs=excludes or (),
    )


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        with stage("config"):
            config = load_config(args)
        if args.command == "szz":
            cmd_szz(config)
        elif args.command == "filter":
            cmd_filter(config)
        elif args.command == "scan":
            return cmd_scan(config)[1]
        elif args.command == "build-test":
            cmd_build_test(config)
        elif args.command == "ratio":
            cmd_ratio(config, args.target, args.reference)
    except StageFailure as exc:
        print(f"clonewatch {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
