"""Find forks that inherited a parent project's vulnerable code but not its fix.

Pipeline: parse the CVE descriptor, locate fixing and introducing commits in
the parent's history, keep only projects forked inside that window, then
search them for exact (Type I) clones of the annotated vulnerable and fix
snippets.
"""

__version__ = "0.1.0"

from .clonedetect import (
    CloneMatch,
    CloneRatioResult,
    NormalizationProfile,
    NormalizedFile,
    ProjectVerdict,
    Status,
    clone_ratio,
    find_clones,
    normalize_source,
    scan_project,
)
from .cve import CveDescriptor, IssueRecord, build_issue_query, extract_keywords, load_cve, parse_cve
from .history import (
    CommitRef,
    RepositoryHandle,
    VulnWindow,
    blame_previous_commits,
    compute_window,
    match_fix_commits,
    open_repository,
    read_issues,
)
from .registry import (
    ProjectRecord,
    ProjectSet,
    filter_by_language,
    filter_candidates,
    load_manifest,
    resolve_fork_date,
)
from .report import ScanReport, emit_json, emit_summary, emit_xml, parse_xml
from .testgen import DetectionTest, build_detection_test, load_test, save_test
