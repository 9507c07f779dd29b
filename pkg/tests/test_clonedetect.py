import os
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clonewatch.clonedetect import (
    CloneMatch,
    NormalizationProfile,
    NormalizedFile,
    ProjectVerdict,
    Status,
    clone_ratio,
    find_clones,
    find_positions,
    iter_source_files,
    normalize_source,
    read_source,
    scan_project,
)
from clonewatch.errors import EmptyTarget
from clonewatch.testgen import build_detection_test
from oracles import covered_lines, sliding_matches, write_lines


def nf(lines, path="f.cpp"):
    return NormalizedFile(path, tuple(lines), tuple(range(1, len(lines) + 1)))


# -- normalization ----------------------------------------------------------

def test_normalize_hand_example():
    out = normalize_source(["  int x = 1; // init", "", "/* c */ int y;"])
    assert out.lines == ("int x = 1;", "int y;")
    assert out.line_map == (1, 3)


def test_normalize_all_comments():
    out = normalize_source(["// a", "/* b", " * c", " */", "   "])
    assert out.lines == ()


def test_normalize_fixpoint_on_clean_input():
    lines = ["int a;", "a = 1;", "return a;"]
    out = normalize_source(lines)
    assert out.lines == tuple(lines)
    assert out.line_map == (1, 2, 3)


def test_block_comment_spanning_lines_keeps_outer_text():
    out = normalize_source(["a = 1; /* start", "middle", "end */ b = 2;"])
    assert out.lines == ("a = 1;", "b = 2;")
    assert out.line_map == (1, 3)


def test_comment_markers_inside_strings_are_code():
    out = normalize_source(['url = "http://x/*y*/"; // real comment', "c = '\"'; // q"])
    assert out.lines == ('url = "http://x/*y*/";', "c = '\"';")


def test_digit_separator_is_not_a_char_literal():
    assert normalize_source(["n = 1'000; // k"]).lines == ("n = 1'000;",)


def test_unterminated_block_comment_runs_to_eof(caplog):
    out = normalize_source(["a;", "/* never closed", "b;"])
    assert out.lines == ("a;",)
    assert "unterminated" in caplog.text


def test_whitespace_options():
    raw = ["x  =\t1;", "", "y = 2;"]
    keep = NormalizationProfile(collapse_internal_whitespace=False, drop_blank_lines=False)
    assert normalize_source(raw, keep).lines == ("x  =\t1;", "", "y = 2;")
    assert normalize_source(raw).lines == ("x = 1;", "y = 2;")


def test_custom_markers():
    profile = NormalizationProfile(line_comment_markers=("#",), block_comment_delims=(('"""', '"""'),),
                                   string_delims=())
    out = normalize_source(['x = 1  # note', '"""doc', 'more"""', "y = 2"], profile)
    assert out.lines == ("x = 1", "y = 2")


source_text = st.lists(
    st.text(alphabet=st.sampled_from(list("ab /*'\"\\\t1;")), max_size=25), max_size=12
)


@given(source_text)
def test_normalization_is_idempotent(lines):
    once = normalize_source(lines)
    twice = normalize_source(once.lines)
    assert twice.lines == once.lines


@given(source_text)
def test_line_map_is_strictly_increasing(lines):
    out = normalize_source(lines)
    assert len(out.lines) == len(out.line_map)
    assert all(a < b for a, b in zip(out.line_map, out.line_map[1:]))


def test_read_source_skips_binary_and_replaces_bad_utf8(tmp_path, caplog):
    (tmp_path / "bin.cpp").write_bytes(b"\x00\x01\x02")
    (tmp_path / "bad.cpp").write_bytes(b"int a; \xff\n")
    assert read_source(tmp_path / "bin.cpp") is None
    assert read_source(tmp_path / "bad.cpp")[0] == "int a; �"
    assert "invalid UTF-8" in caplog.text


# -- matching ---------------------------------------------------------------

def test_self_match_spans_file():
    hay = nf(["a", "b", "c"])
    assert find_clones(list(hay.lines), hay, 3) == [CloneMatch("f.cpp", 1, 3, 3, 0)]


def test_overlapping_occurrences_reported():
    # brute force by hand: "a b a" starts at normalized positions 1 and 3 of "a b a b a"
    hay = nf(["a", "b", "a", "b", "a"])
    assert [m.start_line for m in find_clones(["a", "b", "a"], hay, 3)] == [1, 3]


def test_absent_needle():
    assert find_clones(["zzz"], nf(["a", "b"]), 1) == []


def test_threshold_must_equal_length():
    with pytest.raises(ValueError):
        find_clones(["a", "b"], nf(["a", "b"]), 1)


def test_matches_report_original_line_numbers():
    hay = normalize_source(["x;", "// gap", "", "y;", "z;"], path="s.cpp")
    assert find_clones(["x;", "y;"], hay, 2) == [CloneMatch("s.cpp", 1, 4, 2, 0)]


@settings(max_examples=300)
@given(
    needle=st.lists(st.sampled_from("abc"), min_size=1, max_size=5),
    hay=st.lists(st.sampled_from("abc"), max_size=60),
)
def test_kmp_equals_sliding_oracle(needle, hay):
    assert find_positions(needle, hay) == sliding_matches(needle, hay)


# -- scanning ---------------------------------------------------------------

VULN = ["if (flag) {", "check(x);", "}"]
FIX = ["check(x);"]


def _test():
    return build_detection_test("CVE-2020-0001", [(VULN, None)], [(["always_check(x);"], None)],
                                language="C++")


def test_scan_vulnerable_then_fixed(tmp_path):
    write_lines(tmp_path / "p", {"src/a.cpp": ["int q;", "  if (flag) {  // hmm", "check(x);", "}"]})
    verdict = scan_project(_test(), tmp_path / "p")
    assert verdict.status is Status.VULNERABLE
    assert verdict.vuln_matches == (CloneMatch("src/a.cpp", 2, 4, 3, 0),)

    # verdict soundness: the reported region reproduces the match
    m = verdict.vuln_matches[0]
    raw = (tmp_path / "p" / m.source_file).read_text().splitlines()
    region = normalize_source(raw[m.start_line - 1:m.end_line])
    assert list(region.lines) == VULN

    write_lines(tmp_path / "p", {"src/a.cpp": ["int q;", "always_check(x);"]})
    assert scan_project(_test(), tmp_path / "p").status is Status.FIXED


def test_scan_fixed_wins_when_both_present(tmp_path):
    write_lines(tmp_path / "p", {"a.h": VULN + ["always_check(x);"]})
    verdict = scan_project(_test(), tmp_path / "p")
    assert verdict.status is Status.FIXED
    assert verdict.vuln_matches and verdict.fix_matches


def test_scan_unrelated_and_globs(tmp_path):
    write_lines(tmp_path / "p", {"a.cpp": ["return 0;"], "notes.txt": VULN})
    assert scan_project(_test(), tmp_path / "p").status is Status.NOT_AFFECTED
    assert scan_project(_test(), tmp_path / "p", file_globs=["*.txt"]).status is Status.VULNERABLE


def test_scan_excluded_dirs_opt_in(tmp_path):
    write_lines(tmp_path / "p", {"test/a.cpp": VULN})
    assert scan_project(_test(), tmp_path / "p").status is Status.VULNERABLE
    assert scan_project(_test(), tmp_path / "p", exclude_dirs=["test"]).status is Status.NOT_AFFECTED


def test_scan_missing_tree_is_error_verdict(tmp_path):
    verdict = scan_project(_test(), tmp_path / "nope", name="ghost")
    assert verdict.status is Status.ERROR and verdict.project == "ghost"
    assert "unreadable" in verdict.diagnostic


def test_iter_source_files_sorted_and_skips_git(tmp_path):
    write_lines(tmp_path, {"b.cpp": ["x"], "a/z.h": ["y"], ".git/c.cpp": ["z"]})
    assert iter_source_files(tmp_path, ["*.cpp", "*.h"]) == ["a/z.h", "b.cpp"]


def test_verdict_invariants():
    m = CloneMatch("f", 1, 1, 1)
    with pytest.raises(ValueError):
        ProjectVerdict("p", Status.VULNERABLE)
    with pytest.raises(ValueError):
        ProjectVerdict("p", Status.VULNERABLE, (m,), (m,))
    with pytest.raises(ValueError):
        ProjectVerdict("p", Status.FIXED)
    with pytest.raises(ValueError):
        ProjectVerdict("p", Status.NOT_AFFECTED, (m,))


# -- clone ratio ------------------------------------------------------------

def test_ratio_hand_fixture(tmp_path):
    shared = [f"s{i};" for i in range(6)]
    target = {"t.cpp": shared + ["u1;", "u2;", "u3;", "u4;"]}
    reference = {"r.cpp": ["z;"] + shared + ["y;"]}
    write_lines(tmp_path / "t", target)
    write_lines(tmp_path / "r", reference)
    oracle = covered_lines(list(target.values()), list(reference.values()), 4)
    assert oracle == 6
    result = clone_ratio(tmp_path / "t", tmp_path / "r", min_block=4)
    assert (result.cloned_lines, result.total_lines) == (6, 10)
    assert result.ratio == 0.6


def test_ratio_self_and_disjoint(tmp_path):
    write_lines(tmp_path / "a", {"x.cpp": ["a;", "b;"], "y.cpp": [f"l{i};" for i in range(9)]})
    write_lines(tmp_path / "b", {"x.cpp": ["c;", "d;"]})
    assert clone_ratio(tmp_path / "a", tmp_path / "a").ratio == 1.0
    assert clone_ratio(tmp_path / "a", tmp_path / "b").ratio == 0.0


def test_ratio_rejects_bad_inputs(tmp_path):
    write_lines(tmp_path / "a", {"x.cpp": ["// only a comment"]})
    with pytest.raises(EmptyTarget):
        clone_ratio(tmp_path / "a", tmp_path / "a")
    with pytest.raises(ValueError):
        clone_ratio(tmp_path / "a", tmp_path / "a", min_block=1)


def _random_tree(rng, n_files, alphabet):
    return {f"f{i}.cpp": [rng.choice(alphabet) for _ in range(rng.randint(1, 40))]
            for i in range(n_files)}


def test_ratio_matches_oracle_and_is_monotone(tmp_path):
    rng = random.Random(7)
    for trial in range(15):
        target = _random_tree(rng, rng.randint(1, 3), ["a;", "b;", "c;"])
        reference = _random_tree(rng, rng.randint(1, 3), ["a;", "b;", "c;"])
        t = write_lines(tmp_path / f"t{trial}", target)
        r = write_lines(tmp_path / f"r{trial}", reference)
        ks = []
        for block in (2, 3, 5, 8):
            got = clone_ratio(t, r, min_block=block).cloned_lines
            assert got == covered_lines(list(target.values()), list(reference.values()), block)
            ks.append(got)
        assert ks == sorted(ks, reverse=True)
