import unicodedata

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desknmt.corpus import (
    Bitext,
    Origin,
    SentencePair,
    Side,
    clean_bitext,
    clean_line,
    dedup_pairs,
    load_bitext,
    manifest_path,
    read_lines,
    save_bitext,
    write_lines,
)
from desknmt.errors import AlignmentError, DataError


def bt(*pairs, origin=Origin.ORIGINAL):
    return Bitext(tuple(SentencePair(s, t, origin) for s, t in pairs), "t")


def category_oracle(line, lower):
    # independent restatement of the noise rules, character by character
    keep = []
    for ch in unicodedata.normalize("NFC", line):
        cat = unicodedata.category(ch)
        if ch.isspace():
            keep.append(" ")
        elif cat[0] in "PS" or cat == "Cc":
            continue
        else:
            keep.append(ch)
    out = " ".join("".join(keep).split())
    return unicodedata.normalize("NFC", out.lower()) if lower else out


class TestCleanLine:
    def test_target_example(self):
        assert clean_line("Hello,  World!", Side.TARGET) == "hello world"

    def test_whitespace_only(self):
        assert clean_line("  ", Side.SOURCE) == ""

    def test_danda_removed_letters_and_digits_kept(self):
        line = "राम ने २ सेब खाए। 3 बार"
        out = clean_line(line, Side.SOURCE)
        assert out == "राम ने २ सेब खाए 3 बार"
        assert "।" not in out
        assert out == category_oracle(line, lower=False)

    def test_source_is_not_lowercased(self):
        assert clean_line("ABC", Side.SOURCE) == "ABC"

    def test_devanagari_combining_marks_survive(self):
        word = "किताब"
        assert clean_line(word, Side.SOURCE) == word

    @given(st.text(max_size=40))
    @settings(max_examples=300, deadline=None)
    def test_idempotent(self, s):
        for side in Side:
            once = clean_line(s, side)
            assert clean_line(once, side) == once

    @given(st.text(alphabet=st.characters(codec="utf-8", exclude_categories=("Cs",)), max_size=30))
    @settings(max_examples=200, deadline=None)
    def test_matches_category_oracle_on_source(self, s):
        once = category_oracle(s, lower=False)
        if category_oracle(once, lower=False) == once:
            assert clean_line(s, Side.SOURCE) == once


class TestBitextOps:
    def test_clean_bitext_drops_empty_side(self):
        out = clean_bitext(bt(("a.", "b!"), ("", "x")))
        assert [p.key() for p in out] == [("a", "b")]

    def test_clean_bitext_empty(self):
        assert len(clean_bitext(bt())) == 0

    def test_clean_bitext_six_pair_fixture(self):
        fixture = bt(
            ("राम।", "Ram."),
            ("...", "dots"),
            ("सीता", "Sita!"),
            ("घर", "?!"),
            ("दूध", "Milk"),
            ("पानी", "Water,"),
        )
        out = clean_bitext(fixture)
        assert [p.key() for p in out] == [("राम", "ram"), ("सीता", "sita"), ("दूध", "milk"), ("पानी", "water")]

    def test_dedup_examples(self):
        assert [p.key() for p in dedup_pairs(bt(("s1", "t1"), ("s1", "t1"), ("s2", "t2")))] == [("s1", "t1"), ("s2", "t2")]
        assert len(dedup_pairs(bt(("s", "a"), ("s", "b")))) == 2

    def test_dedup_ten_pair_fixture(self):
        pairs = [("a", "1"), ("b", "2"), ("a", "1"), ("c", "3"), ("b", "2"),
                 ("d", "4"), ("e", "5"), ("a", "1"), ("f", "6"), ("g", "7")]
        out = dedup_pairs(bt(*pairs))
        assert len(out) == 7
        assert [p.source for p in out] == list("abcdefg")

    @given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from("xyz")), max_size=30))
    def test_dedup_properties(self, pairs):
        b = bt(*pairs)
        once = dedup_pairs(b)
        assert dedup_pairs(once) == once
        assert len(once) <= len(b)
        assert len({p.key() for p in once}) == len(once)

    @given(st.lists(st.tuples(st.text(max_size=8), st.text(max_size=8)), max_size=20))
    @settings(deadline=None)
    def test_clean_bitext_never_empty_side(self, pairs):
        for p in clean_bitext(bt(*pairs)):
            assert p.source and p.target

    def test_slicing_and_swap(self):
        b = bt(("a", "x"), ("b", "y"), ("c", "z"))
        assert isinstance(b[:2], Bitext) and len(b[:2]) == 2
        assert b.swapped()[0].key() == ("x", "a")
        assert b.side(Side.TARGET) == ["x", "y", "z"]


class TestFiles:
    def test_round_trip_with_origin(self, tmp_path):
        b = Bitext(
            (SentencePair("राम", "ram"), SentencePair("सीता", "sita", Origin.SYNTHETIC),
             SentencePair("a", "b"), SentencePair("c", "d"), SentencePair("é", "ü")),
            "x",
        )
        s, t = tmp_path / "x.hi", tmp_path / "x.en"
        save_bitext(b, s, t)
        back = load_bitext(s, t, "x")
        assert back == b
        assert [p.origin for p in back][1] is Origin.SYNTHETIC
        assert read_lines(manifest_path(s)) == ["original", "synthetic", "original", "original", "original"]
        assert s.read_bytes() == "राम\nसीता\na\nc\né\n".encode("utf-8")

    def test_empty_bitext_files(self, tmp_path):
        s, t = tmp_path / "e.src", tmp_path / "e.tgt"
        save_bitext(bt(), s, t)
        assert s.read_bytes() == b"" and t.read_bytes() == b""
        assert len(load_bitext(s, t)) == 0

    def test_misaligned_counts_named(self, tmp_path):
        s, t = tmp_path / "a", tmp_path / "b"
        write_lines(s, ["1", "2", "3"])
        write_lines(t, ["1", "2", "3", "4"])
        with pytest.raises(AlignmentError, match="3.*4"):
            load_bitext(s, t)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_bitext(tmp_path / "nope", tmp_path / "nope2")

    def test_embedded_newline_rejected(self, tmp_path):
        with pytest.raises(DataError):
            write_lines(tmp_path / "x", ["a\nb"])

    def test_load_normalises_to_nfc(self, tmp_path):
        p = tmp_path / "n"
        p.write_bytes("é\n".encode())
        assert read_lines(p) == ["é"]

    @given(st.lists(st.tuples(st.text(min_size=1, max_size=10).filter(lambda s: "\n" not in s and "\r" not in s),
                              st.text(min_size=1, max_size=10).filter(lambda s: "\n" not in s and "\r" not in s)),
                    max_size=10))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, tmp_path_factory, pairs):
        pairs = [(unicodedata.normalize("NFC", s), unicodedata.normalize("NFC", t)) for s, t in pairs]
        pairs = [(s, t) for s, t in pairs if not s.startswith("\ufeff")]
        d = tmp_path_factory.mktemp("rt")
        b = bt(*pairs)
        save_bitext(b, d / "s", d / "t")
        assert load_bitext(d / "s", d / "t", "t") == b
