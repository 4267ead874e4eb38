import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desknmt import _kernels
from desknmt.errors import DataError
from desknmt.tokenizer import (
    BOS,
    EOS,
    MERGES_HEADER,
    PAD,
    UNK,
    MergeTable,
    SideTokenizer,
    WordVocab,
    apply_bpe,
    build_side_tokenizer,
    build_subword_vocab,
    build_word_vocab,
    decode_bpe,
    learn_bpe,
    tokenize_subwords,
    tokenize_words,
    word_frequencies,
)

from oracles import brute_learn_bpe, random_corpus, sequential_apply

FIXTURE = {"low": 5, "lowest": 2}
words_st = st.text(alphabet="abcdé", min_size=1, max_size=6)
line_st = st.lists(words_st, max_size=8).map(" ".join)


class TestWordVocab:
    def test_frequency_cut(self):
        v = build_word_vocab(["a a a b b c"], 2)
        assert v.non_special == ["a", "b"]
        assert v.id_to_token[:4] == ["<pad>", "<unk>", "<s>", "</s>"]
        assert (PAD, UNK, BOS, EOS) == (0, 1, 2, 3)

    def test_large_max_size_keeps_all(self):
        assert set(build_word_vocab(["x y z x"], 100).non_special) == {"x", "y", "z"}

    def test_tie_at_cutoff(self):
        assert build_word_vocab(["a a c b"], 2).non_special == ["a", "b"]

    def test_empty_corpus(self):
        with pytest.raises(DataError):
            build_word_vocab(["", "  "], 5)

    def test_tokenize_words(self):
        v = build_word_vocab(["a b"], 10)
        a, b = v.lookup("a"), v.lookup("b")
        assert tokenize_words("a b", v) == [BOS, a, b, EOS]
        assert tokenize_words("a zzz", v) == [BOS, a, UNK, EOS]
        assert tokenize_words("", v) == [BOS, EOS]

    def test_tsv_round_trip(self, tmp_path):
        v = build_word_vocab(["राम राम सीता", "a b"], 10)
        p = tmp_path / "v.tsv"
        v.save(p)
        lines = p.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "<pad>\t0" and lines[4] == "राम\t2"
        back = WordVocab.load(p)
        assert back.id_to_token == v.id_to_token and back.fingerprint() == v.fingerprint()

    @given(st.lists(line_st, min_size=1, max_size=10), st.integers(1, 20))
    @settings(deadline=None)
    def test_invariants(self, lines, size):
        if not any(ln.split() for ln in lines):
            return
        v = build_word_vocab(lines, size)
        assert len(v) <= size + 4
        assert len(set(v.id_to_token)) == len(v)
        toks = v.non_special
        key = [(-v.frequencies[t], t) for t in toks]
        assert key == sorted(key)


class TestLearnBpe:
    def test_fixture_first_merges(self):
        assert learn_bpe(FIXTURE, 2).merges == [("l", "o"), ("lo", "w")]

    def test_fixture_full_table(self):
        table = learn_bpe(FIXTURE, 50)
        assert table.merges == [("l", "o"), ("lo", "w"), ("e", "s"), ("es", "t"), ("low", "est")]

    def test_single_char_word(self):
        assert len(learn_bpe({"a": 100}, 10)) == 0

    def test_zero_merges(self):
        assert len(learn_bpe(FIXTURE, 0)) == 0

    def test_empty_corpus(self):
        with pytest.raises(DataError):
            learn_bpe({}, 3)

    def test_hapax_pairs_not_merged(self):
        assert learn_bpe({"ab": 1, "cd": 1}, 5).merges == []

    def test_no_duplicate_pairs(self):
        # "abc" can be rebuilt as ab+c or a+bc; each pair is learned once
        table = learn_bpe({"abc": 4, "ab": 3, "bc": 3, "abcabc": 2}, 30)
        assert len(set(table.merges)) == len(table.merges)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_bruteforce_oracle(self, seed):
        rng = np.random.default_rng(seed)
        corpus = random_corpus(rng, alphabet="abc" if seed % 2 else "abcdefg")
        k = int(rng.integers(0, 31))
        assert [tuple(m) for m in learn_bpe(corpus, k).merges] == brute_learn_bpe(corpus, k)

    @given(st.dictionaries(words_st, st.integers(1, 5), min_size=1, max_size=12), st.integers(0, 15))
    @settings(deadline=None, max_examples=60)
    def test_prefix_stability(self, corpus, k):
        assert learn_bpe(corpus, k + 1).merges[:k] == learn_bpe(corpus, k).merges[: k]
        assert learn_bpe(corpus, k).merges == learn_bpe(corpus, k + 1).merges[: len(learn_bpe(corpus, k))]

    def test_merges_file(self, tmp_path):
        t = learn_bpe(FIXTURE, 5)
        p = tmp_path / "m"
        t.save(p)
        text = p.read_text(encoding="utf-8").splitlines()
        assert text[0] == MERGES_HEADER and text[1] == "l o"
        assert MergeTable.load(p).merges == t.merges

    def test_bad_merges_header(self, tmp_path):
        p = tmp_path / "m"
        p.write_text("l o\n", encoding="utf-8")
        with pytest.raises(DataError):
            MergeTable.load(p)


class TestApplyBpe:
    def test_lower(self):
        assert apply_bpe("lower", MergeTable([("l", "o"), ("lo", "w")])) == ["low@@", "e@@", "r"]

    def test_single_char(self):
        assert apply_bpe("x", MergeTable([("l", "o")])) == ["x"]

    def test_decode_examples(self):
        assert decode_bpe(["low@@", "e@@", "r"]) == "lower"
        assert decode_bpe(["a", "b"]) == "a b"
        assert decode_bpe([]) == ""

    @given(line_st, st.dictionaries(words_st, st.integers(1, 5), min_size=1, max_size=10), st.integers(0, 20))
    @settings(deadline=None, max_examples=150)
    def test_sequential_equivalence_and_round_trip(self, line, corpus, k):
        table = learn_bpe(corpus, k)
        segs = apply_bpe(line, table)
        assert segs == sequential_apply(line, table.merges)
        assert decode_bpe(segs) == " ".join(line.split())

    @pytest.mark.parametrize("backend", ["python", "compiled"])
    def test_both_kernel_backends_agree(self, backend):
        mod = _kernels.python_backend if backend == "python" else _kernels.compiled_backend
        if mod is None:
            pytest.skip("compiled backend not built")
        rng = np.random.default_rng(5)
        for _ in range(50):
            corpus = random_corpus(rng)
            table = learn_bpe(corpus, 20)
            for w in corpus:
                got = mod.apply_merges(list(w), table.ranks)
                want = [s.removesuffix("@@") for s in sequential_apply(w, table.merges)]
                assert got == want
            perm = rng.permutation(12).tolist()
            brute = sum(1 for i in range(12) for j in range(i + 1, 12) if perm[i] < perm[j])
            assert mod.count_ascending(perm) == brute


class TestSubwordVocab:
    def test_fixture_two_merges(self):
        lines = ["low"] * 5 + ["lowest"] * 2
        table = learn_bpe(FIXTURE, 2)
        v = build_subword_vocab(lines, table)
        # low -> [low]; lowest -> [low@@ e@@ s@@ t]; plus the character inventory
        chars = {c + m for c in "lowest" for m in ("", "@@")}
        assert set(v.non_special) == {"low", "low@@", "e@@", "s@@", "t"} | chars
        assert v.frequencies["low"] == 5 and v.frequencies["low@@"] == 2

    def test_zero_merges_is_character_inventory(self):
        v = build_subword_vocab(["ab a"], MergeTable([]))
        assert set(v.non_special) == {"a@@", "b", "a", "b@@"}

    @given(st.lists(line_st, min_size=1, max_size=8), st.integers(0, 20))
    @settings(deadline=None, max_examples=60)
    def test_closed_over_training_corpus(self, lines, k):
        if not any(ln.split() for ln in lines):
            return
        table = learn_bpe(word_frequencies(lines), k)
        v = build_subword_vocab(lines, table)
        for ln in lines:
            assert UNK not in tokenize_subwords(ln, table, v)

    @given(st.lists(line_st, min_size=1, max_size=6), line_st, st.integers(0, 20))
    @settings(deadline=None, max_examples=80)
    def test_open_vocabulary_property(self, lines, novel, k):
        if not any(ln.split() for ln in lines):
            return
        seen = set("".join(lines))
        novel = " ".join(w for w in novel.split() if set(w) <= seen)
        tok = build_side_tokenizer(lines, "subword", 100, k)
        ids = tok.encode(novel)
        assert UNK not in ids
        assert tok.decode(ids[1:]) == novel

    def test_open_vocabulary_vs_word_level(self):
        lines = ["ram eats apple", "sita eats bread", "rama reads"]
        table = learn_bpe(word_frequencies(lines), 20)
        sv = build_subword_vocab(lines, table)
        wv = build_word_vocab(lines, 100)
        novel = "sam bears pit"  # unseen words, seen characters
        assert UNK not in tokenize_subwords(novel, table, sv)
        assert tokenize_words(novel, wv).count(UNK) == 3


class TestSideTokenizer:
    @pytest.mark.parametrize("mode", ["word", "subword"])
    def test_save_load_and_decode(self, tmp_path, mode):
        lines = ["the boy eats bread", "the girl reads a book", "the boy reads"]
        tok = build_side_tokenizer(lines, mode, 50, 30)
        tok.save(tmp_path, "tgt")
        back = SideTokenizer.load(tmp_path, "tgt")
        assert back.fingerprint() == tok.fingerprint() and back.mode == mode
        ids = back.encode("the boy reads a book")
        assert ids[0] == BOS and ids[-1] == EOS
        assert back.decode(ids[1:]) == "the boy reads a book"

    def test_decode_stops_at_eos_and_shows_unk(self):
        tok = build_side_tokenizer(["a b"], "word", 10, 0)
        a = tok.vocab.lookup("a")
        assert tok.decode([a, UNK, EOS, a]) == "a <unk>"

    def test_subword_vocab_cap(self):
        lines = ["abcdefg hijk"] * 3
        capped = build_side_tokenizer(lines, "subword", 10, 20, subword_vocab_size=1)
        full = build_side_tokenizer(lines, "subword", 10, 20)
        n_chars = 2 * len(set("abcdefghijk"))
        assert len(capped.vocab) == 4 + n_chars + 1 < len(full.vocab)
        assert UNK not in capped.encode("abcdefg hijk")
        assert capped.decode(capped.encode("abcdefg hijk")[1:]) == "abcdefg hijk"
