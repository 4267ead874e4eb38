"""Word-level and BPE subword vocabularies.

Two independent vocabularies are built, one per language side. Subword
segmentation marks every non-final segment of a word with the ``@@``
suffix, so decoding is a pure string operation.

File formats
------------
vocab  TSV, ``token<TAB>count`` per line; specials first, then ids in order.
merges first line ``#bpe-v1``, then one ``left right`` pair per line in
       learning order.
"""

from __future__ import annotations

import hashlib
import heapq
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from . import _kernels
from .errors import DataError

PAD, UNK, BOS, EOS = 0, 1, 2, 3
PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN = "<pad>", "<unk>", "<s>", "</s>"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)
MARKER = "@@"
MERGES_HEADER = "#bpe-v1"


@dataclass
class WordVocab:
    """Bijective token <-> id map; ids 0-3 are reserved for specials."""

    id_to_token: list[str]
    frequencies: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if tuple(self.id_to_token[:4]) != SPECIAL_TOKENS:
            raise DataError("vocabulary must start with the four special tokens")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def encode(self, tokens: Iterable[str], add_bos_eos: bool = True) -> list[int]:
        ids = [self.token_to_id.get(t, UNK) for t in tokens]
        return [BOS] + ids + [EOS] if add_bos_eos else ids

    def tokens(self, ids: Iterable[int]) -> list[str]:
        """Map ids back to tokens, dropping PAD/BOS/EOS and keeping UNK."""
        out = []
        for i in ids:
            if i in (PAD, BOS, EOS):
                continue
            out.append(self.id_to_token[i])
        return out

    @property
    def non_special(self) -> list[str]:
        return self.id_to_token[4:]

    def to_tsv(self) -> str:
        lines = [f"{t}\t{self.frequencies.get(t, 0)}" for t in self.id_to_token]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_tsv())

    @classmethod
    def load(cls, path) -> "WordVocab":
        tokens, freqs = [], {}
        with open(path, "r", encoding="utf-8") as f:
            for n, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    tok, count = line.rsplit("\t", 1)
                    freqs[tok] = int(count)
                except ValueError:
                    raise DataError(f"{path}:{n}: expected 'token<TAB>count'") from None
                tokens.append(tok)
        return cls(tokens, freqs)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_tsv().encode("utf-8")).hexdigest()


def _ranked(counts: Mapping[str, int], max_size: int | None) -> list[str]:
    items = sorted(
        ((t, c) for t, c in counts.items() if t not in SPECIAL_TOKENS),
        key=lambda tc: (-tc[1], tc[0]),
    )
    if max_size is not None:
        items = items[:max_size]
    return [t for t, _ in items]


def build_word_vocab(lines: Iterable[str], max_size: int) -> WordVocab:
    """Specials plus the ``max_size`` most frequent whitespace tokens.

    Ties in frequency are broken lexicographically.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    counts: Counter[str] = Counter()
    for line in lines:
        counts.update(line.split())
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = _ranked(counts, max_size)
    return WordVocab(list(SPECIAL_TOKENS) + kept, {t: counts[t] for t in kept})


def tokenize_words(line: str, vocab: WordVocab) -> list[int]:
    return vocab.encode(line.split())


@dataclass
class MergeTable:
    merges: list[tuple[str, str]]
    marker: str = MARKER

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        if len(set(self.merges)) != len(self.merges):
            raise DataError("merge table contains duplicate pairs")
        self.ranks = {m: i for i, m in enumerate(self.merges)}
        # later merges win when two pairs concatenate to the same string
        self.producers = {a + b: (a, b) for a, b in self.merges}
        self._cache: dict[str, list[str]] = {}

    def __len__(self) -> int:
        return len(self.merges)

    def segment_word(self, word: str) -> list[str]:
        """Plain segments of one word (no markers), cached per table."""
        seg = self._cache.get(word)
        if seg is None:
            seg = _kernels.apply_merges(list(word), self.ranks)
            self._cache[word] = seg
        return seg

    def to_text(self) -> str:
        return "\n".join([MERGES_HEADER] + [f"{a} {b}" for a, b in self.merges]) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path) -> "MergeTable":
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().split("\n")
        if not lines or lines[0] != MERGES_HEADER:
            raise DataError(f"{path}: missing '{MERGES_HEADER}' header")
        merges = []
        for n, line in enumerate(lines[1:], 2):
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise DataError(f"{path}:{n}: expected 'left right'")
            merges.append((parts[0], parts[1]))
        return cls(merges)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def word_frequencies(lines: Iterable[str]) -> Counter:
    counts: Counter[str] = Counter()
    for line in lines:
        counts.update(line.split())
    return counts


def _pairs_of(symbols: Sequence[str]) -> Counter:
    return Counter(zip(symbols, symbols[1:]))


def learn_bpe(word_counts: Mapping[str, int], num_merges: int, min_frequency: int = 2) -> MergeTable:
    """Learn up to ``num_merges`` merge rules from a word-frequency map.

    Each step merges the adjacent symbol pair with the highest
    frequency-weighted count, taking the lexicographically smallest pair on a
    tie, and stops once no pair reaches ``min_frequency``. A pair already in
    the table is never chosen twice. Pair statistics are
    updated incrementally for the words a merge touches.
    """
    if not word_counts:
        raise DataError("cannot learn BPE from an empty corpus")
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    words = [list(w) for w in word_counts]
    freqs = [int(word_counts[w]) for w in word_counts]
    pair_counts: dict[tuple[str, str], int] = {}
    where: dict[tuple[str, str], set[int]] = {}
    for idx, (syms, f) in enumerate(zip(words, freqs)):
        for p, k in _pairs_of(syms).items():
            pair_counts[p] = pair_counts.get(p, 0) + f * k
            where.setdefault(p, set()).add(idx)
    heap = [(-c, p[0], p[1]) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    merges: list[tuple[str, str]] = []
    merged: set[tuple[str, str]] = set()
    merge_pair = _kernels.merge_pair
    while len(merges) < num_merges:
        best = None
        while heap:
            negc, a, b = heapq.heappop(heap)
            # a pair rebuilt from a different split of the same strings stays ineligible
            if (a, b) in merged:
                continue
            if pair_counts.get((a, b), 0) == -negc and negc < 0:
                best = (a, b)
                count = -negc
                break
        if best is None or count < min_frequency:
            break
        merges.append(best)
        merged.add(best)
        touched: set[tuple[str, str]] = set()
        for idx in sorted(where.get(best, ())):
            old = _pairs_of(words[idx])
            new_syms = merge_pair(words[idx], best[0], best[1])
            new = _pairs_of(new_syms)
            words[idx] = new_syms
            f = freqs[idx]
            for p, k in old.items():
                pair_counts[p] -= f * k
                touched.add(p)
                if p not in new:
                    where[p].discard(idx)
            for p, k in new.items():
                pair_counts[p] = pair_counts.get(p, 0) + f * k
                where.setdefault(p, set()).add(idx)
                touched.add(p)
        for p in touched:
            c = pair_counts.get(p, 0)
            if c <= 0:
                pair_counts.pop(p, None)
                where.pop(p, None)
            else:
                heapq.heappush(heap, (-c, p[0], p[1]))
    return MergeTable(merges)


def apply_bpe(line: str, table: MergeTable) -> list[str]:
    """Segment each whitespace word; non-final segments get the marker suffix."""
    out = []
    marker = table.marker
    for word in line.split():
        segs = table.segment_word(word)
        out.extend(s + marker for s in segs[:-1])
        out.append(segs[-1])
    return out


def decode_bpe(tokens: Sequence[str], marker: str = MARKER) -> str:
    words = []
    current = []
    for tok in tokens:
        if tok.endswith(marker):
            current.append(tok[: -len(marker)])
        else:
            current.append(tok)
            words.append("".join(current))
            current = []
    if current:
        words.append("".join(current))
    return " ".join(words)


def build_subword_vocab(
    lines: Iterable[str], table: MergeTable, max_size: int | None = None
) -> WordVocab:
    """Specials, every character in both marker forms, then the segments
    ``apply_bpe`` yields on the corpus.

    The character entries guarantee that any word spelled with training
    characters can be encoded without UNK (see ``split_to_vocab``).
    ``max_size`` caps the segment entries only.
    """
    counts: Counter[str] = Counter()
    chars: set[str] = set()
    for word, f in word_frequencies(lines).items():
        chars.update(word)
        segs = table.segment_word(word)
        for s in segs[:-1]:
            counts[s + table.marker] += f
        counts[segs[-1]] += f
    base = sorted({c for ch in chars for c in (ch, ch + table.marker)} - set(SPECIAL_TOKENS))
    taken = set(base)
    kept = [t for t in _ranked(counts, None) if t not in taken]
    if max_size is not None:
        kept = kept[:max_size]
    return WordVocab(list(SPECIAL_TOKENS) + base + kept, {t: counts[t] for t in base + kept})


def split_to_vocab(segment: str, final: bool, table: MergeTable, vocab: WordVocab) -> list[str]:
    """Undo merges inside ``segment`` until every piece is in ``vocab``."""
    token = segment if final else segment + table.marker
    if token in vocab or len(segment) <= 1:
        return [token]
    pair = table.producers.get(segment)
    if pair is None:
        return [token]
    left, right = pair
    return split_to_vocab(left, False, table, vocab) + split_to_vocab(right, final, table, vocab)


def tokenize_subwords(line: str, table: MergeTable, vocab: WordVocab) -> list[int]:
    pieces = []
    for word in line.split():
        segs = table.segment_word(word)
        for i, seg in enumerate(segs):
            pieces.extend(split_to_vocab(seg, i == len(segs) - 1, table, vocab))
    return vocab.encode(pieces)


@dataclass
class SideTokenizer:
    """Text <-> ids for one language side, in word or subword mode."""

    vocab: WordVocab
    merges: MergeTable | None = None

    @property
    def mode(self) -> str:
        return "word" if self.merges is None else "subword"

    def encode(self, line: str) -> list[int]:
        if self.merges is None:
            return tokenize_words(line, self.vocab)
        return tokenize_subwords(line, self.merges, self.vocab)

    def decode(self, ids: Iterable[int]) -> str:
        """Render ids as text, stopping at EOS; UNK becomes a literal ``<unk>``."""
        kept = []
        for i in ids:
            if i == EOS:
                break
            kept.append(i)
        toks = self.vocab.tokens(kept)
        if self.merges is None:
            return " ".join(toks)
        return decode_bpe(toks, self.merges.marker)

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.vocab.fingerprint().encode())
        if self.merges is not None:
            h.update(self.merges.fingerprint().encode())
        return h.hexdigest()

    def save(self, directory, prefix: str) -> None:
        os.makedirs(directory, exist_ok=True)
        self.vocab.save(os.path.join(directory, f"{prefix}.vocab"))
        if self.merges is not None:
            self.merges.save(os.path.join(directory, f"{prefix}.merges"))

    @classmethod
    def load(cls, directory, prefix: str) -> "SideTokenizer":
        vocab = WordVocab.load(os.path.join(directory, f"{prefix}.vocab"))
        mpath = os.path.join(directory, f"{prefix}.merges")
        merges = MergeTable.load(mpath) if os.path.exists(mpath) else None
        return cls(vocab, merges)


def build_side_tokenizer(
    lines: Sequence[str],
    mode: str,
    vocab_size: int,
    num_merges: int,
    subword_vocab_size: int | None = None,
) -> SideTokenizer:
    """Learn the vocabulary (and merges in subword mode) for one side.

    ``vocab_size`` caps word mode; ``subword_vocab_size`` optionally caps the
    subword inventory produced by ``num_merges`` merges.
    """
    if mode == "word":
        return SideTokenizer(build_word_vocab(lines, vocab_size))
    if mode == "subword":
        table = learn_bpe(word_frequencies(lines), num_merges)
        return SideTokenizer(build_subword_vocab(lines, table, subword_vocab_size), table)
    raise ValueError(f"unknown tokenization mode {mode!r}")
