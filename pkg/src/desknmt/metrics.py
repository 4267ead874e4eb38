"""Corpus BLEU and RIBES.

Both metrics are single-reference and report fractions in [0, 1]; multiply
by 100 for the usual table convention.
"""

from __future__ import annotations

import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from . import _kernels
from .corpus import Side, clean_line, read_lines
from .errors import AlignmentError, DataError

REPORT_KEYS = ("bleu", "precisions", "bp", "ribes", "sentences")


@dataclass
class BleuResult:
    bleu: float
    precisions: list[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    matches: list[int] = field(default_factory=list)
    totals: list[int] = field(default_factory=list)


@dataclass
class EvaluationReport:
    bleu: float
    precisions: list[float]
    brevity_penalty: float
    ribes: float
    sentence_count: int

    def to_text(self) -> str:
        return "".join(
            [
                f"bleu={self.bleu!r}\n",
                "precisions=" + ",".join(repr(p) for p in self.precisions) + "\n",
                f"bp={self.brevity_penalty!r}\n",
                f"ribes={self.ribes!r}\n",
                f"sentences={self.sentence_count}\n",
            ]
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "EvaluationReport":
        kv = {}
        for line in text.splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                kv[k.strip()] = v.strip()
        missing = [k for k in REPORT_KEYS if k not in kv]
        if missing:
            raise DataError(f"report is missing keys: {', '.join(missing)}")
        return cls(
            bleu=float(kv["bleu"]),
            precisions=[float(p) for p in kv["precisions"].split(",")] if kv["precisions"] else [],
            brevity_penalty=float(kv["bp"]),
            ribes=float(kv["ribes"]),
            sentence_count=int(kv["sentences"]),
        )

    @classmethod
    def load(cls, path) -> "EvaluationReport":
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if hyp_len > ref_len:
        return 1.0
    if hyp_len == 0:
        return 0.0
    return math.exp(1.0 - ref_len / hyp_len)


def bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4) -> BleuResult:
    """Corpus BLEU with per-sentence clipping and no smoothing."""
    if len(hypotheses) != len(references):
        raise DataError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise DataError("BLEU of an empty corpus is undefined")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h = _ngrams(hyp, n)
            r = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    bp = brevity_penalty(hyp_len, ref_len)
    if min(precisions) > 0.0:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    else:
        score = 0.0
    return BleuResult(score, precisions, bp, hyp_len, ref_len, matches, totals)


def _count_sub(seq: Sequence[str], sub: Sequence[str]) -> int:
    k = len(sub)
    sub = list(sub)
    return sum(1 for i in range(len(seq) - k + 1) if list(seq[i : i + k]) == sub)


def _find_sub(seq: Sequence[str], sub: Sequence[str]) -> int:
    k = len(sub)
    sub = list(sub)
    for i in range(len(seq) - k + 1):
        if list(seq[i : i + k]) == sub:
            return i
    return -1


def word_alignment(hyp: Sequence[str], ref: Sequence[str]) -> list[int]:
    """Reference position for each alignable hypothesis word, in hypothesis order.

    A word that occurs exactly once on both sides aligns directly. Otherwise
    the context is widened one word at a time, first to the left and then to
    the right, until the n-gram around it is unique on both sides.
    Hypothesis words that never disambiguate are dropped.
    """
    ref_counts = Counter(ref)
    hyp_counts = Counter(hyp)
    out = []
    for i, w in enumerate(hyp):
        if w not in ref_counts:
            continue
        if ref_counts[w] == 1 and hyp_counts[w] == 1:
            out.append(list(ref).index(w))
            continue
        for window in range(1, max(i + 1, len(hyp) - i + 1)):
            if window <= i:
                gram = hyp[i - window : i + 1]
                if _count_sub(ref, gram) == 1 and _count_sub(hyp, gram) == 1:
                    out.append(_find_sub(ref, gram) + len(gram) - 1)
                    break
            if i + window < len(hyp):
                gram = hyp[i : i + window + 1]
                if _count_sub(ref, gram) == 1 and _count_sub(hyp, gram) == 1:
                    out.append(_find_sub(ref, gram))
                    break
    return out


def kendall_components(hyp: Sequence[str], ref: Sequence[str]) -> tuple[float, float, float]:
    """``(normalized Kendall's tau, unigram precision, brevity penalty)``."""
    if not ref or not hyp:
        return (0.0, 0.0, 0.0)
    bp = min(1.0, math.exp(1.0 - len(ref) / len(hyp)))
    ranks = word_alignment(hyp, ref)
    n = len(ranks)
    if n == 1 and len(ref) == 1:
        return (1.0, 1.0 / len(hyp), bp)
    if n < 2:
        return (0.0, 0.0, bp)
    nkt = _kernels.count_ascending(ranks) / (n * (n - 1) / 2)
    return (nkt, n / len(hyp), bp)


def ribes(hyp: Sequence[str], ref: Sequence[str], alpha: float = 0.25, beta: float = 0.10) -> float:
    """Sentence RIBES: ``NKT * precision**alpha * BP**beta``."""
    nkt, p, bp = kendall_components(hyp, ref)
    if nkt == 0.0:
        return 0.0
    return nkt * (p ** alpha) * (bp ** beta)


def corpus_ribes(
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    alpha: float = 0.25,
    beta: float = 0.10,
) -> float:
    if len(hypotheses) != len(references):
        raise DataError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise DataError("RIBES of an empty corpus is undefined")
    return sum(ribes(h, r, alpha, beta) for h, r in zip(hypotheses, references)) / len(hypotheses)


def score_corpus(
    hyp_lines: Sequence[str],
    ref_lines: Sequence[str],
    alpha: float = 0.25,
    beta: float = 0.10,
    clean: bool = True,
) -> EvaluationReport:
    if len(hyp_lines) != len(ref_lines):
        raise AlignmentError(f"{len(hyp_lines)} hypothesis lines vs {len(ref_lines)} reference lines")
    prep = (lambda s: clean_line(s, Side.TARGET).split()) if clean else (lambda s: s.split())
    hyps = [prep(h) for h in hyp_lines]
    refs = [prep(r) for r in ref_lines]
    b = bleu(hyps, refs)
    return EvaluationReport(b.bleu, b.precisions, b.brevity_penalty, corpus_ribes(hyps, refs, alpha, beta), len(hyps))


def evaluate_corpus(hyp_path, ref_path, report_path=None, alpha: float = 0.25, beta: float = 0.10) -> EvaluationReport:
    """Score a hypothesis file against a line-aligned reference file."""
    hyp_lines = read_lines(hyp_path)
    ref_lines = read_lines(ref_path)
    if len(hyp_lines) != len(ref_lines):
        raise AlignmentError(
            f"line count mismatch: {hyp_path} has {len(hyp_lines)} lines, "
            f"{ref_path} has {len(ref_lines)} lines"
        )
    report = score_corpus(hyp_lines, ref_lines, alpha, beta)
    if report_path is not None:
        parent = os.path.dirname(os.fspath(report_path))
        if parent:
            os.makedirs(parent, exist_ok=True)
        report.save(report_path)
    return report
