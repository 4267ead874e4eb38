"""Parallel corpus loading, cleaning, deduplication and persistence.

Files are plain UTF-8, one sentence per line, ``\\n`` endings, no BOM. The
origin of each pair (``original`` or ``synthetic``) lives in a sidecar
manifest next to the source file, one keyword per line.
"""

from __future__ import annotations

import enum
import os
import unicodedata
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .errors import AlignmentError, DataError

__all__ = [
    "Origin",
    "Side",
    "SentencePair",
    "Bitext",
    "clean_line",
    "clean_bitext",
    "dedup_pairs",
    "load_bitext",
    "save_bitext",
    "read_lines",
    "write_lines",
    "manifest_path",
]

MANIFEST_SUFFIX = ".manifest"


class Origin(str, enum.Enum):
    ORIGINAL = "original"
    SYNTHETIC = "synthetic"


class Side(str, enum.Enum):
    SOURCE = "source"
    TARGET = "target"


@dataclass(frozen=True)
class SentencePair:
    source: str
    target: str
    origin: Origin = Origin.ORIGINAL

    def key(self) -> tuple[str, str]:
        return (self.source, self.target)


@dataclass(frozen=True)
class Bitext:
    """Positionally aligned, immutable collection of sentence pairs."""

    pairs: tuple[SentencePair, ...] = ()
    name: str = ""

    def __post_init__(self):
        if not isinstance(self.pairs, tuple):
            object.__setattr__(self, "pairs", tuple(self.pairs))

    @classmethod
    def from_pairs(
        cls,
        pairs: Iterable[tuple[str, str]],
        name: str = "",
        origin: Origin = Origin.ORIGINAL,
    ) -> "Bitext":
        return cls(tuple(SentencePair(s, t, origin) for s, t in pairs), name)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[SentencePair]:
        return iter(self.pairs)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Bitext(self.pairs[i], self.name)
        return self.pairs[i]

    @property
    def sources(self) -> list[str]:
        return [p.source for p in self.pairs]

    @property
    def targets(self) -> list[str]:
        return [p.target for p in self.pairs]

    def side(self, side: Side | str) -> list[str]:
        return self.sources if Side(side) is Side.SOURCE else self.targets

    def swapped(self, name: str | None = None) -> "Bitext":
        """Source and target exchanged; used to train the reverse model."""
        return Bitext(
            tuple(SentencePair(p.target, p.source, p.origin) for p in self.pairs),
            self.name if name is None else name,
        )

    def concat(self, other: "Bitext", name: str | None = None) -> "Bitext":
        return Bitext(self.pairs + other.pairs, self.name if name is None else name)

    def with_name(self, name: str) -> "Bitext":
        return Bitext(self.pairs, name)


def _is_noise(ch: str) -> bool:
    cat = unicodedata.category(ch)
    return cat[0] in "PS" or cat == "Cc"


def _clean_once(line: str, lower: bool) -> str:
    line = unicodedata.normalize("NFC", line)
    kept = []
    for ch in line:
        if ch.isspace():
            kept.append(" ")
        elif not _is_noise(ch):
            kept.append(ch)
    out = "".join(kept)
    if lower:
        out = unicodedata.normalize("NFC", out.lower())
    return " ".join(out.split())


def clean_line(line: str, side: Side | str = Side.TARGET) -> str:
    """Strip punctuation, symbols and control characters; collapse whitespace.

    Only the target (Latin-script) side is lowercased. Iterates to a fixed
    point so the function is idempotent even for the rare code points whose
    lowercase form decomposes or falls into a removed category.
    """
    lower = Side(side) is Side.TARGET
    out = _clean_once(line, lower)
    for _ in range(4):
        again = _clean_once(out, lower)
        if again == out:
            break
        out = again
    return out


def clean_bitext(b: Bitext) -> Bitext:
    """Clean both sides of every pair and drop pairs with an empty side."""
    pairs = []
    for p in b.pairs:
        s = clean_line(p.source, Side.SOURCE)
        t = clean_line(p.target, Side.TARGET)
        if s and t:
            pairs.append(SentencePair(s, t, p.origin))
    return Bitext(tuple(pairs), b.name)


def dedup_pairs(b: Bitext) -> Bitext:
    """Keep the first occurrence of each exact (source, target) pair."""
    seen: set[tuple[str, str]] = set()
    pairs = []
    for p in b.pairs:
        k = p.key()
        if k in seen:
            continue
        seen.add(k)
        pairs.append(p)
    return Bitext(tuple(pairs), b.name)


def manifest_path(source_path: str | os.PathLike) -> str:
    return os.fspath(source_path) + MANIFEST_SUFFIX


def read_lines(path: str | os.PathLike) -> list[str]:
    """Read a one-sentence-per-line UTF-8 file, NFC-normalised."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        text = f.read()
    if text.startswith("\ufeff"):
        text = text[1:]
    if not text:
        return []
    lines = text.split("\n")
    if lines[-1] == "":
        lines.pop()
    return [unicodedata.normalize("NFC", ln) for ln in lines]


def write_lines(path: str | os.PathLike, lines: Sequence[str]) -> None:
    for i, ln in enumerate(lines):
        if "\n" in ln:
            raise DataError(f"{path}: line {i} contains an embedded newline")
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ln in lines:
            f.write(ln)
            f.write("\n")


def load_bitext(source_path, target_path, name: str | None = None) -> Bitext:
    src = read_lines(source_path)
    tgt = read_lines(target_path)
    if len(src) != len(tgt):
        raise AlignmentError(
            f"line count mismatch: {source_path} has {len(src)} lines, "
            f"{target_path} has {len(tgt)} lines"
        )
    origins = [Origin.ORIGINAL] * len(src)
    mpath = manifest_path(source_path)
    if os.path.exists(mpath):
        words = read_lines(mpath)
        if len(words) != len(src):
            raise AlignmentError(
                f"manifest {mpath} has {len(words)} lines, bitext has {len(src)}"
            )
        try:
            origins = [Origin(w.strip()) for w in words]
        except ValueError as e:
            raise DataError(f"bad manifest entry in {mpath}: {e}") from None
    if name is None:
        name = os.path.splitext(os.path.basename(os.fspath(source_path)))[0]
    pairs = tuple(SentencePair(s, t, o) for s, t, o in zip(src, tgt, origins))
    return Bitext(pairs, name)


def save_bitext(b: Bitext, source_path, target_path) -> None:
    write_lines(source_path, b.sources)
    write_lines(target_path, b.targets)
    write_lines(manifest_path(source_path), [p.origin.value for p in b.pairs])
