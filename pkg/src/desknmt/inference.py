"""Greedy autoregressive decoding and file translation."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import Side, clean_line, read_lines, write_lines
from .errors import ArtifactMismatchError, DataError
from .tokenizer import BOS, EOS, PAD, SideTokenizer
from .trainer import Checkpoint, load_checkpoint, pad_batch
from .transformer import ModelConfig, TransformerParams, decoder_forward, encoder_forward


@dataclass
class Hypothesis:
    ids: list[int]
    text: str
    score: float


def default_max_len(src_len: int, cfg: ModelConfig) -> int:
    return min(2 * src_len + 10, cfg.max_len)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def greedy_decode_batch(
    src_batch: Sequence[Sequence[int]],
    params: TransformerParams,
    cfg: ModelConfig,
    max_len: int | Sequence[int] | None = None,
) -> list[tuple[list[int], float]]:
    """Decode several sources at once; returns ``(ids, score)`` per source.

    Each row starts from BOS and appends the argmax of its last position until
    it emits EOS or reaches its length limit. ``np.argmax`` returns the first
    maximum, so ties go to the lowest token id.
    """
    n = len(src_batch)
    if n == 0:
        return []
    if max_len is None:
        limits = [default_max_len(len(s), cfg) for s in src_batch]
    elif isinstance(max_len, int):
        limits = [min(max_len, cfg.max_len)] * n
    else:
        limits = [min(m, cfg.max_len) for m in max_len]
    src = pad_batch([list(s)[: cfg.max_len] for s in src_batch])
    seqs = [[BOS] for _ in range(n)]
    scores = [0.0] * n
    done = [lim <= 1 for lim in limits]
    with T.no_grad():
        memory = encoder_forward(src, params, cfg)
        while not all(done):
            active = [i for i in range(n) if not done[i]]
            width = max(len(seqs[i]) for i in active)
            tgt = np.full((len(active), width), PAD, dtype=np.int64)
            for r, i in enumerate(active):
                tgt[r, : len(seqs[i])] = seqs[i]
            mem = T.Tensor(memory.data[active])
            logits = decoder_forward(tgt, mem, src[active], params, cfg).data
            for r, i in enumerate(active):
                logp = _log_softmax(logits[r, len(seqs[i]) - 1])
                tok = int(np.argmax(logp))
                seqs[i].append(tok)
                scores[i] += float(logp[tok])
                if tok == EOS or len(seqs[i]) >= limits[i]:
                    done[i] = True
    return list(zip(seqs, scores))


def greedy_decode(
    src_ids: Sequence[int],
    params: TransformerParams,
    cfg: ModelConfig,
    max_len: int | None = None,
    tokenizer: SideTokenizer | None = None,
) -> Hypothesis:
    (ids, score), = greedy_decode_batch([src_ids], params, cfg, max_len)
    text = tokenizer.decode(ids[1:]) if tokenizer is not None else ""
    return Hypothesis(ids, text, score)


@dataclass
class ModelBundle:
    """A trained model plus the tokenizers it was trained with.

    On disk: ``src.vocab``, ``tgt.vocab``, optional ``src.merges`` /
    ``tgt.merges`` (subword mode) and ``model.ckpt`` in one directory.
    """

    src: SideTokenizer
    tgt: SideTokenizer
    checkpoint: Checkpoint

    @property
    def params(self) -> TransformerParams:
        return self.checkpoint.params

    @property
    def config(self) -> ModelConfig:
        return self.checkpoint.model_config

    @property
    def mode(self) -> str:
        return self.src.mode

    def vocab_hashes(self) -> dict[str, str]:
        return {"src": self.src.fingerprint(), "tgt": self.tgt.fingerprint()}

    def verify(self) -> None:
        if self.checkpoint.vocab_hashes != self.vocab_hashes():
            raise ArtifactMismatchError(
                "vocabulary/merge files do not match the checkpoint they are bundled with"
            )

    def save(self, directory) -> None:
        from .trainer import save_checkpoint

        os.makedirs(directory, exist_ok=True)
        self.src.save(directory, "src")
        self.tgt.save(directory, "tgt")
        save_checkpoint(self.checkpoint, os.path.join(directory, "model.ckpt"))

    @classmethod
    def load(cls, directory) -> "ModelBundle":
        ckpt_path = os.path.join(directory, "model.ckpt")
        if not os.path.exists(ckpt_path):
            raise DataError(f"no model.ckpt in {directory}")
        bundle = cls(
            SideTokenizer.load(directory, "src"),
            SideTokenizer.load(directory, "tgt"),
            load_checkpoint(ckpt_path),
        )
        bundle.verify()
        return bundle

    def encode_source(self, line: str, side: Side = Side.SOURCE) -> list[int]:
        ids = self.src.encode(clean_line(line, side))
        limit = self.config.max_len
        if len(ids) > limit:
            ids = ids[: limit - 1] + [EOS]
        return ids

    def translate(self, lines: Sequence[str], batch_size: int = 32, source_side: Side = Side.SOURCE) -> list[str]:
        """Clean, tokenize, greedy-decode and detokenize each line."""
        self.verify()
        encoded = [self.encode_source(ln, source_side) for ln in lines]
        order = sorted(range(len(encoded)), key=lambda i: len(encoded[i]))
        out: list[str] = [""] * len(encoded)
        for start in range(0, len(order), batch_size):
            chunk = order[start : start + batch_size]
            results = greedy_decode_batch([encoded[i] for i in chunk], self.params, self.config)
            for i, (ids, _) in zip(chunk, results):
                out[i] = self.tgt.decode(ids[1:])
        return out


def translate_file(src_path, out_path, bundle: ModelBundle | str | os.PathLike, batch_size: int = 32) -> int:
    """Translate ``src_path`` line by line into ``out_path``; returns line count."""
    if not isinstance(bundle, ModelBundle):
        bundle = ModelBundle.load(bundle)
    lines = read_lines(src_path)
    write_lines(out_path, bundle.translate(lines, batch_size))
    return len(lines)
