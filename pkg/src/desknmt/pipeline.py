"""Back-translation, cumulative batch assembly, test splits and the experiment grid."""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import fcntl
import hashlib
import io
import logging
import math
import os
import traceback
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .config import ToolkitConfig, dump_config
from .corpus import (
    Bitext,
    Origin,
    SentencePair,
    Side,
    clean_bitext,
    clean_line,
    dedup_pairs,
    load_bitext,
    read_lines,
    save_bitext,
    write_lines,
)
from .errors import DataError, DeskNMTError, QuotaError
from .inference import ModelBundle
from .metrics import score_corpus
from .tokenizer import SideTokenizer, WordVocab, build_side_tokenizer, build_word_vocab
from .trainer import config_fingerprint, load_checkpoint, train
from .transformer import init_params

log = logging.getLogger(__name__)

RESULTS_SCHEMA = 1
RESULT_FIELDS = (
    "schema", "key", "model_id", "model", "tokenization", "batch_level", "train_pairs",
    "set1_size", "set2_size", "bleu_set1", "ribes_set1", "bleu_set2", "ribes_set2",
    "steps", "seed", "vocab_hash", "checkpoint_fingerprint", "status", "error",
)


# batch assembly

@dataclass(frozen=True)
class BatchPlan:
    """Original data plus an ordered synthetic pool cut into cumulative quotas."""

    base: Bitext
    pool: Bitext
    increments: tuple[int, ...] = (500_000, 1_000_000, 1_000_000, 500_000)
    scale: float = 1e-3

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def levels(self) -> int:
        return len(self.increments)

    def quota(self, level: int) -> int:
        """Synthetic pairs included at ``level`` (cumulative, scaled)."""
        if not 0 <= level <= self.levels:
            raise ValueError(f"level must lie in 0..{self.levels}")
        return int(round(sum(self.increments[:level]) * self.scale))

    def total(self, level: int) -> int:
        return len(self.base) + self.quota(level)


def assemble_batch(plan: BatchPlan, level: int, seed: int | None = 0) -> Bitext:
    """Base plus the first ``quota(level)`` synthetic pairs, shuffled by ``seed``.

    ``seed=None`` skips the shuffle (base order, then pool order).
    """
    need = plan.quota(level)
    if need > len(plan.pool):
        raise QuotaError(
            f"level {level} needs {need} synthetic pairs but the pool has {len(plan.pool)} "
            f"(short by {need - len(plan.pool)})"
        )
    pairs = plan.base.pairs + plan.pool.pairs[:need]
    if seed is not None:
        order = np.random.default_rng([seed, level]).permutation(len(pairs))
        pairs = tuple(pairs[i] for i in order)
    return Bitext(pairs, f"{plan.base.name}+bt{level}")


# back-translation

def backtranslate(
    monolingual: str | os.PathLike | Sequence[str],
    reverse: ModelBundle | str | os.PathLike,
    limit: int,
    batch_size: int = 32,
) -> Bitext:
    """Synthetic pairs for the first ``limit`` monolingual target-language lines.

    Lines are cleaned with the target-side rules before translation and the
    cleaned line becomes the target side verbatim.
    """
    if limit < 0:
        raise ValueError("limit must be >= 0")
    if not isinstance(reverse, ModelBundle):
        reverse = ModelBundle.load(reverse)
    reverse.verify()
    if isinstance(monolingual, (str, os.PathLike)):
        monolingual = read_lines(monolingual)
    lines = [clean_line(ln, Side.TARGET) for ln in list(monolingual)[:limit]]
    if not lines:
        return Bitext((), "synthetic")
    sources = reverse.translate(lines, batch_size, source_side=Side.TARGET)
    return Bitext(
        tuple(SentencePair(s, t, Origin.SYNTHETIC) for s, t in zip(sources, lines)),
        "synthetic",
    )


def check_no_leak(pool: Bitext, *held_out: Bitext) -> None:
    """Raise ``DataError`` if any held-out pair also occurs in ``pool``."""
    keys = {p.key() for p in pool}
    for b in held_out:
        hits = [p for p in b if p.key() in keys]
        if hits:
            raise DataError(
                f"{len(hits)} pair(s) of {b.name or 'held-out data'} occur in the synthetic pool, "
                f"e.g. {hits[0].target!r}"
            )


# test split

def split_test_set(
    test: Bitext,
    word_vocab: WordVocab,
    side: str = "source",
    target_vocab: WordVocab | None = None,
) -> tuple[Bitext, Bitext]:
    """``(set1, set2)``: fully in-vocabulary pairs, and the whole test set.

    ``side`` picks which tokens must be covered. ``target_vocab`` is used for
    target tokens and defaults to ``word_vocab``.
    """
    tv = target_vocab if target_vocab is not None else word_vocab

    def covered(line: str, vocab: WordVocab) -> bool:
        return all(w in vocab for w in line.split())

    if side == "source":
        keep = [p for p in test if covered(p.source, word_vocab)]
    elif side == "target":
        keep = [p for p in test if covered(p.target, tv)]
    elif side == "both":
        keep = [p for p in test if covered(p.source, word_vocab) and covered(p.target, tv)]
    else:
        raise ValueError(f"side must be source, target or both, not {side!r}")
    return Bitext(tuple(keep), "set1"), test.with_name("set2")


# experiment grid

@dataclass(frozen=True)
class ExperimentConfig:
    model_id: int
    tokenization: str
    batch_level: int

    @property
    def model_name(self) -> str:
        return "Transformer" if self.batch_level == 0 else f"Transformer with Batch {self.batch_level}"


def full_grid(levels: Iterable[int] = range(5), tokenizations: Iterable[str] = ("word", "subword")) -> list[ExperimentConfig]:
    """Word configs get ids 1..5 and subword configs 6..10 for levels 0..4."""
    levels = list(levels)
    grid = []
    for t_index, tok in enumerate(("word", "subword")):
        if tok not in tokenizations:
            continue
        for lv in levels:
            grid.append(ExperimentConfig(t_index * 5 + lv + 1, tok, lv))
    return grid


@dataclass(frozen=True)
class ExperimentInputs:
    train: Bitext
    dev: Bitext
    test: Bitext
    monolingual: tuple[str, ...]

    @classmethod
    def from_dir(cls, data_dir) -> "ExperimentInputs":
        """Read ``{train,dev,test}.src/.tgt`` and ``mono.tgt`` from ``data_dir``."""

        def bt(split):
            return load_bitext(
                os.path.join(data_dir, f"{split}.src"), os.path.join(data_dir, f"{split}.tgt"), split
            )

        mono_path = os.path.join(data_dir, "mono.tgt")
        mono = read_lines(mono_path) if os.path.exists(mono_path) else []
        return cls(bt("train"), bt("dev"), bt("test"), tuple(mono))

    def save(self, data_dir) -> None:
        os.makedirs(data_dir, exist_ok=True)
        for split, b in (("train", self.train), ("dev", self.dev), ("test", self.test)):
            save_bitext(b, os.path.join(data_dir, f"{split}.src"), os.path.join(data_dir, f"{split}.tgt"))
        write_lines(os.path.join(data_dir, "mono.tgt"), list(self.monolingual))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for b in (self.train, self.dev, self.test):
            for p in b:
                h.update(f"{p.source}\t{p.target}\n".encode())
            h.update(b"\x00")
        for ln in self.monolingual:
            h.update(ln.encode() + b"\n")
        return h.hexdigest()


@dataclass
class ResultRow:
    key: str
    model_id: int
    model: str
    tokenization: str
    batch_level: int
    train_pairs: int = 0
    set1_size: int = 0
    set2_size: int = 0
    bleu_set1: float = math.nan
    ribes_set1: float = math.nan
    bleu_set2: float = math.nan
    ribes_set2: float = math.nan
    steps: int = 0
    seed: int = 0
    vocab_hash: str = ""
    checkpoint_fingerprint: str = ""
    status: str = "ok"
    error: str = ""

    def to_record(self) -> dict:
        d = dataclasses.asdict(self)
        d["schema"] = RESULTS_SCHEMA
        for k in ("bleu_set1", "ribes_set1", "bleu_set2", "ribes_set2"):
            d[k] = repr(d[k])
        return d

    @classmethod
    def from_record(cls, rec: dict) -> "ResultRow":
        if int(rec.get("schema") or 0) != RESULTS_SCHEMA:
            raise DataError(f"results row has schema {rec.get('schema')!r}, expected {RESULTS_SCHEMA}")
        kw = {}
        for f in dataclasses.fields(cls):
            raw = rec.get(f.name, "")
            if f.type in ("int", int):
                kw[f.name] = int(raw or 0)
            elif f.type in ("float", float):
                kw[f.name] = float(raw) if raw else math.nan
            else:
                kw[f.name] = raw or ""
        return cls(**kw)


@contextlib.contextmanager
def _locked(path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "a+", encoding="utf-8", newline="") as f:
        fcntl.flock(f.fileno(), fcntl.LOCK_EX)
        try:
            yield f
        finally:
            fcntl.flock(f.fileno(), fcntl.LOCK_UN)


def read_results(path) -> list[ResultRow]:
    if not os.path.exists(path):
        return []
    with open(path, encoding="utf-8", newline="") as f:
        return [ResultRow.from_record(r) for r in csv.DictReader(f)]


def append_result(path, row: ResultRow) -> None:
    """Append one row under an exclusive lock, writing the header on first use."""
    with _locked(path) as f:
        f.seek(0, os.SEEK_END)
        buf = io.StringIO()
        w = csv.DictWriter(buf, RESULT_FIELDS, lineterminator="\n")
        if f.tell() == 0:
            w.writeheader()
        w.writerow(row.to_record())
        f.write(buf.getvalue())
        f.flush()
        os.fsync(f.fileno())


def completed_rows(path) -> dict[str, ResultRow]:
    """Latest successful row per key."""
    return {r.key: r for r in read_results(path) if r.status == "ok"}


def _row_key(exp: ExperimentConfig, cfg: ToolkitConfig, data_fp: str) -> str:
    blob = f"{exp.model_id}|{exp.tokenization}|{exp.batch_level}|{data_fp}|{dump_config(cfg)}"
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _tokenizer_pair(train_data: Bitext, mode: str, cfg: ToolkitConfig) -> tuple[SideTokenizer, SideTokenizer]:
    tk = cfg.tokenizer
    cap = tk.subword_vocab_size or None
    return (
        build_side_tokenizer(train_data.sources, mode, tk.word_vocab_size, tk.num_merges, cap),
        build_side_tokenizer(train_data.targets, mode, tk.word_vocab_size, tk.num_merges, cap),
    )


def _encode(b: Bitext, src: SideTokenizer, tgt: SideTokenizer, max_len: int) -> list[tuple[list[int], list[int]]]:
    out = []
    for p in b:
        s, t = src.encode(p.source), tgt.encode(p.target)
        if len(s) <= max_len and len(t) <= max_len:
            out.append((s, t))
    return out


def train_bundle(
    train_data: Bitext,
    dev: Bitext,
    mode: str,
    cfg: ToolkitConfig,
    out_dir,
    reverse: bool = False,
) -> ModelBundle:
    """Build tokenizers on ``train_data``, train a model and save the bundle.

    A ``model.ckpt`` already in ``out_dir`` with a matching fingerprint is
    resumed rather than restarted.
    """
    src_tok, tgt_tok = _tokenizer_pair(train_data, mode, cfg)
    model_cfg = cfg.model_config(len(src_tok.vocab), len(tgt_tok.vocab), reverse)
    train_cfg = cfg.train_config(reverse)
    data = _encode(train_data, src_tok, tgt_tok, model_cfg.max_len)
    if not data:
        raise DataError("no training pairs fit within model.max_len")
    if len(data) < len(train_data):
        log.warning("dropped %d pairs longer than max_len=%d", len(train_data) - len(data), model_cfg.max_len)
    dev_data = _encode(dev, src_tok, tgt_tok, model_cfg.max_len)
    hashes = {"src": src_tok.fingerprint(), "tgt": tgt_tok.fingerprint()}
    resume = None
    ckpt_path = os.path.join(out_dir, "model.ckpt")
    if os.path.exists(ckpt_path):
        old = load_checkpoint(ckpt_path)
        if old.fingerprint == config_fingerprint(model_cfg, train_cfg, hashes):
            resume = old
    params = init_params(model_cfg, train_cfg.seed)
    os.makedirs(out_dir, exist_ok=True)
    src_tok.save(out_dir, "src")
    tgt_tok.save(out_dir, "tgt")
    result = train(params, model_cfg, data, dev_data, train_cfg, out_dir, hashes, resume)
    return ModelBundle(src_tok, tgt_tok, result.checkpoint)


def synthetic_pool(inputs: ExperimentInputs, cfg: ToolkitConfig, work_dir, size: int) -> Bitext:
    """Back-translate ``size`` monolingual lines, caching the pool in ``work_dir``."""
    src_path = os.path.join(work_dir, "synthetic.src")
    tgt_path = os.path.join(work_dir, "synthetic.tgt")
    with _locked(os.path.join(work_dir, ".pool.lock")):
        if os.path.exists(src_path):
            cached = load_bitext(src_path, tgt_path, "synthetic")
            if len(cached) >= size:
                pool = Bitext(
                    tuple(dataclasses.replace(p, origin=Origin.SYNTHETIC) for p in cached), "synthetic"
                )
                return pool[:size]
        if len(inputs.monolingual) < size:
            raise QuotaError(
                f"need {size} monolingual lines for back-translation but only {len(inputs.monolingual)} "
                f"are available (short by {size - len(inputs.monolingual)})"
            )
        base = dedup_pairs(clean_bitext(inputs.train))
        bundle = train_bundle(
            base.swapped("reverse"), inputs.dev.swapped("reverse-dev"), "subword", cfg,
            os.path.join(work_dir, "reverse"), reverse=True,
        )
        pool = backtranslate(inputs.monolingual, bundle, size, cfg.experiment.decode_batch_size)
        save_bitext(pool, src_path, tgt_path)
        return pool


def _score(bundle: ModelBundle, test: Bitext, hyp_path, batch_size: int) -> tuple[float, float]:
    if len(test) == 0:
        write_lines(hyp_path, [])
        return math.nan, math.nan
    hyps = bundle.translate(test.sources, batch_size)
    write_lines(hyp_path, hyps)
    rep = score_corpus(hyps, test.targets)
    return rep.bleu, rep.ribes


def run_experiment(
    grid: Sequence[ExperimentConfig],
    inputs: ExperimentInputs,
    cfg: ToolkitConfig,
    work_dir,
    results_path=None,
) -> list[ResultRow]:
    """Run every config in ``grid``, appending one results row each.

    Rows already recorded as ``ok`` under the same key are returned without
    retraining. A failing config is recorded with ``status=failed`` and the
    grid moves on.
    """
    os.makedirs(work_dir, exist_ok=True)
    results_path = results_path or os.path.join(work_dir, "results.csv")
    if not grid:
        return []
    data_fp = inputs.fingerprint()
    done = completed_rows(results_path)
    keys = {e: _row_key(e, cfg, data_fp) for e in grid}
    pending = [e for e in grid if keys[e] not in done]
    rows: dict[ExperimentConfig, ResultRow] = {e: done[keys[e]] for e in grid if keys[e] in done}
    if not pending:
        return [rows[e] for e in grid]

    with T.precision(cfg.experiment.precision):
        base = dedup_pairs(clean_bitext(inputs.train))
        dev = dedup_pairs(clean_bitext(inputs.dev))
        test = clean_bitext(inputs.test).with_name("test")

        src_vocab = build_word_vocab(base.sources, cfg.tokenizer.word_vocab_size)
        tgt_vocab = build_word_vocab(base.targets, cfg.tokenizer.word_vocab_size)
        set1, set2 = split_test_set(test, src_vocab, cfg.experiment.split_side, tgt_vocab)

        pool_error: DeskNMTError | None = None
        pool = Bitext((), "synthetic")
        plan_probe = BatchPlan(base, pool, cfg.batch.increments, cfg.batch.scale)
        need = max((plan_probe.quota(e.batch_level) for e in pending), default=0)
        if need:
            try:
                pool = synthetic_pool(inputs, cfg, work_dir, need)
                check_no_leak(pool, dev.with_name("dev"), test)
            except DeskNMTError as e:
                pool_error = e
        plan = BatchPlan(base, pool, cfg.batch.increments, cfg.batch.scale)

        for exp in pending:
            row = ResultRow(keys[exp], exp.model_id, exp.model_name, exp.tokenization, exp.batch_level,
                            seed=cfg.experiment.seed, set1_size=len(set1), set2_size=len(set2))
            try:
                if pool_error is not None and plan.quota(exp.batch_level) > 0:
                    raise pool_error
                train_data = assemble_batch(plan, exp.batch_level, cfg.experiment.seed if cfg.batch.shuffle else None)
                out = os.path.join(work_dir, "models", f"{exp.model_id:02d}-{exp.tokenization}-b{exp.batch_level}")
                bundle = train_bundle(train_data, dev, exp.tokenization, cfg, out)
                bs = cfg.experiment.decode_batch_size
                row.bleu_set1, row.ribes_set1 = _score(bundle, set1, os.path.join(out, "set1.hyp"), bs)
                row.bleu_set2, row.ribes_set2 = _score(bundle, set2, os.path.join(out, "set2.hyp"), bs)
                row.train_pairs = len(train_data)
                row.steps = bundle.checkpoint.step
                row.vocab_hash = hashlib.sha256(
                    (bundle.src.fingerprint() + bundle.tgt.fingerprint()).encode()
                ).hexdigest()[:16]
                row.checkpoint_fingerprint = bundle.checkpoint.fingerprint[:16]
            except Exception as e:  # noqa: BLE001  a failing row must not stop the grid
                log.error("config %d failed: %s", exp.model_id, e)
                log.debug("%s", traceback.format_exc())
                row.status = "failed"
                row.error = f"{type(e).__name__}: {e}".replace("\n", " ")
            append_result(results_path, row)
            rows[exp] = row
    return [rows[e] for e in grid]


# reporting

def _fmt(x: float, digits: int) -> str:
    return "n/a" if math.isnan(x) else f"{x:.{digits}f}"


def render_report(rows: Sequence[ResultRow]) -> str:
    """Word/subword Set-1 tables and the Set-2 comparison, BLEU x100."""
    latest: dict[tuple[str, int], ResultRow] = {}
    for r in rows:
        if r.status == "ok":
            latest[(r.tokenization, r.batch_level)] = r
    out = []
    for tok, title in (("word", "Word level tokenization (Set-1)"), ("subword", "Subword level tokenization (Set-1)")):
        sel = sorted((r for (t, _), r in latest.items() if t == tok), key=lambda r: r.model_id)
        out.append(f"## {title}\n")
        out.append("| Model ID | Model | BLEU | RIBES |")
        out.append("|---|---|---|---|")
        for r in sel:
            out.append(f"| {r.model_id} | {r.model} | {_fmt(100 * r.bleu_set1, 2)} | {_fmt(r.ribes_set1, 6)} |")
        out.append("")
    top = max((lv for (_, lv) in latest), default=None)
    out.append("## Set-2 comparison" + (f" (Batch {top})" if top else "") + "\n")
    out.append("| Tokenization | Model | BLEU | RIBES |")
    out.append("|---|---|---|---|")
    for tok in ("word", "subword"):
        r = latest.get((tok, top))
        if r is not None:
            out.append(f"| {tok} | {r.model} | {_fmt(100 * r.bleu_set2, 2)} | {_fmt(r.ribes_set2, 6)} |")
    failed = [r for r in rows if r.status != "ok" and (r.tokenization, r.batch_level) not in latest]
    if failed:
        out.append("\n## Failed configurations\n")
        for r in failed:
            out.append(f"- {r.model_id} {r.tokenization} level {r.batch_level}: {r.error}")
    return "\n".join(out) + "\n"
