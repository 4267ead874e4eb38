"""Mini-batch training with gradient accumulation and lazy Adam.

One optimizer step consumes ``effective_batch_size // micro_batch_size``
micro-batches. Their losses share a single normaliser (the number of
non-PAD target tokens in the whole effective batch), so accumulated
gradients equal the gradient of one big batch.

All randomness is derived from ``seed``: batch order from ``(seed, epoch)``
and dropout masks from ``(seed, step, micro_index)``. A checkpoint records
the batch cursor, so resuming replays exactly the uninterrupted run.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, IntegrityError, TrainingError
from .tensor import Tensor
from .tokenizer import PAD
from .transformer import ModelConfig, TransformerParams, sequence_loss

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DNMTCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    micro_batch_size: int = 64
    effective_batch_size: int = 384
    max_steps: int = 70_000
    lr_scale: float = 2.0
    warmup_steps: int = 4000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-9
    label_smoothing: float = 0.0
    lazy_embeddings: bool = True
    seed: int = 0
    checkpoint_every: int = 0
    eval_every: int = 500
    patience: int = 5

    def __post_init__(self):
        if self.micro_batch_size < 1 or self.effective_batch_size < 1:
            raise ConfigError("batch sizes must be positive")
        if self.effective_batch_size % self.micro_batch_size:
            raise ConfigError(
                f"effective_batch_size={self.effective_batch_size} is not a multiple "
                f"of micro_batch_size={self.micro_batch_size}"
            )
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must lie in [0, 1)")

    @property
    def accumulation(self) -> int:
        return self.effective_batch_size // self.micro_batch_size

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def optimization_key(self) -> dict:
        """Fields that change the trajectory; stop criteria are excluded."""
        d = self.to_dict()
        for k in ("max_steps", "checkpoint_every", "eval_every", "patience"):
            d.pop(k)
        return d


@dataclass(frozen=True)
class NoamSchedule:
    d_model: int
    warmup_steps: int = 4000
    scale: float = 1.0

    def __call__(self, step: int) -> float:
        return lr_at(step, self)


def lr_at(step: int, schedule: NoamSchedule) -> float:
    """``scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)``."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return (
        schedule.scale
        * schedule.d_model ** -0.5
        * min(step ** -0.5, step * schedule.warmup_steps ** -1.5)
    )


@dataclass
class Batch:
    src: np.ndarray
    tgt: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def target_tokens(self) -> int:
        return int((self.tgt[:, 1:] != PAD).sum())


def pad_batch(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def make_batches(data, micro_batch_size: int, seed: int, epoch: int = 0) -> list[Batch]:
    """One epoch of padded micro-batches in a seed-determined order."""
    if not data:
        raise ValueError("cannot batch an empty dataset")
    order = _epoch_order(len(data), seed, epoch)
    batches = []
    for start in range(0, len(order), micro_batch_size):
        idx = order[start : start + micro_batch_size]
        batches.append(
            Batch(pad_batch([data[i][0] for i in idx]), pad_batch([data[i][1] for i in idx]), idx)
        )
    return batches


class BatchStream:
    """Endless epoch-after-epoch micro-batch iterator with a resumable cursor."""

    def __init__(self, data, micro_batch_size: int, seed: int, cursor: tuple[int, int] = (0, 0)):
        if not data:
            raise ValueError("cannot batch an empty dataset")
        self.data = data
        self.size = micro_batch_size
        self.seed = seed
        self.epoch, self.pos = cursor
        self._order = _epoch_order(len(data), seed, self.epoch)

    @property
    def cursor(self) -> tuple[int, int]:
        return (self.epoch, self.pos)

    def __iter__(self) -> Iterator[Batch]:
        return self

    def __next__(self) -> Batch:
        if self.pos >= len(self.data):
            self.epoch += 1
            self.pos = 0
            self._order = _epoch_order(len(self.data), self.seed, self.epoch)
        idx = self._order[self.pos : self.pos + self.size]
        self.pos += len(idx)
        return Batch(
            pad_batch([self.data[i][0] for i in idx]),
            pad_batch([self.data[i][1] for i in idx]),
            idx,
        )


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def fresh(cls, params) -> "OptimizerState":
        return cls(
            {k: np.zeros_like(p.data) for k, p in params.items()},
            {k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(
    params,
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-9,
    lazy: Sequence[str] = ("src_embed", "tgt_embed"),
) -> OptimizerState:
    """In-place Adam update with bias correction.

    Tables named in ``lazy`` only update rows whose gradient is non-zero;
    untouched rows keep both their values and their moments.
    """
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m, v = state.m[name], state.v[name]
        if name in lazy:
            rows = np.flatnonzero(np.any(g != 0, axis=1))
            if rows.size == 0:
                continue
            gr = g[rows]
            m[rows] = beta1 * m[rows] + (1.0 - beta1) * gr
            v[rows] = beta2 * v[rows] + (1.0 - beta2) * gr * gr
            p.data[rows] -= lr * (m[rows] / c1) / (np.sqrt(v[rows] / c2) + eps)
        else:
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    state.step = t
    return state


@dataclass
class HistoryRow:
    step: int
    train_loss: float
    dev_loss: float | None
    lr: float


@dataclass
class Checkpoint:
    params: TransformerParams
    state: OptimizerState
    step: int
    model_config: ModelConfig
    train_config: TrainConfig
    fingerprint: str
    vocab_hashes: dict[str, str] = field(default_factory=dict)
    cursor: tuple[int, int] = (0, 0)
    best_dev: float | None = None
    bad_evals: int = 0
    history: list[HistoryRow] = field(default_factory=list)


@dataclass
class TrainResult:
    params: TransformerParams
    state: OptimizerState
    history: list[HistoryRow]
    step: int
    stop_reason: str
    checkpoint: Checkpoint | None = None


def config_fingerprint(model_cfg: ModelConfig, train_cfg: TrainConfig, vocab_hashes: dict) -> str:
    blob = json.dumps(
        {
            "model": model_cfg.fingerprint(),
            "train": train_cfg.optimization_key(),
            "vocab": dict(sorted(vocab_hashes.items())),
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()


def evaluate_loss(params, model_cfg: ModelConfig, data, batch_size: int = 64) -> float:
    """Token-mean cross-entropy over ``data`` with dropout off."""
    if not data:
        return float("nan")
    total_tokens = sum(sum(1 for t in tgt[1:] if t != PAD) for _, tgt in data)
    loss = 0.0
    with T.no_grad():
        for start in range(0, len(data), batch_size):
            chunk = data[start : start + batch_size]
            src = pad_batch([s for s, _ in chunk])
            tgt = pad_batch([t for _, t in chunk])
            loss += sequence_loss(src, tgt, params, model_cfg, denominator=total_tokens).item()
    return loss


def train(
    params: TransformerParams,
    model_cfg: ModelConfig,
    data,
    dev,
    cfg: TrainConfig,
    out_dir: str | os.PathLike | None = None,
    vocab_hashes: dict[str, str] | None = None,
    resume: Checkpoint | None = None,
) -> TrainResult:
    """Train ``params`` in place on tokenized ``(src_ids, tgt_ids)`` pairs.

    Stops at ``cfg.max_steps`` or once dev loss has not improved for
    ``cfg.patience`` consecutive evaluations. With ``out_dir``, writes
    ``history.csv`` and, every ``checkpoint_every`` steps and at the end,
    ``model.ckpt``.
    """
    vocab_hashes = dict(vocab_hashes or {})
    fp = config_fingerprint(model_cfg, cfg, vocab_hashes)
    sched = NoamSchedule(model_cfg.d_model, cfg.warmup_steps, cfg.lr_scale)
    lazy = ("src_embed", "tgt_embed") if cfg.lazy_embeddings else ()

    if resume is not None:
        if resume.fingerprint != fp:
            raise ConfigError("checkpoint fingerprint does not match this configuration")
        for k, p in params.items():
            p.data[...] = resume.params[k].data
        state = resume.state
        step = resume.step
        cursor = resume.cursor
        best_dev, bad = resume.best_dev, resume.bad_evals
        history = list(resume.history)
    else:
        state = OptimizerState.fresh(params)
        step, cursor, best_dev, bad, history = 0, (0, 0), None, 0, []

    stream = BatchStream(data, cfg.micro_batch_size, cfg.seed, cursor)
    stop_reason = "max_steps"

    def snapshot() -> Checkpoint:
        return Checkpoint(
            params, state, step, model_cfg, cfg, fp, vocab_hashes,
            stream.cursor, best_dev, bad, list(history),
        )

    while step < cfg.max_steps:
        micro = [next(stream) for _ in range(cfg.accumulation)]
        ntok = sum(b.target_tokens for b in micro)
        params.zero_grad()
        train_loss = 0.0
        for k, b in enumerate(micro):
            rng = np.random.default_rng([cfg.seed, step, k]) if model_cfg.dropout_rate > 0 else None
            with T.Tape():
                loss = sequence_loss(
                    b.src, b.tgt, params, model_cfg, rng,
                    denominator=ntok, label_smoothing=cfg.label_smoothing,
                )
                T.backward(loss)
            train_loss += loss.item()
        if not math.isfinite(train_loss):
            if out_dir is not None:
                save_checkpoint(snapshot(), os.path.join(out_dir, "diagnostic.ckpt"))
            raise TrainingError(f"non-finite training loss {train_loss} at step {step + 1}")
        lr = lr_at(step + 1, sched)
        adam_step(params, state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, lazy)
        step += 1

        dev_loss = None
        if dev and cfg.eval_every > 0 and step % cfg.eval_every == 0:
            dev_loss = evaluate_loss(params, model_cfg, dev, cfg.micro_batch_size)
            if best_dev is None or dev_loss < best_dev:
                best_dev, bad = dev_loss, 0
            else:
                bad += 1
        history.append(HistoryRow(step, train_loss, dev_loss, lr))
        if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(snapshot(), os.path.join(out_dir, "model.ckpt"))
        if dev_loss is not None and bad >= cfg.patience:
            stop_reason = "early_stop"
            break

    ckpt = snapshot()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(ckpt, os.path.join(out_dir, "model.ckpt"))
        write_history(history, os.path.join(out_dir, "history.csv"))
    log.info("training stopped after %d steps (%s)", step, stop_reason)
    return TrainResult(params, state, history, step, stop_reason, ckpt)


def write_history(history: Sequence[HistoryRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "train_loss", "dev_loss", "lr"])
        for r in history:
            w.writerow([r.step, repr(r.train_loss), "" if r.dev_loss is None else repr(r.dev_loss), repr(r.lr)])


def read_history(path) -> list[HistoryRow]:
    with open(path, newline="", encoding="utf-8") as f:
        return [
            HistoryRow(
                int(r["step"]),
                float(r["train_loss"]),
                float(r["dev_loss"]) if r["dev_loss"] else None,
                float(r["lr"]),
            )
            for r in csv.DictReader(f)
        ]


# Checkpoint file layout (little endian):
#   8 bytes   magic "DNMTCKPT"
#   4 bytes   uint32 format version
#   8 bytes   uint64 header length H
#   H bytes   UTF-8 JSON header (configs, step, cursor, array index)
#   ...       raw C-order array payload, in header index order
#   32 bytes  SHA-256 of everything above


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays: list[tuple[str, str, np.ndarray]] = []
    for k, p in ckpt.params.items():
        arrays.append(("param", k, p.data))
    for k in ckpt.params:
        arrays.append(("m", k, ckpt.state.m[k]))
        arrays.append(("v", k, ckpt.state.v[k]))
    index, offset = [], 0
    for group, name, arr in arrays:
        nbytes = arr.nbytes
        index.append(
            {"group": group, "name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
             "offset": offset, "nbytes": nbytes}
        )
        offset += nbytes
    header = {
        "step": ckpt.step,
        "opt_step": ckpt.state.step,
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "fingerprint": ckpt.fingerprint,
        "vocab_hashes": ckpt.vocab_hashes,
        "cursor": list(ckpt.cursor),
        "best_dev": ckpt.best_dev,
        "bad_evals": ckpt.bad_evals,
        "history": [dataclasses.astuple(r) for r in ckpt.history],
        "arrays": index,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    h = hashlib.sha256()
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as f:
        for chunk in (
            CHECKPOINT_MAGIC,
            struct.pack("<I", CHECKPOINT_VERSION),
            struct.pack("<Q", len(hbytes)),
            hbytes,
        ):
            f.write(chunk)
            h.update(chunk)
        for _, _, arr in arrays:
            b = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
            f.write(b)
            h.update(b)
        f.write(h.digest())
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 52 or blob[:8] != CHECKPOINT_MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch, file is corrupt")
    (version,) = struct.unpack("<I", body[8:12])
    if version != CHECKPOINT_VERSION:
        raise IntegrityError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", body[12:20])
    header = json.loads(body[20 : 20 + hlen].decode("utf-8"))
    payload = memoryview(body)[20 + hlen :]
    params = TransformerParams()
    m, v = {}, {}
    for e in header["arrays"]:
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
        if e["group"] == "param":
            params[e["name"]] = Tensor(arr, requires_grad=True, name=e["name"], dtype=arr.dtype)
        elif e["group"] == "m":
            m[e["name"]] = arr
        else:
            v[e["name"]] = arr
    return Checkpoint(
        params=params,
        state=OptimizerState(m, v, header["opt_step"]),
        step=header["step"],
        model_config=ModelConfig(**header["model_config"]),
        train_config=TrainConfig(**header["train_config"]),
        fingerprint=header["fingerprint"],
        vocab_hashes=header["vocab_hashes"],
        cursor=tuple(header["cursor"]),
        best_dev=header["best_dev"],
        bad_evals=header["bad_evals"],
        history=[HistoryRow(*r) for r in header["history"]],
    )
