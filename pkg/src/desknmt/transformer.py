"""Post-norm Transformer encoder-decoder built on :mod:`desknmt.tensor`.

Parameters are kept in a flat, ordered ``name -> Tensor`` mapping so the
optimizer, checkpointing and gradient checks can iterate over them without
knowing the architecture.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor
from .tokenizer import PAD

NEG_INF = -np.inf


@dataclass(frozen=True)
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    num_layers: int = 6
    d_model: int = 512
    num_heads: int = 8
    d_ff: int = 2048
    max_len: int = 256
    dropout_rate: float = 0.1
    ln_eps: float = 1e-6

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.d_model % self.num_heads:
            raise ConfigError(
                f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}"
            )
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even for sinusoidal positions, got {self.d_model}")
        if min(self.num_layers, self.d_model, self.d_ff, self.max_len) < 1:
            raise ConfigError("num_layers, d_model, d_ff and max_len must be positive")
        if self.src_vocab_size < 5 or self.tgt_vocab_size < 5:
            raise ConfigError("vocabularies need the four specials plus at least one token")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        # dropout does not change parameter shapes or semantics of a checkpoint
        d = self.to_dict()
        d.pop("dropout_rate")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)


def param_count(cfg: ModelConfig) -> int:
    """Closed-form number of scalars in :func:`init_params`.

    attention block: 4*d^2 + 3*d (query, value and output biases, no key
    bias); feed-forward: 2*d*d_ff + d_ff + d;
    layer norm: 2*d; encoder layer = attn + ff + 2 norms; decoder layer =
    2 attn + ff + 3 norms; plus both embeddings and the output projection.
    """
    d, f = cfg.d_model, cfg.d_ff
    attn = 4 * d * d + 3 * d
    ff = 2 * d * f + f + d
    ln = 2 * d
    enc = attn + ff + 2 * ln
    dec = 2 * attn + ff + 3 * ln
    emb = (cfg.src_vocab_size + cfg.tgt_vocab_size) * d
    out = d * cfg.tgt_vocab_size + cfg.tgt_vocab_size
    return emb + cfg.num_layers * (enc + dec) + out


class TransformerParams(dict):
    """Ordered ``name -> Tensor`` map with a few conveniences."""

    def tensors(self) -> list[Tensor]:
        return list(self.values())

    def count(self) -> int:
        return sum(t.size for t in self.values())

    def zero_grad(self) -> None:
        for t in self.values():
            t.zero_grad()

    def embedding_names(self) -> set[str]:
        return {"src_embed", "tgt_embed"}

    def copy(self) -> "TransformerParams":
        return TransformerParams(
            (k, Tensor(v.data.copy(), requires_grad=True, name=k)) for k, v in self.items()
        )

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}


def _linear_names(prefix: str, d_in: int, d_out: int):
    return [(f"{prefix}.w", (d_in, d_out)), (f"{prefix}.b", (d_out,))]


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = [("src_embed", (cfg.src_vocab_size, d)), ("tgt_embed", (cfg.tgt_vocab_size, d))]

    def attn(prefix):
        # no key bias: it shifts every score in a row equally, so softmax ignores it
        out = _linear_names(f"{prefix}.q", d, d) + [(f"{prefix}.k.w", (d, d))]
        for proj in ("v", "o"):
            out += _linear_names(f"{prefix}.{proj}", d, d)
        return out

    def ff(prefix):
        return _linear_names(f"{prefix}.ff1", d, f) + _linear_names(f"{prefix}.ff2", f, d)

    def ln(prefix):
        return [(f"{prefix}.gain", (d,)), (f"{prefix}.bias", (d,))]

    for i in range(cfg.num_layers):
        p = f"enc.{i}"
        shapes += attn(f"{p}.self") + ln(f"{p}.ln1") + ff(p) + ln(f"{p}.ln2")
    for i in range(cfg.num_layers):
        p = f"dec.{i}"
        shapes += attn(f"{p}.self") + ln(f"{p}.ln1")
        shapes += attn(f"{p}.cross") + ln(f"{p}.ln2")
        shapes += ff(p) + ln(f"{p}.ln3")
    shapes += _linear_names("out", d, cfg.tgt_vocab_size)
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> TransformerParams:
    """Glorot-uniform matrices, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    dtype = T.get_dtype()
    params = TransformerParams()
    for name, shape in param_shapes(cfg):
        if name.endswith(".gain"):
            arr = np.ones(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


@lru_cache(maxsize=16)
def _sinusoid(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((max_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    pe.setflags(write=False)
    return pe


def positional_encoding(max_len: int, d_model: int) -> Tensor:
    """Fixed sinusoids: sin at even dimensions, cos at odd, same angle per pair."""
    if d_model % 2:
        raise ConfigError(f"d_model must be even, got {d_model}")
    return Tensor(_sinusoid(max_len, d_model).copy())


def causal_mask(length: int) -> Tensor:
    m = np.zeros((length, length))
    m[np.triu_indices(length, k=1)] = NEG_INF
    return Tensor(m)


def padding_mask(ids) -> Tensor:
    """``-inf`` at PAD key positions, shaped ``[batch, 1, 1, len]``."""
    ids = np.asarray(ids)
    m = np.where(ids == PAD, NEG_INF, 0.0)
    return Tensor(m[:, None, None, :])


def _linear(x: Tensor, params, prefix: str) -> Tensor:
    y = T.matmul(x, params[f"{prefix}.w"])
    b = params.get(f"{prefix}.b")
    return y if b is None else T.add(y, b)


def multi_head_attention(
    query: Tensor,
    key: Tensor,
    value: Tensor,
    mask,
    params,
    num_heads: int,
    prefix: str = "",
    return_weights: bool = False,
):
    """Scaled dot-product attention over ``num_heads`` subspaces.

    ``mask`` is an additive array (or Tensor) broadcastable to
    ``[batch, heads, q_len, k_len]``; it is materialised as a constant.
    ``prefix`` selects ``{prefix}.q.w`` etc. inside ``params``.
    """
    if query.shape[-1] != key.shape[-1] or key.shape[:-1] != value.shape[:-1]:
        raise DimensionError(
            f"attention: query {query.shape}, key {key.shape}, value {value.shape}"
        )
    B, Tq, d = query.shape
    Tk = key.shape[1]
    if d % num_heads:
        raise DimensionError(f"d_model={d} not divisible by {num_heads} heads")
    dh = d // num_heads
    pre = f"{prefix}." if prefix else ""

    def heads(x, proj, n, perm):
        y = _linear(x, params, f"{pre}{proj}")
        return T.transpose(T.reshape(y, (B, n, num_heads, dh)), perm)

    q = heads(query, "q", Tq, (0, 2, 1, 3))
    k = heads(key, "k", Tk, (0, 2, 3, 1))
    v = heads(value, "v", Tk, (0, 2, 1, 3))
    scores = T.scale(T.matmul(q, k), 1.0 / math.sqrt(dh))
    if mask is not None:
        m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
        m = np.broadcast_to(m, scores.shape).astype(scores.data.dtype)
        scores = T.add(scores, Tensor(m))
    weights = T.softmax(scores)
    ctx = T.matmul(weights, v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, Tq, d))
    out = _linear(ctx, params, f"{pre}o")
    if return_weights:
        return out, weights
    return out


def _check_ids(ids: np.ndarray, vocab: int, cfg: ModelConfig, side: str) -> None:
    if ids.ndim != 2:
        raise DimensionError(f"{side} ids must be [batch, len], got shape {ids.shape}")
    if ids.shape[1] > cfg.max_len:
        raise DimensionError(
            f"{side} sequence length {ids.shape[1]} exceeds max_len={cfg.max_len}"
        )
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"{side} id out of range for vocabulary of {vocab}")


def _embed(ids: np.ndarray, table: Tensor, cfg: ModelConfig, rng) -> Tensor:
    x = T.scale(T.embedding_lookup(table, ids), math.sqrt(cfg.d_model))
    pe = _sinusoid(cfg.max_len, cfg.d_model)[: ids.shape[1]].astype(x.data.dtype)
    return T.dropout(T.add(x, Tensor(pe)), cfg.dropout_rate, rng)


def _sublayer(x: Tensor, y: Tensor, params, ln: str, cfg: ModelConfig, rng) -> Tensor:
    y = T.dropout(y, cfg.dropout_rate, rng)
    return T.layer_norm(T.add(x, y), params[f"{ln}.gain"], params[f"{ln}.bias"], cfg.ln_eps)


def _feed_forward(x: Tensor, params, prefix: str) -> Tensor:
    return _linear(T.relu(_linear(x, params, f"{prefix}.ff1")), params, f"{prefix}.ff2")


def encoder_forward(src_ids, params, cfg: ModelConfig, rng=None) -> Tensor:
    """Encoder states ``[batch, src_len, d_model]``; ``rng`` enables dropout."""
    ids = np.asarray(src_ids, dtype=np.int64)
    _check_ids(ids, cfg.src_vocab_size, cfg, "source")
    mask = padding_mask(ids).data
    x = _embed(ids, params["src_embed"], cfg, rng)
    for i in range(cfg.num_layers):
        p = f"enc.{i}"
        a = multi_head_attention(x, x, x, mask, params, cfg.num_heads, f"{p}.self")
        x = _sublayer(x, a, params, f"{p}.ln1", cfg, rng)
        x = _sublayer(x, _feed_forward(x, params, p), params, f"{p}.ln2", cfg, rng)
    return x


def decoder_forward(tgt_ids, memory: Tensor, src_ids, params, cfg: ModelConfig, rng=None) -> Tensor:
    """Next-token logits ``[batch, tgt_len, tgt_vocab]`` given encoder memory.

    ``src_ids`` supplies the source padding mask for cross-attention.
    """
    ids = np.asarray(tgt_ids, dtype=np.int64)
    _check_ids(ids, cfg.tgt_vocab_size, cfg, "target")
    src = np.asarray(src_ids, dtype=np.int64)
    if memory.shape[:2] != src.shape or memory.shape[0] != ids.shape[0]:
        raise DimensionError(
            f"memory {memory.shape} does not match source {src.shape} / target {ids.shape}"
        )
    L = ids.shape[1]
    self_mask = causal_mask(L).data[None, None] + padding_mask(ids).data
    cross_mask = padding_mask(src).data
    x = _embed(ids, params["tgt_embed"], cfg, rng)
    for i in range(cfg.num_layers):
        p = f"dec.{i}"
        a = multi_head_attention(x, x, x, self_mask, params, cfg.num_heads, f"{p}.self")
        x = _sublayer(x, a, params, f"{p}.ln1", cfg, rng)
        c = multi_head_attention(x, memory, memory, cross_mask, params, cfg.num_heads, f"{p}.cross")
        x = _sublayer(x, c, params, f"{p}.ln2", cfg, rng)
        x = _sublayer(x, _feed_forward(x, params, p), params, f"{p}.ln3", cfg, rng)
    return _linear(x, params, "out")


def forward(src_ids, tgt_in, params, cfg: ModelConfig, rng=None) -> Tensor:
    memory = encoder_forward(src_ids, params, cfg, rng)
    return decoder_forward(tgt_in, memory, src_ids, params, cfg, rng)


def sequence_loss(
    src_ids,
    tgt_ids,
    params,
    cfg: ModelConfig,
    rng=None,
    denominator: float | None = None,
    label_smoothing: float = 0.0,
) -> Tensor:
    """Teacher-forced cross-entropy: feed ``tgt[:, :-1]``, predict ``tgt[:, 1:]``."""
    tgt = np.asarray(tgt_ids, dtype=np.int64)
    logits = forward(src_ids, tgt[:, :-1], params, cfg, rng)
    return T.cross_entropy(
        logits,
        tgt[:, 1:],
        ignore_id=PAD,
        denominator=denominator,
        label_smoothing=label_smoothing,
    )
