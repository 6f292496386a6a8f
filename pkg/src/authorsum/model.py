"""Desk-scale encoder-decoder transformer with author-token conditioning.

Pre-norm residual blocks, sinusoidal positions, output projection tied to
the token embedding table (author rows included). Training goes through the
autodiff graph; greedy generation uses a cached pure-numpy path.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .seeding import make_rng
from .text import BOS, EOS, PAD, AuthorRegistry, PrefixMode, Vocab, apply_prefix

NEG_INF = -1e9
INIT_STD = 0.02


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    d_ff: int = 128
    max_src_len: int = 256
    max_tgt_len: int = 64
    vocab_size: int = 0
    prefix_mode: PrefixMode = PrefixMode.BASE
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.prefix_mode = PrefixMode(self.prefix_mode)

    def validate(self) -> None:
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.max_src_len < 2 or self.max_tgt_len < 2:
            raise ValueError("sequence length limits must be >= 2")
        if self.vocab_size <= 4:
            raise ValueError("vocab_size must exceed the 4 special tokens")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prefix_mode"] = self.prefix_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = [("embed", (cfg.vocab_size, d), "normal")]

    def ln(prefix):
        return [(f"{prefix}.g", (d,), "ones"), (f"{prefix}.b", (d,), "zeros")]

    def attn(prefix):
        return [(f"{prefix}.{w}", (d, d), "normal") for w in ("wq", "wk", "wv", "wo")]

    def ff(prefix):
        return [(f"{prefix}.w1", (d, f), "normal"), (f"{prefix}.b1", (f,), "zeros"),
                (f"{prefix}.w2", (f, d), "normal"), (f"{prefix}.b2", (d,), "zeros")]

    for layer in range(cfg.enc_layers):
        p = f"enc.{layer}"
        shapes += ln(f"{p}.ln1") + attn(f"{p}.self") + ln(f"{p}.ln2") + ff(f"{p}.ff")
    shapes += ln("enc.ln_f")
    for layer in range(cfg.dec_layers):
        p = f"dec.{layer}"
        shapes += (ln(f"{p}.ln1") + attn(f"{p}.self") + ln(f"{p}.ln2") + attn(f"{p}.cross")
                   + ln(f"{p}.ln3") + ff(f"{p}.ff"))
    shapes += ln("dec.ln_f")
    return shapes


class Seq2SeqModel:
    def __init__(self, config: ModelConfig, vocab: Vocab, params: "OrderedDict[str, Tensor]"):
        self.config = config
        self.vocab = vocab
        self.params = params
        self._pe = sinusoidal_positions(max(config.max_src_len, config.max_tgt_len) + 2, config.d_model)

    @property
    def mode(self) -> PrefixMode:
        return self.config.prefix_mode

    @property
    def registry(self) -> AuthorRegistry:
        return AuthorRegistry.from_vocab(self.vocab)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def positions(self, n: int) -> np.ndarray:
        if n > len(self._pe):
            self._pe = sinusoidal_positions(n, self.config.d_model)
        return self._pe[:n]

    def add_embedding_row(self, row: np.ndarray) -> int:
        emb = self.params["embed"]
        emb.data = np.vstack([emb.data, row[None, :]])
        emb.grad = None
        self.config.vocab_size = emb.shape[0]
        return emb.shape[0] - 1


def init_model(config: ModelConfig, vocab: Vocab) -> Seq2SeqModel:
    """Fresh model with N(0, 0.02^2) weights, one derived stream per parameter."""
    if config.vocab_size != vocab.size:
        raise ValueError(f"config vocab_size {config.vocab_size} != vocabulary size {vocab.size}")
    config.validate()
    params: OrderedDict[str, Tensor] = OrderedDict()
    for name, shape, kind in _param_shapes(config):
        if kind == "normal":
            data = make_rng(config.seed, "init", name).standard_normal(shape) * INIT_STD
        elif kind == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return Seq2SeqModel(config, vocab, params)


# ---------------------------------------------------------------- sequence prep

def prepare_pair(model: Seq2SeqModel, src: Sequence[int], tgt: Sequence[int],
                 author_tok: int | None) -> tuple[list[int], list[int]]:
    """Apply the model's prefix mode, then truncate (source tail first, author prefix kept)."""
    cfg = model.config
    if cfg.prefix_mode is PrefixMode.BASE:
        author_tok = None
    src, tgt = apply_prefix(cfg.prefix_mode, author_tok, src, tgt, check=False)
    src = src[: cfg.max_src_len]
    if len(tgt) > cfg.max_tgt_len:
        tgt = tgt[: cfg.max_tgt_len - 1] + [EOS]
    return src, tgt


def pad_batch(seqs: Sequence[Sequence[int]], min_len: int = 1) -> np.ndarray:
    n = max([min_len] + [len(s) for s in seqs])
    out = np.full((len(seqs), n), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


# ---------------------------------------------------------------- graph forward

class _Ctx:
    def __init__(self, training: bool, rng: np.random.Generator | None, p: float):
        self.training, self.rng, self.p = training, rng, p

    def drop(self, x: Tensor) -> Tensor:
        return ag.dropout(x, self.p, self.rng, self.training)


def _ln(model, x, prefix):
    return ag.layer_norm(x, model[f"{prefix}.g"], model[f"{prefix}.b"])


def _attention(model, prefix, xq: Tensor, xkv: Tensor, mask: np.ndarray) -> Tensor:
    cfg = model.config
    h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    b, tq, _ = xq.shape
    tk = xkv.shape[1]

    def heads(x, n):
        return ag.transpose(ag.reshape(x, (b, n, h, dh)), (0, 2, 1, 3))

    q = heads(xq @ model[f"{prefix}.wq"], tq)
    k = heads(xkv @ model[f"{prefix}.wk"], tk)
    v = heads(xkv @ model[f"{prefix}.wv"], tk)
    scores = ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh)) + mask
    out = ag.matmul(ag.softmax(scores), v)
    out = ag.reshape(ag.transpose(out, (0, 2, 1, 3)), (b, tq, cfg.d_model))
    return out @ model[f"{prefix}.wo"]


def _ff(model, prefix, x: Tensor) -> Tensor:
    hidden = ag.relu(x @ model[f"{prefix}.w1"] + model[f"{prefix}.b1"])
    return hidden @ model[f"{prefix}.w2"] + model[f"{prefix}.b2"]


def _embed(model, ids: np.ndarray, ctx: _Ctx) -> Tensor:
    scale = math.sqrt(model.config.d_model)
    x = ag.embedding(model["embed"], ids) * scale + model.positions(ids.shape[1])[None]
    return ctx.drop(x)


def key_mask(ids: np.ndarray) -> np.ndarray:
    """Additive mask [B,1,1,S] hiding PAD keys."""
    return np.where(ids == PAD, NEG_INF, 0.0)[:, None, None, :]


def causal_mask(t: int) -> np.ndarray:
    return np.triu(np.full((t, t), NEG_INF), k=1)[None, None]


def encode(model: Seq2SeqModel, src: np.ndarray, ctx: _Ctx) -> Tensor:
    mask = key_mask(src)
    x = _embed(model, src, ctx)
    for layer in range(model.config.enc_layers):
        p = f"enc.{layer}"
        h = _ln(model, x, f"{p}.ln1")
        x = x + ctx.drop(_attention(model, f"{p}.self", h, h, mask))
        x = x + ctx.drop(_ff(model, f"{p}.ff", _ln(model, x, f"{p}.ln2")))
    return _ln(model, x, "enc.ln_f")


def decode(model: Seq2SeqModel, tgt_in: np.ndarray, memory: Tensor, src: np.ndarray, ctx: _Ctx) -> Tensor:
    self_mask = causal_mask(tgt_in.shape[1]) + key_mask(tgt_in)
    cross_mask = key_mask(src)
    x = _embed(model, tgt_in, ctx)
    for layer in range(model.config.dec_layers):
        p = f"dec.{layer}"
        h = _ln(model, x, f"{p}.ln1")
        x = x + ctx.drop(_attention(model, f"{p}.self", h, h, self_mask))
        x = x + ctx.drop(_attention(model, f"{p}.cross", _ln(model, x, f"{p}.ln2"), memory, cross_mask))
        x = x + ctx.drop(_ff(model, f"{p}.ff", _ln(model, x, f"{p}.ln3")))
    x = _ln(model, x, "dec.ln_f")
    return ag.matmul(x, ag.transpose(model["embed"], (1, 0)))


def batch_logits(model: Seq2SeqModel, src: np.ndarray, tgt: np.ndarray, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
    """Teacher-forced logits for predicting ``tgt[:, 1:]`` from ``tgt[:, :-1]``."""
    ctx = _Ctx(training, rng, model.config.dropout)
    memory = encode(model, src, ctx)
    return decode(model, tgt[:, :-1], memory, src, ctx)


def batch_loss(model: Seq2SeqModel, srcs: Sequence[Sequence[int]], tgts: Sequence[Sequence[int]],
               training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Token-mean cross-entropy over a batch of already-prefixed pairs."""
    if any(len(t) < 2 for t in tgts):
        raise ValueError("empty target")
    src = pad_batch(srcs)
    tgt = pad_batch(tgts, min_len=2)
    logits = batch_logits(model, src, tgt, training, rng)
    return ag.cross_entropy(logits, tgt[:, 1:], ignore_index=PAD)


def forward_loss(model: Seq2SeqModel, src: Sequence[int], tgt: Sequence[int]) -> Tensor:
    """Teacher-forced loss for one prefixed pair (no dropout)."""
    if len(tgt) == 0:
        raise ValueError("empty target")
    cfg = model.config
    src = list(src)[: cfg.max_src_len]
    tgt = list(tgt)
    if len(tgt) > cfg.max_tgt_len:
        tgt = tgt[: cfg.max_tgt_len - 1] + [EOS]
    return batch_loss(model, [src], [tgt])


# ---------------------------------------------------------------- greedy decoding

def _np_ln(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    return xc / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps) * g + b


def _np_softmax(x):
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


class _Decoder:
    """Incremental decoder state with per-layer key/value caches."""

    def __init__(self, model: Seq2SeqModel, src: np.ndarray):
        self.m = {k: v.data for k, v in model.params.items()}
        self.cfg = model.config
        self.model = model
        with ag.no_grad():
            self.memory = encode(model, src, _Ctx(False, None, 0.0)).data
        self.cross_mask = key_mask(src)
        b = src.shape[0]
        self.cross_kv = [(self._split(self.memory @ self.m[f"dec.{i}.cross.wk"]),
                          self._split(self.memory @ self.m[f"dec.{i}.cross.wv"]))
                         for i in range(self.cfg.dec_layers)]
        self.self_k = [np.zeros((b, self.cfg.n_heads, 0, self.cfg.d_model // self.cfg.n_heads))
                       for _ in range(self.cfg.dec_layers)]
        self.self_v = [k.copy() for k in self.self_k]
        self.t = 0

    def _split(self, x):
        b, n, _ = x.shape
        h = self.cfg.n_heads
        return x.reshape(b, n, h, -1).transpose(0, 2, 1, 3)

    def _attend(self, q, k, v, mask):
        dh = q.shape[-1]
        s = q @ np.swapaxes(k, -1, -2) * (1.0 / math.sqrt(dh))
        if mask is not None:
            s = s + mask
        out = _np_softmax(s) @ v
        b, _, n, _ = out.shape
        return out.transpose(0, 2, 1, 3).reshape(b, n, -1)

    def step(self, tokens: np.ndarray) -> np.ndarray:
        """Feed one token per sequence; return next-token logits [B, V]."""
        m = self.m
        scale = math.sqrt(self.cfg.d_model)
        x = m["embed"][tokens][:, None, :] * scale + self.model.positions(self.t + 1)[self.t][None, None]
        for i in range(self.cfg.dec_layers):
            p = f"dec.{i}"
            h = _np_ln(x, m[f"{p}.ln1.g"], m[f"{p}.ln1.b"])
            self.self_k[i] = np.concatenate([self.self_k[i], self._split(h @ m[f"{p}.self.wk"])], axis=2)
            self.self_v[i] = np.concatenate([self.self_v[i], self._split(h @ m[f"{p}.self.wv"])], axis=2)
            q = self._split(h @ m[f"{p}.self.wq"])
            x = x + self._attend(q, self.self_k[i], self.self_v[i], None) @ m[f"{p}.self.wo"]
            h = _np_ln(x, m[f"{p}.ln2.g"], m[f"{p}.ln2.b"])
            q = self._split(h @ m[f"{p}.cross.wq"])
            ck, cv = self.cross_kv[i]
            x = x + self._attend(q, ck, cv, self.cross_mask) @ m[f"{p}.cross.wo"]
            h = _np_ln(x, m[f"{p}.ln3.g"], m[f"{p}.ln3.b"])
            x = x + np.maximum(h @ m[f"{p}.ff.w1"] + m[f"{p}.ff.b1"], 0.0) @ m[f"{p}.ff.w2"] + m[f"{p}.ff.b2"]
        x = _np_ln(x, m["dec.ln_f.g"], m["dec.ln_f.b"])
        self.t += 1
        return x[:, 0, :] @ m["embed"].T


def _check_author(model: Seq2SeqModel, author_tok: int | None) -> None:
    if model.mode is PrefixMode.BASE:
        if author_tok is not None:
            raise ValueError("BASE model takes no author token")
    elif author_tok is None:
        raise ValueError(f"{model.mode.value} model needs an author token")
    elif not (0 <= author_tok < model.vocab.size and model.vocab.is_author(author_tok)):
        raise ValueError(f"id {author_tok} is not an author token")


def generate_batch(model: Seq2SeqModel, srcs: Sequence[Sequence[int]], author_tok: int | None) -> list[list[int]]:
    """Greedy decoding for several sources with one shared author token.

    Argmax ties resolve to the lowest id. Output excludes BOS, EOS and
    author tokens; at most ``max_tgt_len`` tokens are emitted per source.
    """
    _check_author(model, author_tok)
    if not srcs:
        return []
    mode, cfg = model.mode, model.config
    prepared = [prepare_pair(model, s, [BOS, EOS], author_tok)[0] for s in srcs]
    src = pad_batch(prepared)
    dec = _Decoder(model, src)
    b = len(prepared)
    logits = dec.step(np.full(b, BOS, dtype=np.int64))
    if mode.uses_decoder:
        logits = dec.step(np.full(b, author_tok, dtype=np.int64))
    out: list[list[int]] = [[] for _ in range(b)]
    done = np.zeros(b, dtype=bool)
    for _ in range(cfg.max_tgt_len):
        nxt = np.argmax(logits, axis=-1)
        for i in np.flatnonzero(~done):
            if nxt[i] == EOS:
                done[i] = True
            else:
                out[i].append(int(nxt[i]))
        if done.all():
            break
        logits = dec.step(nxt)
    vocab = model.vocab
    return [[t for t in seq if t not in (BOS, EOS, PAD) and not vocab.is_author(t)] for seq in out]


def generate_greedy(model: Seq2SeqModel, src: Sequence[int], author_tok: int | None) -> list[int]:
    return generate_batch(model, [src], author_tok)[0]


# ---------------------------------------------------------------- training

@dataclass
class TrainLog:
    epoch_loss: list[float] = field(default_factory=list)
    steps: int = 0


def train_model(model: Seq2SeqModel, dataset: Sequence[tuple[Sequence[int], Sequence[int], str | None]],
                epochs: int, batch_size: int, optimizer: ag.Adam | None = None,
                lr: float = 1e-3, warmup: int = 100, registry: AuthorRegistry | None = None,
                seed: int | None = None, log_fn=None) -> TrainLog:
    """Teacher-forced training with seeded per-epoch shuffles.

    ``dataset`` holds (source ids, target ids with BOS/EOS, author name).
    Author names are resolved through ``registry`` and never read in BASE mode.
    """
    mode = model.mode
    seed = model.config.seed if seed is None else seed
    registry = registry if registry is not None else model.registry
    prepared = []
    for src, tgt, author in dataset:
        tok = None
        if mode is not PrefixMode.BASE:
            if author not in registry:
                raise ValueError(f"unregistered author: {author}")
            tok = registry.token(author)
        prepared.append(prepare_pair(model, src, tgt, tok))
    optimizer = optimizer or ag.Adam(model.parameters(), lr=lr)
    base_lr = optimizer.lr
    log = TrainLog()
    drop_rng = make_rng(seed, "dropout")
    for epoch in range(epochs):
        order = make_rng(seed, "shuffle", str(epoch)).permutation(len(prepared))
        losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            loss = batch_loss(model, [prepared[i][0] for i in idx], [prepared[i][1] for i in idx],
                              training=True, rng=drop_rng)
            ag.backward(loss)
            log.steps += 1
            optimizer.lr = base_lr * min(1.0, log.steps / warmup) if warmup else base_lr
            optimizer.step()
            losses.append(loss.item())
        optimizer.lr = base_lr
        log.epoch_loss.append(float(np.mean(losses)) if losses else float("nan"))
        if log_fn is not None:
            log_fn(epoch, log.epoch_loss[-1])
    return log
