"""Bidirectional transformer encoder-decoder and CNN style classifier."""

from __future__ import annotations

import contextlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import BOS_ID, EOS_ID, PAD_ID, UNK_ID, Vocabulary, direction_token, pad_batch
from .tensor import Tensor

PARAMS_VERSION = 1


class OverlengthError(ValueError):
    pass


class SimplexError(ValueError):
    pass


@dataclass
class Seq2SeqConfig:
    vocab_size: int
    embed_dim: int = 256
    ffn_dim: int = 1024
    layers: int = 2
    heads: int = 4
    max_len: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "ffn_dim", "layers", "heads", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")


@dataclass
class ClassifierConfig:
    vocab_size: int
    embed_dim: int = 128
    filter_sizes: tuple = (3, 4, 5)
    filters_per_size: int = 100
    dropout: float = 0.5
    num_classes: int = 2

    def __post_init__(self):
        self.filter_sizes = tuple(int(k) for k in self.filter_sizes)
        if not self.filter_sizes or min(self.filter_sizes) < 1 or len(set(self.filter_sizes)) != len(self.filter_sizes):
            raise ValueError(f"filter sizes must be positive and distinct: {self.filter_sizes}")
        if min(self.vocab_size, self.embed_dim, self.filters_per_size, self.num_classes) < 1:
            raise ValueError("classifier dimensions must be >= 1")


@dataclass(frozen=True)
class Direction:
    target_style: str
    token: str

    @classmethod
    def to(cls, style: str) -> "Direction":
        return cls(style, direction_token(style))

    def id(self, vocab: Vocabulary) -> int:
        return vocab.direction_id(self.target_style)


class ModelParams(dict):
    """Ordered name -> Tensor map; insertion order is the serialisation order."""

    def __init__(self, *args, version: int = PARAMS_VERSION, **kw):
        super().__init__(*args, **kw)
        self.version = version

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}


def _xavier(rng, fan_in, fan_out, shape=None):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out))


def sinusoidal_positions(n: int, dim: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class Encoded:
    states: Tensor  # (B, S, d)
    valid: np.ndarray  # (B, S) bool


@dataclass
class SoftDecoded:
    dists: Tensor  # (B, steps, V)
    lengths: np.ndarray  # tokens before the first argmax <eos>
    logits: list = field(default_factory=list)


class Seq2Seq:
    """Shared encoder-decoder for both directions; the direction token is prepended to the source."""

    def __init__(self, config: Seq2SeqConfig, params: ModelParams | None = None, seed: int = 0):
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.training = False
        self.params = params if params is not None else self._init_params(np.random.default_rng(seed))
        dtype = self.params["embed"].dtype
        self._pos = sinusoidal_positions(config.max_len + 2, config.embed_dim).astype(dtype)

    def _init_params(self, rng) -> ModelParams:
        c = self.config
        d, f = c.embed_dim, c.ffn_dim
        dt = T.default_dtype()
        p = ModelParams()

        def add(name, arr):
            p[name] = Tensor(np.asarray(arr, dtype=dt), requires_grad=True)

        add("embed", rng.normal(0.0, d**-0.5, size=(c.vocab_size, d)))
        for side in ("enc", "dec"):
            attns = ("self",) if side == "enc" else ("self", "cross")
            for layer in range(c.layers):
                pre = f"{side}.{layer}"
                for a in attns:
                    for proj in ("q", "k", "v", "o"):
                        add(f"{pre}.{a}.{proj}.w", _xavier(rng, d, d))
                        add(f"{pre}.{a}.{proj}.b", np.zeros(d))
                    add(f"{pre}.{a}.ln.g", np.ones(d))
                    add(f"{pre}.{a}.ln.b", np.zeros(d))
                add(f"{pre}.ffn.w1", _xavier(rng, d, f))
                add(f"{pre}.ffn.b1", np.zeros(f))
                add(f"{pre}.ffn.w2", _xavier(rng, f, d))
                add(f"{pre}.ffn.b2", np.zeros(d))
                add(f"{pre}.ffn.ln.g", np.ones(d))
                add(f"{pre}.ffn.ln.b", np.zeros(d))
        return p

    # ------------------------------------------------------------ building blocks

    def train(self, mode: bool = True) -> "Seq2Seq":
        self.training = mode
        return self

    def _drop(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.config.dropout, self.rng, self.training)

    def _lin(self, x: Tensor, name: str) -> Tensor:
        return T.affine(x, self.params[name + ".w"], self.params[name + ".b"])

    def _heads(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        h = self.config.heads
        return x.reshape(b, t, h, d // h).transpose(0, 2, 1, 3)

    def _merge(self, x: Tensor) -> Tensor:
        b, h, t, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)

    def _attend(self, pre: str, q: Tensor, k: Tensor, v: Tensor, mask) -> Tensor:
        out = T.attention(q, k, v, mask)
        return self._lin(self._merge(out), pre + ".o")

    def _norm(self, x: Tensor, pre: str) -> Tensor:
        return T.layer_norm(x, self.params[pre + ".g"], self.params[pre + ".b"])

    def _ffn(self, x: Tensor, pre: str) -> Tensor:
        h = T.relu(self._lin_named(x, pre + ".w1", pre + ".b1"))
        out = self._lin_named(h, pre + ".w2", pre + ".b2")
        return self._norm(x + self._drop(out), pre + ".ln")

    def _lin_named(self, x, w, b):
        return T.affine(x, self.params[w], self.params[b])

    def _embed(self, ids: np.ndarray, offset: int = 0) -> Tensor:
        scale = self.config.embed_dim**0.5
        x = T.embedding(ids, self.params["embed"]) * scale
        return self._drop(x + self._pos[offset : offset + ids.shape[1]])

    def _soft_embed_step(self, dist: Tensor, pos: int) -> Tensor:
        scale = self.config.embed_dim**0.5
        x = T.soft_embed(dist, self.params["embed"]) * scale
        return self._drop(x + self._pos[pos])

    def _output_logits(self, h: Tensor) -> Tensor:
        # tied projection: (embed_dim, vocab) is the transposed embedding table
        return T.matmul(h, T.transpose(self.params["embed"], (1, 0)))

    # ------------------------------------------------------------ encoder

    def encode(self, sources: Sequence[Sequence[int]], directions) -> Encoded:
        """Encode sources with their direction token prepended.

        ``directions`` is one direction-token id for the whole batch or one per source.
        """
        if isinstance(directions, (int, np.integer)):
            directions = [int(directions)] * len(sources)
        seqs = [[int(d)] + list(s) for d, s in zip(directions, sources)]
        for s in seqs:
            if len(s) > self.config.max_len:
                raise OverlengthError(f"encode: input of {len(s) - 1} tokens + direction exceeds max_len {self.config.max_len}")
            if s and max(s) >= self.config.vocab_size:
                raise IndexError(f"encode: token id {max(s)} >= vocab_size {self.config.vocab_size}")
        ids, valid = pad_batch(seqs)
        mask = valid[:, None, None, :]
        x = self._embed(ids)
        for layer in range(self.config.layers):
            pre = f"enc.{layer}.self"
            q, k, v = (self._heads(self._lin(x, f"{pre}.{n}")) for n in "qkv")
            x = self._norm(x + self._drop(self._attend(pre, q, k, v, mask)), pre + ".ln")
            x = self._ffn(x, f"enc.{layer}.ffn")
        return Encoded(x, valid)

    # ------------------------------------------------------------ decoder

    def _cross_kv(self, enc: Encoded):
        return [
            (self._heads(self._lin(enc.states, f"dec.{l}.cross.k")), self._heads(self._lin(enc.states, f"dec.{l}.cross.v")))
            for l in range(self.config.layers)
        ]

    def _decoder(self, x: Tensor, enc: Encoded, cross, self_kv=None) -> tuple[Tensor, list]:
        """Run the decoder stack on input embeddings ``x`` (B, t, d).

        Without ``self_kv`` the pass is a full causal pass; with it, ``x`` holds only the
        newest position(s) and the cached keys/values of earlier positions are extended.
        """
        enc_mask = enc.valid[:, None, None, :]
        t = x.shape[1]
        new_kv = []
        for layer in range(self.config.layers):
            pre = f"dec.{layer}.self"
            q, k, v = (self._heads(self._lin(x, f"{pre}.{n}")) for n in "qkv")
            if self_kv is None:
                mask = np.tril(np.ones((t, t), dtype=bool))[None, None]
            else:
                pk, pv = self_kv[layer]
                if pk is not None:
                    k = T.concat([pk, k], axis=2)
                    v = T.concat([pv, v], axis=2)
                mask = None
            new_kv.append((k, v))
            x = self._norm(x + self._drop(self._attend(pre, q, k, v, mask)), pre + ".ln")
            pre = f"dec.{layer}.cross"
            q = self._heads(self._lin(x, pre + ".q"))
            ck, cv = cross[layer]
            x = self._norm(x + self._drop(self._attend(pre, q, ck, cv, enc_mask)), pre + ".ln")
            x = self._ffn(x, f"dec.{layer}.ffn")
        return self._output_logits(x), new_kv

    def decode_teacher_forced(self, enc: Encoded, targets: Sequence[Sequence[int]]) -> tuple[Tensor, np.ndarray, np.ndarray]:
        """Logits for every step of ``targets`` plus the final end-of-sequence prediction.

        Returns ``(logits (B, L+1, V), gold ids (B, L+1), valid mask (B, L+1))``.
        """
        for t in targets:
            if len(t) + 1 > self.config.max_len:
                raise OverlengthError(f"decode: target of {len(t)} tokens + <eos> exceeds max_len {self.config.max_len}")
        inp, _ = pad_batch([[BOS_ID] + list(t) for t in targets])
        gold, valid = pad_batch([list(t) + [EOS_ID] for t in targets])
        logits, _ = self._decoder(self._embed(inp), enc, self._cross_kv(enc))
        return logits, gold, valid

    def sequence_nll(self, enc: Encoded, targets: Sequence[Sequence[int]]) -> Tensor:
        """Summed token NLL (``<eos>`` included) per sequence, shape (B,)."""
        logits, gold, valid = self.decode_teacher_forced(enc, targets)
        nll = T.cross_entropy(logits, gold)
        return T.tsum(nll * valid.astype(nll.dtype), axis=1)

    def decode_soft(self, enc: Encoded, tau: float, max_steps: int) -> SoftDecoded:
        """Differentiable decoding that feeds ``softmax(logits / tau)`` back as a soft word."""
        if max_steps > self.config.max_len:
            raise OverlengthError(f"decode_soft: max_steps {max_steps} exceeds max_len {self.config.max_len}")
        b = enc.states.shape[0]
        cross = self._cross_kv(enc)
        kv = [(None, None)] * self.config.layers
        x = self._embed(np.full((b, 1), BOS_ID))
        dists, logits_seq = [], []
        lengths = np.full(b, max_steps)
        done = np.zeros(b, dtype=bool)
        for step in range(max_steps):
            logits, kv = self._decoder(x, enc, cross, kv)
            logits = logits[:, 0, :]
            p = T.softmax_with_temperature(logits, tau)
            dists.append(p)
            logits_seq.append(logits)
            eos = (logits.data.argmax(axis=-1) == EOS_ID) & ~done
            lengths[eos] = step
            done |= eos
            if done.all():
                break
            x = T.reshape(self._soft_embed_step(p, step + 1), (b, 1, -1))
        return SoftDecoded(T.stack(dists, axis=1), lengths, logits_seq)

    def greedy_decode(self, enc: Encoded, max_steps: int, mode: str = "greedy", rng=None) -> list[list[int]]:
        """Hard decoding without gradients; output excludes ``<eos>``."""
        if mode not in ("greedy", "sample"):
            raise ValueError(f"unknown decode mode {mode!r}")
        max_steps = min(max_steps, self.config.max_len)
        with T.no_grad():
            b = enc.states.shape[0]
            cross = self._cross_kv(enc)
            kv = [(None, None)] * self.config.layers
            prev = np.full((b, 1), BOS_ID)
            out = [[] for _ in range(b)]
            done = np.zeros(b, dtype=bool)
            for step in range(max_steps):
                logits, kv = self._decoder(self._embed(prev, offset=step), enc, cross, kv)
                logits = logits.data[:, 0, :]
                if mode == "greedy":
                    tok = logits.argmax(axis=-1)
                else:
                    z = logits - logits.max(axis=-1, keepdims=True)
                    pr = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
                    tok = np.array([rng.choice(len(row), p=row / row.sum()) for row in pr.astype(np.float64)])
                for i in np.flatnonzero(~done):
                    if tok[i] == EOS_ID:
                        done[i] = True
                    else:
                        out[i].append(int(tok[i]))
                if done.all():
                    break
                prev = tok[:, None]
        return out

    def next_log_probs(self, enc: Encoded, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        """Log-probabilities of the next token after each prefix (full recomputation)."""
        with T.no_grad():
            inp, valid = pad_batch([[BOS_ID] + list(p) for p in prefixes])
            logits, _ = self._decoder(self._embed(inp), enc, self._cross_kv(enc))
            last = valid.sum(axis=1) - 1
            z = logits.data[np.arange(len(prefixes)), last].astype(np.float64)
        z = z - z.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())


def repeat_encoded(enc: Encoded, index) -> Encoded:
    """Select rows of a (gradient-free) encoding, e.g. to tile one source across a beam."""
    return Encoded(Tensor(enc.states.data[index], dtype=enc.states.dtype), enc.valid[index])


class CNNClassifier:
    """Convolutional sentence classifier over hard ids or soft word distributions."""

    def __init__(self, config: ClassifierConfig, params: ModelParams | None = None, seed: int = 0):
        self.config = config
        self.rng = np.random.default_rng(seed + 1)
        self.training = False
        self.params = params if params is not None else self._init_params(np.random.default_rng(seed))

    def _init_params(self, rng) -> ModelParams:
        c = self.config
        dt = T.default_dtype()
        p = ModelParams()

        def add(name, arr):
            p[name] = Tensor(np.asarray(arr, dtype=dt), requires_grad=True)

        add("embed", rng.normal(0.0, 0.1, size=(c.vocab_size, c.embed_dim)))
        for k in c.filter_sizes:
            add(f"conv{k}.w", _xavier(rng, k * c.embed_dim, c.filters_per_size, (k, c.embed_dim, c.filters_per_size)))
            add(f"conv{k}.b", np.zeros(c.filters_per_size))
        n = c.filters_per_size * len(c.filter_sizes)
        add("out.w", _xavier(rng, n, c.num_classes))
        add("out.b", np.zeros(c.num_classes))
        return p

    def train(self, mode: bool = True) -> "CNNClassifier":
        self.training = mode
        return self

    @contextlib.contextmanager
    def frozen(self):
        """Treat the parameters as constants (no gradient) and disable dropout."""
        flags = {k: p.requires_grad for k, p in self.params.items()}
        mode = self.training
        for p in self.params.values():
            p.requires_grad = False
        self.training = False
        try:
            yield self
        finally:
            for k, p in self.params.items():
                p.requires_grad = flags[k]
            self.training = mode

    @property
    def min_len(self) -> int:
        return max(self.config.filter_sizes)

    def _head(self, emb: Tensor, lengths: np.ndarray) -> Tensor:
        padded = np.maximum(lengths, self.min_len)
        feats = []
        for k in self.config.filter_sizes:
            conv = T.relu(T.conv1d(emb, self.params[f"conv{k}.w"], self.params[f"conv{k}.b"]))
            starts = np.arange(conv.shape[1])[None, :]
            feats.append(T.max_over_time(conv, starts + k <= padded[:, None]))
        h = feats[0] if len(feats) == 1 else T.concat(feats, axis=1)
        h = T.dropout(h, self.config.dropout, self.rng, self.training)
        return T.log_softmax(T.affine(h, self.params["out.w"], self.params["out.b"]))

    def classify_hard(self, seqs: Sequence[Sequence[int]]) -> Tensor:
        """Class log-probabilities (B, C); short inputs are right-padded with ``<pad>``."""
        v = self.config.vocab_size
        seqs = [[t if 0 <= t < v else UNK_ID for t in s] for s in seqs]
        ids, _ = pad_batch(seqs, min_len=self.min_len)
        lengths = np.array([len(s) for s in seqs])
        return self._head(T.embedding(ids, self.params["embed"]), lengths)

    def classify_soft(self, dists: Tensor, lengths=None) -> Tensor:
        """Class log-probabilities for sequences of vocabulary distributions (B, L, V).

        Positions at or beyond ``lengths`` are replaced by the ``<pad>`` embedding.
        """
        b, steps, v = dists.shape
        if v != self.config.vocab_size:
            raise SimplexError(f"classify_soft: distributions over {v} tokens, classifier vocab is {self.config.vocab_size}")
        lengths = np.full(b, steps) if lengths is None else np.asarray(lengths)
        valid = np.arange(steps)[None, :] < lengths[:, None]
        sums = dists.data.sum(axis=-1)
        if np.any(np.abs(sums - 1.0)[valid] > 1e-4):
            raise SimplexError("classify_soft: input rows are not probability distributions")
        total = max(steps, int(lengths.max(initial=0)), self.min_len)
        emb = T.soft_embed(dists, self.params["embed"])
        if total > steps:
            emb = T.concat([emb, Tensor(np.zeros((b, total - steps, emb.shape[2]), dtype=emb.dtype))], axis=1)
            valid = np.concatenate([valid, np.zeros((b, total - steps), dtype=bool)], axis=1)
        keep = valid[:, :, None].astype(emb.dtype)
        pad_emb = T.embedding(np.full((b, total), PAD_ID), self.params["embed"])
        emb = emb * keep + pad_emb * (1.0 - keep)
        return self._head(emb, lengths)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())


class StyleClassifier:
    """A trained classifier bundled with its vocabulary and style names."""

    def __init__(self, model: CNNClassifier, vocab: Vocabulary, batch_size: int = 256):
        self.model = model
        self.vocab = vocab
        self.styles = vocab.styles
        self.batch_size = batch_size

    def _ids(self, seq) -> list[int]:
        seq = list(seq)
        if seq and isinstance(seq[0], str):
            return self.vocab.encode(seq)
        return [int(t) for t in seq]

    def predict_proba(self, sentences) -> np.ndarray:
        out = []
        mode = self.model.training
        self.model.training = False
        try:
            with T.no_grad():
                for i in range(0, len(sentences), self.batch_size):
                    chunk = [self._ids(s) for s in sentences[i : i + self.batch_size]]
                    out.append(np.exp(self.model.classify_hard(chunk).data.astype(np.float64)))
        finally:
            self.model.training = mode
        return np.concatenate(out) if out else np.zeros((0, len(self.styles)))

    def predict(self, sentences) -> list[str]:
        return [self.styles[int(i)] for i in self.predict_proba(sentences).argmax(axis=1)]


def config_dict(config) -> dict:
    d = asdict(config)
    if "filter_sizes" in d:
        d["filter_sizes"] = list(d["filter_sizes"])
    return d
