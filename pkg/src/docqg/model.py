"""Model configuration, the trainable-parameter registry, and the per-example
extended vocabulary used by the copy mechanism."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import corpus

INIT_RANGE = 0.08


@dataclass
class ModelConfig:
    d: int = 64                 # encoder/decoder hidden width; must be even
    d_emb: int = 64
    stages: int = 2             # attention linkage level k
    vocab_size: int = 0         # filled in from the actual vocab
    seed: int = 7
    dtype: str = "float32"
    use_attention: bool = True  # ablation axis: bypass the stage pipeline
    use_mask: bool = True       # ablation axis: skip answer masking
    encoder_kind: str = "bilstm"  # "bilstm" | "identity" (diagnostics only)

    def __post_init__(self):
        if self.d % 2 != 0:
            raise ValueError("hidden width d must be even (two directions)")
        if self.stages < 1:
            raise ValueError("stage count must be >= 1")
        if self.encoder_kind == "identity" and self.d != self.d_emb:
            raise ValueError("identity encoder requires d == d_emb")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self):
        return asdict(self)


class ParamSet:
    """Named trainable arrays; iteration order is insertion order."""

    def __init__(self):
        self.arrays = {}

    def add(self, name, value):
        if name in self.arrays:
            raise ValueError(f"duplicate parameter {name}")
        self.arrays[name] = np.asarray(value)
        return self.arrays[name]

    def names(self):
        return list(self.arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def __setitem__(self, name, value):
        self.arrays[name] = np.asarray(value)

    def __contains__(self, name):
        return name in self.arrays

    def bind(self, tape):
        """Wrap every array as a DiffArray leaf on `tape` (or tape-less for
        inference).  Returns name -> DiffArray."""
        from .ndcore import DiffArray
        if tape is None:
            return {n: DiffArray(a, name=n) for n, a in self.arrays.items()}
        return {n: tape.leaf(a, name=n) for n, a in self.arrays.items()}

    def astype(self, dtype):
        out = ParamSet()
        for n, a in self.arrays.items():
            out.add(n, a.astype(dtype))
        return out


def _uniform(rng, shape, dtype, lo=-INIT_RANGE, hi=INIT_RANGE):
    return rng.uniform(lo, hi, size=shape).astype(dtype)


def add_lstm_cell(params, prefix, in_dim, hid_dim, rng, dtype):
    """One LSTM cell as a fused gate block: gates order [i, f, o, c].

    The forget-gate slice of the bias starts at 1.0 so early training does
    not wash out the cell state; the other gates start at 0.
    """
    params.add(f"{prefix}.W", _uniform(rng, (in_dim, 4 * hid_dim), dtype))
    params.add(f"{prefix}.U", _uniform(rng, (hid_dim, 4 * hid_dim), dtype))
    b = np.zeros(4 * hid_dim, dtype=dtype)
    b[hid_dim:2 * hid_dim] = 1.0
    params.add(f"{prefix}.b", b)


def init_params(config, rng=None):
    """All trainable arrays of encoder, attention stages, mask, decoder."""
    rng = rng or np.random.default_rng(config.seed)
    dtype = config.np_dtype
    d, e = config.d, config.d_emb
    p = ParamSet()
    # shared bidirectional encoder, d/2 per direction
    add_lstm_cell(p, "enc.fwd", e, d // 2, rng, dtype)
    add_lstm_cell(p, "enc.bwd", e, d // 2, rng, dtype)
    # one sigmoid transform per attention stage
    for s in range(1, config.stages + 1):
        p.add(f"att.W{s}", _uniform(rng, (d, d), dtype))
        p.add(f"att.b{s}", np.zeros(d, dtype=dtype))
    p.add("mask.vector", rng.uniform(-0.1, 0.1, size=d).astype(dtype))
    # forward-only decoder cell; input is [context, prev-token embedding]
    add_lstm_cell(p, "dec.cell", d + e, d, rng, dtype)
    p.add("dec.V", _uniform(rng, (2 * d, config.vocab_size), dtype))
    p.add("dec.w_r", _uniform(rng, (d,), dtype))
    p.add("dec.w_x", _uniform(rng, (d + e,), dtype))
    p.add("dec.w_h", _uniform(rng, (d,), dtype))
    p.add("dec.u", _uniform(rng, (d,), dtype))
    return p


@dataclass
class QGModel:
    config: ModelConfig
    vocab: corpus.Vocab
    embeddings: corpus.EmbeddingTable
    params: ParamSet

    @classmethod
    def init(cls, config, vocab, embeddings=None):
        config.vocab_size = len(vocab)
        if embeddings is None:
            embeddings = corpus.random_embeddings(
                vocab, config.d_emb, seed=config.seed, frozen=True)
        emb = corpus.EmbeddingTable(
            embeddings.matrix.astype(config.np_dtype), embeddings.frozen)
        return cls(config, vocab, emb, init_params(config))


@dataclass
class ExtendedVocab:
    """Fixed vocab plus per-example ids (>= |V|) for out-of-vocab document
    surface forms; standard pointer-generator bookkeeping."""
    base_size: int
    oov_tokens: list                  # id base_size + i  ->  token
    doc_ext_ids: np.ndarray           # document position -> extended id

    @classmethod
    def for_document(cls, doc_tokens, vocab):
        oov, oov_idx = [], {}
        ext = np.empty(len(doc_tokens), dtype=np.int64)
        for i, t in enumerate(doc_tokens):
            if t in vocab.index:
                ext[i] = vocab.index[t]
            else:
                if t not in oov_idx:
                    oov_idx[t] = len(vocab) + len(oov)
                    oov.append(t)
                ext[i] = oov_idx[t]
        return cls(len(vocab), oov, ext)

    @property
    def size(self):
        return self.base_size + len(self.oov_tokens)

    def encode_target(self, tokens, vocab):
        """Map question tokens to extended ids: in-vocab id, else the document
        copy id when the surface form occurs in the document, else UNK."""
        oov_idx = {t: self.base_size + i for i, t in enumerate(self.oov_tokens)}
        unk = vocab.unk_id
        out = []
        for t in tokens:
            if t in vocab.index:
                out.append(vocab.index[t])
            else:
                out.append(oov_idx.get(t, unk))
        return out

    def token_for(self, ext_id, vocab):
        if 0 <= ext_id < self.base_size:
            return vocab.tokens[ext_id]
        if ext_id < self.size:
            return self.oov_tokens[ext_id - self.base_size]
        raise ValueError(f"extended id {ext_id} out of range {self.size}")

    def embedding_id(self, ext_id, vocab):
        """Id usable for the embedding lookup; copied OOVs embed as UNK."""
        return ext_id if ext_id < self.base_size else vocab.unk_id
