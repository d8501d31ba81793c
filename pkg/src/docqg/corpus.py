"""Dataset ingestion: tokenization, answer-span alignment, vocab, embeddings.

The on-disk dataset format is JSON Lines, one example per line:

    {"id": ..., "document": ..., "question": ..., "answer_text": ...,
     "answer_char_start": ...}

`question` may be absent at inference time.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field

import numpy as np

PAD, UNK, SOS, EOS, MASK = "<pad>", "<unk>", "<sos>", "<eos>", "<mask>"
RESERVED = (PAD, UNK, SOS, EOS, MASK)

DEFAULT_DOC_CAP = 400
EMBED_INIT_SEED = 13

_PUNCT = set(string.punctuation)


class CorpusError(ValueError):
    pass


@dataclass
class Example:
    """One (document, answer span, question) triple.

    The answer span is an inclusive 0-based token index pair; single-token
    answers (m == n) are allowed.
    """
    id: str
    doc_tokens: list
    answer_span: tuple
    question_tokens: list = None

    def __post_init__(self):
        m, n = self.answer_span
        if not self.doc_tokens:
            raise CorpusError(f"example {self.id}: empty document")
        if not (0 <= m <= n < len(self.doc_tokens)):
            raise CorpusError(
                f"example {self.id}: span ({m},{n}) out of bounds for "
                f"{len(self.doc_tokens)} tokens")
        if self.question_tokens is not None and not self.question_tokens:
            raise CorpusError(f"example {self.id}: empty question")

    @property
    def answer_tokens(self):
        m, n = self.answer_span
        return self.doc_tokens[m:n + 1]


def tokenize(text):
    """Lowercase, split on whitespace, detach edge punctuation.

    Numbers stay whole; interior punctuation (hyphens, apostrophes) stays
    attached so no characters other than whitespace are lost.
    """
    out = []
    for chunk in text.lower().split():
        lead = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(lead)
        if chunk:
            out.append(chunk)
        out.extend(reversed(trail))
    return out


def align_answer_span(doc_tokens, answer_text, answer_char_start, doc_text=None):
    """Map an answer given as (text, char offset) onto an inclusive token span.

    When the answer occurs several times, `doc_text` disambiguates: the
    occurrence index is the number of complete matches inside the prefix
    ending at the character offset.  Without `doc_text` the first match wins.
    """
    ans_tokens = tokenize(answer_text)
    if not ans_tokens:
        raise CorpusError(f"answer {answer_text!r} tokenizes to nothing")
    hits = [i for i in range(len(doc_tokens) - len(ans_tokens) + 1)
            if doc_tokens[i:i + len(ans_tokens)] == ans_tokens]
    if not hits:
        raise CorpusError(
            f"answer {answer_text!r} is not a token sub-span of the document")
    which = 0
    if doc_text is not None and len(hits) > 1:
        prefix = tokenize(doc_text[:answer_char_start])
        count = sum(1 for i in range(len(prefix) - len(ans_tokens) + 1)
                    if prefix[i:i + len(ans_tokens)] == ans_tokens)
        which = min(count, len(hits) - 1)
    m = hits[which]
    return m, m + len(ans_tokens) - 1


def truncate_document(doc_tokens, answer_span, cap=DEFAULT_DOC_CAP):
    """Trim long documents symmetrically around the answer span."""
    if len(doc_tokens) <= cap:
        return doc_tokens, answer_span
    m, n = answer_span
    span_len = n - m + 1
    if span_len >= cap:
        raise CorpusError(f"answer span of {span_len} tokens exceeds cap {cap}")
    slack = cap - span_len
    start = max(0, m - slack // 2)
    end = start + cap
    if end > len(doc_tokens):
        end = len(doc_tokens)
        start = end - cap
    return doc_tokens[start:end], (m - start, n - start)


@dataclass
class Vocab:
    """Token <-> index bijection with fixed reserved slots."""
    tokens: list = field(default_factory=lambda: list(RESERVED))

    def __post_init__(self):
        if tuple(self.tokens[:len(RESERVED)]) != RESERVED:
            raise CorpusError("reserved tokens missing or reordered")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocab")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    @property
    def pad_id(self):
        return self.index[PAD]

    @property
    def unk_id(self):
        return self.index[UNK]

    @property
    def sos_id(self):
        return self.index[SOS]

    @property
    def eos_id(self):
        return self.index[EOS]

    def encode(self, tokens):
        unk = self.index[UNK]
        return [self.index.get(t, unk) for t in tokens]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    def content_hash(self):
        import hashlib
        h = hashlib.sha256()
        for t in self.tokens:
            h.update(t.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


def build_vocab(examples, max_size):
    """Frequency-ranked vocab over document and question tokens.

    Ties break lexicographically; reserved tokens always survive.
    """
    if max_size <= len(RESERVED):
        raise CorpusError(f"max_size must exceed {len(RESERVED)} reserved slots")
    if not examples:
        raise CorpusError("cannot build a vocab from an empty corpus")
    counts = {}
    for ex in examples:
        for t in ex.doc_tokens:
            counts[t] = counts.get(t, 0) + 1
        for t in ex.question_tokens or []:
            counts[t] = counts.get(t, 0) + 1
    for r in RESERVED:
        counts.pop(r, None)
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    keep = ranked[:max_size - len(RESERVED)]
    return Vocab(list(RESERVED) + keep)


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    frozen: bool = True


def _seeded_init(n_rows, d_emb, seed, pad_id):
    rng = np.random.default_rng(seed)
    mat = rng.uniform(-0.1, 0.1, size=(n_rows, d_emb))
    mat[pad_id] = 0.0
    return mat


def random_embeddings(vocab, d_emb, seed=EMBED_INIT_SEED, frozen=False):
    """Seeded uniform(-0.1, 0.1) table for runs without a pre-trained file."""
    return EmbeddingTable(_seeded_init(len(vocab), d_emb, seed, vocab.pad_id),
                          frozen=frozen)


def load_embeddings(path, vocab, d_emb, seed=EMBED_INIT_SEED):
    """Read a GloVe-style text file; vocab rows missing from the file keep
    their seeded uniform(-0.1, 0.1) init, PAD stays zero."""
    mat = _seeded_init(len(vocab), d_emb, seed, vocab.pad_id)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                raise CorpusError(f"{path}:{lineno}: malformed embedding line")
            token, vals = parts[0], parts[1:]
            if len(vals) != d_emb:
                raise CorpusError(
                    f"{path}:{lineno}: expected {d_emb} values, got {len(vals)}")
            if token in vocab.index and token != PAD:
                try:
                    mat[vocab.index[token]] = [float(v) for v in vals]
                except ValueError:
                    raise CorpusError(f"{path}:{lineno}: non-numeric value")
    return EmbeddingTable(mat, frozen=True)


def parse_example(obj, doc_cap=DEFAULT_DOC_CAP):
    doc_text = obj["document"]
    doc_tokens = tokenize(doc_text)
    span = align_answer_span(doc_tokens, obj["answer_text"],
                             obj.get("answer_char_start", 0), doc_text=doc_text)
    doc_tokens, span = truncate_document(doc_tokens, span, cap=doc_cap)
    question = obj.get("question")
    return Example(
        id=str(obj["id"]),
        doc_tokens=doc_tokens,
        answer_span=span,
        question_tokens=tokenize(question) if question is not None else None,
    )


def load_jsonl(path, doc_cap=DEFAULT_DOC_CAP, on_reject="raise"):
    """Load a JSONL dataset.  on_reject: 'raise' | 'skip'."""
    examples, rejected = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({e})")
            try:
                examples.append(parse_example(obj, doc_cap=doc_cap))
            except CorpusError as e:
                if on_reject == "raise":
                    raise CorpusError(f"{path}:{lineno}: {e}")
                rejected.append((lineno, str(e)))
    if on_reject == "skip":
        return examples, rejected
    return examples


def corpus_stats(examples):
    """Average lengths, mirroring the usual dataset summary table."""
    if not examples:
        raise CorpusError("no examples")
    n = len(examples)
    with_q = [ex for ex in examples if ex.question_tokens is not None]
    return {
        "examples": n,
        "avg_doc_len": sum(len(ex.doc_tokens) for ex in examples) / n,
        "avg_answer_len": sum(len(ex.answer_tokens) for ex in examples) / n,
        "avg_question_len": (sum(len(ex.question_tokens) for ex in with_q)
                             / len(with_q)) if with_q else None,
    }
