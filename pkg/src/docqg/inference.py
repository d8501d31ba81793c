"""Greedy and beam-search decoding.

Both decoders drive a "stepper": anything with `ext_size`, `sos_id`,
`eos_id`, `initial_state()` and `step(prev_id, state) -> (probs, state, a_t)`.
The real model and the scripted stubs used in tests implement the same
surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndcore as nd
from .decoder import decode_step, initial_state
from .encoder import encode_example
from .model import ExtendedVocab

DEFAULT_MAX_LEN = 30


@dataclass
class Hypothesis:
    ids: list                    # emitted tokens, EOS excluded
    logp: float                  # sum of per-step log P_final, EOS included
    state: object
    finished: bool = False
    n_steps: int = 0
    attentions: list = field(default_factory=list)

    def score(self, length_normalize):
        if not length_normalize:
            return self.logp
        return self.logp / max(self.n_steps, 1)


@dataclass
class AttentionTrace:
    stage_attentions: list       # encoder a(1)..a(k)
    step_attentions: list        # decoder a^t per emitted step


class ModelStepper:
    """Binds a trained model to one (document, answer) pair; tape-less."""

    def __init__(self, model, example):
        self.model = model
        self.vocab = model.vocab
        self.ext = ExtendedVocab.for_document(example.doc_tokens, model.vocab)
        self.bound = model.params.bind(None)
        self.emb = nd.DiffArray(model.embeddings.matrix)
        enc = encode_example(model.vocab.encode(example.doc_tokens),
                             model.vocab.encode(example.answer_tokens),
                             example.answer_span, self.emb, self.bound,
                             model.config)
        self.encoded = enc
        self.C_final = enc.C_final
        self.stage_attentions = [a.value.copy() for a in enc.attentions]

    @property
    def ext_size(self):
        return self.ext.size

    @property
    def sos_id(self):
        return self.vocab.sos_id

    @property
    def eos_id(self):
        return self.vocab.eos_id

    def initial_state(self):
        return initial_state(self.model.config.d, self.model.config.np_dtype)

    def step(self, prev_id, state):
        out = decode_step(prev_id, state, self.C_final, self.emb, self.bound,
                          self.vocab, self.ext)
        return (np.asarray(out.p_final.value, dtype=np.float64),
                (out.h, out.c), out.a_t.value.copy())


def greedy_decode(stepper, max_len=DEFAULT_MAX_LEN):
    """Argmax decoding; ties break toward the lowest extended-vocab id.

    Returns a finished Hypothesis (EOS excluded from `ids`, included in the
    accumulated log-probability), so greedy output is directly comparable to
    a width-1 beam.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    state = stepper.initial_state()
    prev = stepper.sos_id
    hyp = Hypothesis(ids=[], logp=0.0, state=state)
    for _ in range(max_len):
        probs, state, a_t = stepper.step(prev, hyp.state)
        tok = int(np.argmax(probs))
        hyp.attentions.append(a_t)
        hyp.logp += float(np.log(probs[tok])) if probs[tok] > 0 else -np.inf
        hyp.n_steps += 1
        hyp.state = state
        if tok == stepper.eos_id:
            hyp.finished = True
            break
        hyp.ids.append(tok)
        prev = tok
    return hyp


def beam_search(stepper, beam_size, max_len=DEFAULT_MAX_LEN,
                length_normalize=True):
    """Breadth-limited search by total log-probability.

    Ties break by token id, then source-hypothesis order.  The returned pair
    is (token ids of the best finished hypothesis, its score); with
    `length_normalize` the ranking divides by step count, otherwise raw sums
    compare.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    beams = [Hypothesis(ids=[], logp=0.0, state=stepper.initial_state())]
    for _ in range(max_len):
        if all(h.finished for h in beams):
            break
        candidates = []
        for bi, hyp in enumerate(beams):
            if hyp.finished:
                candidates.append((-hyp.logp, -1, bi, hyp))
                continue
            prev = hyp.ids[-1] if hyp.ids else stepper.sos_id
            probs, state, a_t = stepper.step(prev, hyp.state)
            with np.errstate(divide="ignore"):
                logp = np.log(np.asarray(probs, dtype=np.float64))
            for tok in range(len(logp)):
                if not np.isfinite(logp[tok]):
                    continue
                new = Hypothesis(
                    ids=hyp.ids if tok == stepper.eos_id else hyp.ids + [tok],
                    logp=hyp.logp + float(logp[tok]),
                    state=state,
                    finished=(tok == stepper.eos_id),
                    n_steps=hyp.n_steps + 1,
                    attentions=hyp.attentions + [a_t],
                )
                candidates.append((-new.logp, tok, bi, new))
        candidates.sort(key=lambda c: (c[0], c[1], c[2]))
        beams = [c[3] for c in candidates[:beam_size]]
    done = [h for h in beams if h.finished] or beams
    best = min(
        enumerate(done),
        key=lambda ih: (-ih[1].score(length_normalize), ih[1].ids, ih[0]))[1]
    return best.ids, best.score(length_normalize), best.attentions


def detokenize(ids, vocab, doc_tokens):
    """Extended-vocab ids back to text; copy ids take their document surface
    form, fixed ids go through the vocab."""
    ext = ExtendedVocab.for_document(doc_tokens, vocab)
    return " ".join(ext.token_for(i, vocab) for i in ids)


def generate(model, example, beam_size=10, max_len=DEFAULT_MAX_LEN,
             length_normalize=True):
    """Decode one example; returns (question text, score, AttentionTrace)."""
    stepper = ModelStepper(model, example)
    if beam_size == 1:
        hyp = greedy_decode(stepper, max_len=max_len)
        ids, trace = hyp.ids, hyp.attentions
        score = hyp.score(length_normalize)
    else:
        ids, score, trace = beam_search(stepper, beam_size, max_len=max_len,
                                        length_normalize=length_normalize)
    text = " ".join(stepper.ext.token_for(i, model.vocab) for i in ids)
    return text, score, AttentionTrace(stepper.stage_attentions, trace)
