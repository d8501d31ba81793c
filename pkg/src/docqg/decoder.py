"""Copy/generate decoding and end-to-end training.

One decode step computes copy attention from the previous state, advances a
forward-direction LSTM on [context, prev-token embedding], and mixes a fixed
vocabulary distribution with the copy distribution through a learned gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndcore as nd
from .encoder import encode_example, lstm_step
from .model import ExtendedVocab


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class StepOutput:
    h: object           # decoder state, width d
    c: object           # cell state, width d
    a_t: object         # copy attention over document positions
    r_t: object         # attended context, width d
    p_vocab: object     # distribution over the fixed vocab
    p_gen: object       # scalar gate in (0,1)
    p_final: object     # distribution over the extended vocab


@dataclass
class TrainConfig:
    lr: float = 0.001
    l2: float = 1e-6
    batch_size: int = 8
    max_steps: int = 2000
    clip_norm: float = 5.0
    seed: int = 0
    log_every: int = 50
    eval_every: int = 50
    target_nll: float = None    # stop early once mean per-token NLL drops below

    def __post_init__(self):
        if min(self.lr, self.batch_size, self.max_steps, self.clip_norm) < 0 \
                or self.clip_norm == 0 or self.batch_size == 0 or self.max_steps == 0:
            raise ValueError("TrainConfig fields must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")


def attend_copy(C_final, h_prev, u):
    """e[i] = u . tanh(C_final[i] + h_prev); a = softmax(e); r = sum a[i] C[i]."""
    if C_final.shape[1] != h_prev.shape[-1]:
        raise nd.GraphError(
            f"attend_copy: encoder width {C_final.shape[1]} != "
            f"decoder width {h_prev.shape[-1]}")
    e = nd.matmul(nd.tanh(nd.add(C_final, h_prev)), u)
    a_t = nd.softmax_last_axis(e)
    r_t = nd.matmul(a_t, C_final)
    return a_t, r_t


def decode_step(prev_ext_id, state, C_final, emb_table, bound, vocab, ext,
                p_gen_override=None):
    """One decoder step.  `state` is (h, c) 1-D width-d arrays; `prev_ext_id`
    is an extended-vocab id (copied OOVs embed as UNK).

    `p_gen_override` substitutes a constant for the gate; diagnostics only.
    """
    if not (0 <= prev_ext_id < ext.size):
        raise nd.GraphError(f"decode_step: id {prev_ext_id} outside extended "
                            f"vocab of size {ext.size}")
    h_prev, c_prev = state
    dtype = C_final.value.dtype

    a_t, r_t = attend_copy(C_final, h_prev, bound["dec.u"])
    emb_prev = nd.embedding_lookup(emb_table, ext.embedding_id(prev_ext_id, vocab))
    x_t = nd.concat([r_t, emb_prev], axis=-1)
    h_t, c_t = lstm_step(x_t, h_prev, c_prev,
                         bound["dec.cell.W"], bound["dec.cell.U"],
                         bound["dec.cell.b"])

    p_vocab = nd.softmax_last_axis(
        nd.matmul(nd.concat([h_t, r_t], axis=-1), bound["dec.V"]))

    if p_gen_override is None:
        gate = nd.add(nd.add(nd.matmul(bound["dec.w_r"], r_t),
                             nd.matmul(bound["dec.w_x"], x_t)),
                      nd.matmul(bound["dec.w_h"], h_t))
        p_gen = nd.sigmoid(gate)
    else:
        p_gen = nd.DiffArray(np.asarray(p_gen_override, dtype=dtype))

    gen_part = nd.elementwise_mul(p_vocab, p_gen)
    n_oov = ext.size - ext.base_size
    if n_oov:
        gen_part = nd.concat(
            [gen_part, nd.DiffArray(np.zeros(n_oov, dtype=dtype))], axis=-1)
    one_minus = nd.add(np.asarray(1.0, dtype=dtype), nd.scale(p_gen, -1.0))
    copy_part = nd.scatter_add_vector(nd.elementwise_mul(a_t, one_minus),
                                      ext.doc_ext_ids, ext.size)
    p_final = nd.add(gen_part, copy_part)
    return StepOutput(h_t, c_t, a_t, r_t, p_vocab, p_gen, p_final)


def initial_state(d, dtype):
    z = np.zeros(d, dtype=dtype)
    return nd.DiffArray(z), nd.DiffArray(z.copy())


def target_ids(example, vocab, ext):
    """Teacher-forcing targets: question tokens then EOS, in extended ids."""
    return ext.encode_target(example.question_tokens, vocab) + [vocab.eos_id]


def sequence_loss(example, C_final, emb_table, bound, vocab, ext, config):
    """Mean per-token negative log-likelihood under teacher forcing."""
    if not example.question_tokens:
        raise nd.GraphError("sequence_loss: example has no question")
    targets = target_ids(example, vocab, ext)
    state = initial_state(config.d, config.np_dtype)
    prev = vocab.sos_id
    total = None
    for y in targets:
        out = decode_step(prev, state, C_final, emb_table, bound, vocab, ext)
        lp = nd.log_floor(nd.take(out.p_final, y))
        total = lp if total is None else nd.add(total, lp)
        state = (out.h, out.c)
        prev = y
    return nd.scale(total, -1.0 / len(targets))


def example_loss(model, example, tape):
    """Build the full forward graph for one example on `tape`; returns the
    scalar loss node.  Binds parameters in registry order (leaf order matters
    for gradient bookkeeping)."""
    bound = model.params.bind(tape)
    emb = (nd.DiffArray(model.embeddings.matrix) if model.embeddings.frozen
           else tape.leaf(model.embeddings.matrix, name="emb"))
    ext = ExtendedVocab.for_document(example.doc_tokens, model.vocab)
    doc_ids = model.vocab.encode(example.doc_tokens)
    ans_ids = model.vocab.encode(example.answer_tokens)
    enc = encode_example(doc_ids, ans_ids, example.answer_span, emb, bound,
                         model.config)
    return sequence_loss(example, enc.C_final, emb, bound, model.vocab, ext,
                         model.config)


class Adam:
    """Adam with gradient clipping and decoupled weight decay."""

    def __init__(self, names, lr=0.001, l2=1e-6, clip_norm=5.0,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.l2, self.clip_norm = lr, l2, clip_norm
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: None for n in names}
        self.v = {n: None for n in names}

    def step(self, params, grads):
        self.t += 1
        norm = np.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
        scale = self.clip_norm / norm if norm > self.clip_norm else 1.0
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            g = g * scale
            if self.m[name] is None:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            w = params[name]
            w = w - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            w = w - self.lr * self.l2 * w
            params[name] = w.astype(params[name].dtype)


def mean_corpus_nll(model, examples):
    total, tokens = 0.0, 0
    for ex in examples:
        tape = nd.Tape()
        loss = example_loss(model, ex, tape)
        n = len(ex.question_tokens) + 1
        total += float(loss.value) * n
        tokens += n
    return total / tokens


def train(model, examples, config, on_log=None, stop_when=None):
    """Minibatch Adam training; deterministic under config.seed.

    Every `eval_every` steps the early-stop condition is checked:
    `stop_when(model, step)` when given, otherwise mean corpus NLL below
    `config.target_nll`.  Returns the training log as a list of
    (step, mean batch loss) pairs.
    """
    if not examples:
        raise ValueError("train: empty training set")
    rng = np.random.default_rng(config.seed)
    trainable = model.params.names()
    if not model.embeddings.frozen:
        trainable = trainable + ["emb"]
    opt = Adam(trainable, lr=config.lr, l2=config.l2, clip_norm=config.clip_norm)
    log = []
    order = []

    def next_batch():
        nonlocal order
        batch = []
        while len(batch) < config.batch_size:
            if not order:
                order = list(rng.permutation(len(examples)))
            batch.append(examples[order.pop()])
        return batch

    params = model.params
    for step in range(1, config.max_steps + 1):
        batch = next_batch()
        grads = {n: np.zeros_like(params[n]) for n in trainable}
        batch_loss = 0.0
        for ex in batch:
            tape = nd.Tape()
            loss = example_loss(model, ex, tape)
            if not np.isfinite(loss.value):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            batch_loss += float(loss.value)
            g = tape.backward(loss)
            for name, leaf_nid in _named_leaves(tape, trainable):
                if leaf_nid in g:
                    grads[name] += np.asarray(g[leaf_nid], dtype=grads[name].dtype)
        for name in grads:
            grads[name] /= len(batch)
        arrays = dict(params.arrays)
        if not model.embeddings.frozen:
            arrays["emb"] = model.embeddings.matrix
        opt.step(arrays, grads)
        for name in params.names():
            params[name] = arrays[name]
        if not model.embeddings.frozen:
            model.embeddings.matrix = arrays["emb"]
        mean_loss = batch_loss / len(batch)
        if step % config.log_every == 0 or step == 1 or step == config.max_steps:
            log.append((step, mean_loss))
            if on_log:
                on_log(step, mean_loss)
        if step % config.eval_every == 0:
            if stop_when is not None:
                if stop_when(model, step):
                    log.append((step, mean_loss))
                    break
            elif config.target_nll is not None:
                if mean_corpus_nll(model, examples) < config.target_nll:
                    log.append((step, mean_loss))
                    break
    return log


def _named_leaves(tape, wanted):
    """(name, nid) for leaves created by ParamSet.bind on this tape."""
    out = []
    names = set(wanted)
    for nid in tape.leaf_ids:
        name = tape.leaf_names.get(nid)
        if name in names:
            out.append((name, nid))
    return out
