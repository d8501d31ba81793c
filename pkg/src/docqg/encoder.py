"""Answer/document encoding: shared BiLSTM, k-stage attention, answer masking.

All functions take `bound`, a name -> DiffArray mapping produced by
ParamSet.bind, so the same code serves training (on a tape) and inference
(tape-less).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndcore as nd


@dataclass
class EncodedInput:
    H_D: object                 # l_D x d
    H_A: object                 # l_A x d
    attentions: list            # per-stage vectors a(1)..a(k), each length l_D
    C_final: object             # l_D x d
    answer_span: tuple


def lstm_sequence(bound, prefix, X, reverse=False):
    """Run one LSTM direction over the rows of X; returns the l x h state matrix.

    Gate block layout is [input, forget, output, candidate].
    """
    W, U, b = bound[f"{prefix}.W"], bound[f"{prefix}.U"], bound[f"{prefix}.b"]
    l = X.shape[0]
    hid = U.shape[0]
    dtype = X.value.dtype
    h = nd.DiffArray(np.zeros((1, hid), dtype=dtype))
    c = nd.DiffArray(np.zeros((1, hid), dtype=dtype))
    order = range(l - 1, -1, -1) if reverse else range(l)
    outputs = [None] * l
    for t in order:
        x = nd.slice_axis(X, t, t + 1, axis=0)
        h, c = lstm_step(x, h, c, W, U, b)
        outputs[t] = h
    return nd.concat(outputs, axis=0)


def lstm_step(x, h, c, W, U, b):
    hid = U.shape[0]
    pre = nd.add(nd.add(nd.matmul(x, W), nd.matmul(h, U)), b)
    i = nd.sigmoid(nd.slice_axis(pre, 0, hid))
    f = nd.sigmoid(nd.slice_axis(pre, hid, 2 * hid))
    o = nd.sigmoid(nd.slice_axis(pre, 2 * hid, 3 * hid))
    g = nd.tanh(nd.slice_axis(pre, 3 * hid, 4 * hid))
    c_new = nd.add(nd.elementwise_mul(f, c), nd.elementwise_mul(i, g))
    h_new = nd.elementwise_mul(o, nd.tanh(c_new))
    return h_new, c_new


def bilstm(bound, X):
    fwd = lstm_sequence(bound, "enc.fwd", X)
    bwd = lstm_sequence(bound, "enc.bwd", X, reverse=True)
    return nd.concat([fwd, bwd], axis=-1)


def encode_sequences(doc_ids, ans_ids, emb_table, bound, config):
    """Shared-weight encodings H_D (l_D x d) and H_A (l_A x d)."""
    if len(doc_ids) == 0 or len(ans_ids) == 0:
        raise nd.GraphError("encode_sequences: empty input sequence")
    X_D = nd.embedding_lookup(emb_table, doc_ids)
    X_A = nd.embedding_lookup(emb_table, ans_ids)
    if config.encoder_kind == "identity":
        return X_D, X_A
    return bilstm(bound, X_D), bilstm(bound, X_A)


def stage_transform(H, W, b):
    """F(x) = sigmoid(W x + b), applied row-wise."""
    return nd.sigmoid(nd.add(nd.matmul(H, W), b))


def affinity_matrix(H_left, H_right, W, b):
    """M[i, j] = F(H_left[i]) . F(H_right[j])."""
    if H_left.shape[1] != W.shape[0] or H_right.shape[1] != W.shape[0]:
        raise nd.GraphError(
            f"affinity_matrix: widths {H_left.shape} / {H_right.shape} do not "
            f"match transform input width {W.shape[0]}")
    return nd.matmul(stage_transform(H_left, W, b),
                     nd.transpose(stage_transform(H_right, W, b)))


def attention_from_affinity(M):
    """Max over the right-hand axis, then softmax over document positions."""
    return nd.softmax_last_axis(nd.max_over_axis(M, axis=1))


def apply_attention(H_D, a):
    """C[i] = a[i] * H_D[i]."""
    return nd.broadcast_scale_rows(H_D, a)


def multi_stage_context(H_D, H_A, k, bound):
    """Stage 1 attends the document against the answer; every later stage
    attends it against the previous stage's context.  Returns (C(k), trace)."""
    if k < 1:
        raise nd.GraphError(f"stage count must be >= 1, got {k}")
    attentions = []
    right = H_A
    C = None
    for s in range(1, k + 1):
        M = affinity_matrix(H_D, right, bound[f"att.W{s}"], bound[f"att.b{s}"])
        a = attention_from_affinity(M)
        C = apply_attention(H_D, a)
        attentions.append(a)
        right = C
    return C, attentions


def mask_answer(C_k, answer_span, mask_vector):
    """Replace the answer-span rows with the learned mask vector.

    Implemented as keep*C + indicator*mask so gradients flow to the mask and
    out-of-span rows stay bit-identical (x*1 + 0 == x).
    """
    m, n = answer_span
    l = C_k.shape[0]
    if not (0 <= m <= n < l):
        raise nd.GraphError(f"mask_answer: span ({m},{n}) out of bounds for {l} rows")
    dtype = C_k.value.dtype
    keep = np.ones(l, dtype=dtype)
    keep[m:n + 1] = 0.0
    indicator = np.zeros((l, 1), dtype=dtype)
    indicator[m:n + 1, 0] = 1.0
    return nd.add(nd.broadcast_scale_rows(C_k, keep),
                  nd.elementwise_mul(nd.DiffArray(indicator), mask_vector))


def encode_example(doc_ids, ans_ids, answer_span, emb_table, bound, config):
    """Full encoder pipeline (Eqs. of the stage/mask pipeline) -> EncodedInput."""
    H_D, H_A = encode_sequences(doc_ids, ans_ids, emb_table, bound, config)
    if config.use_attention:
        C_k, attentions = multi_stage_context(H_D, H_A, config.stages, bound)
    else:
        C_k, attentions = H_D, []
    if config.use_mask:
        C_final = mask_answer(C_k, answer_span, bound["mask.vector"])
    else:
        C_final = C_k
    return EncodedInput(H_D, H_A, attentions, C_final, tuple(answer_span))
