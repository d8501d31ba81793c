"""End-to-end finite-difference verification of the full model."""

from __future__ import annotations

import numpy as np

from . import ndcore as nd
from .corpus import Example, Vocab, RESERVED
from .decoder import example_loss
from .model import ModelConfig, ParamSet, QGModel


def tiny_example():
    doc = ["the", "unit", "was", "dissolved", "in", "1985"]
    return Example(id="g0", doc_tokens=doc, answer_span=(5, 5),
                   question_tokens=["what", "year", "?"])


def tiny_vocab(example):
    words = sorted(set(example.doc_tokens + example.question_tokens))
    return Vocab(list(RESERVED) + words)


def full_model_grad_check(d=8, stages=2, seed=7, epsilon=1e-4, tolerance=1e-3,
                          example=None):
    """Check every trainable parameter of a small 64-bit model against
    central finite differences.  Returns (name, max_rel_err, passed) rows.

    The default step is 1e-4: the loss passes through a few thousand float64
    ops, and a smaller step drowns small gradient components in rounding
    noise.
    """
    ex = example or tiny_example()
    vocab = tiny_vocab(ex)
    config = ModelConfig(d=d, d_emb=d, stages=stages, seed=seed,
                         dtype="float64")
    model = QGModel.init(config, vocab)
    names = model.params.names()

    def f(values):
        ps = ParamSet()
        for n, v in zip(names, values):
            ps.add(n, v)
        probe = QGModel(config, vocab, model.embeddings, ps)
        tape = nd.Tape()
        return example_loss(probe, ex, tape)

    params = [nd.DiffArray(np.asarray(model.params[n], dtype=np.float64),
                           name=n) for n in names]
    return nd.grad_check(f, params, epsilon=epsilon, tolerance=tolerance)
