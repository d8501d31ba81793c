import numpy as np
import pytest

import docqg.ndcore as nd
from docqg import encoder
from docqg.corpus import Example, RESERVED, Vocab, random_embeddings
from docqg.decoder import example_loss
from docqg.model import ModelConfig, QGModel, init_params


def make_model(d=8, stages=2, dtype="float64", **kw):
    vocab = Vocab(list(RESERVED) + ["a", "b", "c", "d", "e", "f"])
    config = ModelConfig(d=d, d_emb=kw.pop("d_emb", d), stages=stages,
                         dtype=dtype, seed=3, **kw)
    return QGModel.init(config, vocab)


def bound_of(model):
    return model.params.bind(None)


class TestEncodeSequences:
    def test_shapes(self):
        model = make_model(d=8)
        H_D, H_A = encoder.encode_sequences(
            [5, 6, 7, 8], [6, 7], nd.DiffArray(model.embeddings.matrix),
            bound_of(model), model.config)
        assert H_D.shape == (4, 8)
        assert H_A.shape == (2, 8)

    def test_zero_weights_give_zero_states(self):
        model = make_model(d=8)
        for n in model.params.names():
            if n.startswith("enc."):
                model.params[n] = np.zeros_like(model.params[n])
        H_D, _ = encoder.encode_sequences(
            [5, 6], [6], nd.DiffArray(model.embeddings.matrix),
            bound_of(model), model.config)
        np.testing.assert_array_equal(H_D.value, 0.0)

    def test_empty_sequence_rejected(self):
        model = make_model()
        with pytest.raises(nd.GraphError, match="empty"):
            encoder.encode_sequences([], [5],
                                     nd.DiffArray(model.embeddings.matrix),
                                     bound_of(model), model.config)

    def test_matches_stepwise_scalar_recurrence(self):
        # independent step-by-step oracle over the gate arithmetic
        model = make_model(d=4)
        bound = bound_of(model)
        emb = model.embeddings.matrix
        ids = [5, 6, 7]
        H_D, _ = encoder.encode_sequences(
            ids, [5], nd.DiffArray(emb), bound, model.config)

        def sig(x):
            return 1.0 / (1.0 + np.exp(-x))

        def run_dir(prefix, seq):
            W = model.params[f"{prefix}.W"]
            U = model.params[f"{prefix}.U"]
            b = model.params[f"{prefix}.b"]
            hdim = U.shape[0]
            h = np.zeros(hdim)
            c = np.zeros(hdim)
            states = []
            for t in seq:
                pre = emb[t] @ W + h @ U + b
                i, f, o, g = (pre[:hdim], pre[hdim:2 * hdim],
                              pre[2 * hdim:3 * hdim], pre[3 * hdim:])
                c = sig(f) * c + sig(i) * np.tanh(g)
                h = sig(o) * np.tanh(c)
                states.append(h.copy())
            return states

        fwd = run_dir("enc.fwd", ids)
        bwd = run_dir("enc.bwd", ids[::-1])[::-1]
        expect = np.hstack([np.array(fwd), np.array(bwd)])
        np.testing.assert_allclose(H_D.value, expect, rtol=1e-10)

    def test_shared_weights_between_doc_and_answer(self):
        model = make_model(d=4)
        bound = bound_of(model)
        emb = nd.DiffArray(model.embeddings.matrix)
        H_D, H_A = encoder.encode_sequences([5, 6], [5, 6], emb, bound,
                                            model.config)
        np.testing.assert_array_equal(H_D.value, H_A.value)


class TestAffinity:
    def test_zero_transform_constant_affinity(self):
        d = 6
        H = nd.DiffArray(np.random.default_rng(0).normal(size=(3, d)))
        W = nd.DiffArray(np.zeros((d, d)))
        b = nd.DiffArray(np.zeros(d))
        M = encoder.affinity_matrix(H, H, W, b)
        np.testing.assert_allclose(M.value, 0.25 * d)

    def test_dot_product_arithmetic(self):
        # F outputs [0.5, 1.0] and [0.2, 0.4] -> M = [[0.5]]
        left = np.array([[0.5, 1.0]])
        right = np.array([[0.2, 0.4]])
        M = nd.matmul(nd.DiffArray(left), nd.transpose(nd.DiffArray(right)))
        np.testing.assert_allclose(M.value, [[0.5]])

    def test_random_case_matches_direct_script(self):
        rng = np.random.default_rng(4)
        d = 2
        HL, HR = rng.normal(size=(3, d)), rng.normal(size=(3, d))
        W, b = rng.normal(size=(d, d)), rng.normal(size=d)
        M = encoder.affinity_matrix(*map(nd.DiffArray, (HL, HR, W, b)))

        def F(x):
            return 1.0 / (1.0 + np.exp(-(x @ W + b)))

        expect = np.array([[F(hl) @ F(hr) for hr in HR] for hl in HL])
        np.testing.assert_allclose(M.value, expect, rtol=1e-10)

    def test_entries_bounded_by_width(self):
        rng = np.random.default_rng(5)
        d = 8
        H = nd.DiffArray(rng.normal(size=(4, d)) * 10)
        M = encoder.affinity_matrix(H, H, nd.DiffArray(rng.normal(size=(d, d))),
                                    nd.DiffArray(rng.normal(size=d)))
        assert np.all(M.value > 0) and np.all(M.value < d)

    def test_width_mismatch_rejected(self):
        with pytest.raises(nd.GraphError, match="width"):
            encoder.affinity_matrix(nd.DiffArray(np.ones((2, 3))),
                                    nd.DiffArray(np.ones((2, 4))),
                                    nd.DiffArray(np.ones((4, 4))),
                                    nd.DiffArray(np.ones(4)))


class TestAttention:
    def test_identical_rows_uniform(self):
        M = nd.DiffArray(np.tile([0.3, 0.7], (5, 1)))
        a = encoder.attention_from_affinity(M)
        np.testing.assert_allclose(a.value, 0.2)

    def test_max_then_softmax(self):
        M = nd.DiffArray(np.array([[0.2, 0.9], [0.5, 0.1], [0.3, 0.3]]))
        a = encoder.attention_from_affinity(M)
        e = np.exp([0.9, 0.5, 0.3])
        np.testing.assert_allclose(a.value, e / e.sum(), rtol=1e-12)

    def test_single_row(self):
        a = encoder.attention_from_affinity(nd.DiffArray(np.array([[0.4, 0.2]])))
        np.testing.assert_allclose(a.value, [1.0])

    def test_apply_uniform(self):
        H = nd.DiffArray(np.arange(12.0).reshape(4, 3))
        C = encoder.apply_attention(H, nd.DiffArray(np.full(4, 0.25)))
        np.testing.assert_allclose(C.value, H.value / 4)

    def test_apply_one_hot(self):
        H = nd.DiffArray(np.arange(12.0).reshape(4, 3))
        a = np.zeros(4)
        a[2] = 1.0
        C = encoder.apply_attention(H, nd.DiffArray(a))
        np.testing.assert_array_equal(C.value[2], H.value[2])
        assert np.all(C.value[[0, 1, 3]] == 0)

    def test_apply_length_mismatch(self):
        with pytest.raises(nd.GraphError):
            encoder.apply_attention(nd.DiffArray(np.ones((4, 3))),
                                    nd.DiffArray(np.ones(3)))


class TestMultiStage:
    def _inputs(self, model, l_d=4, l_a=2):
        rng = np.random.default_rng(11)
        d = model.config.d
        return (nd.DiffArray(rng.normal(size=(l_d, d))),
                nd.DiffArray(rng.normal(size=(l_a, d))))

    def test_stage_one_equals_manual_pipeline(self):
        model = make_model(stages=1)
        H_D, H_A = self._inputs(model)
        bound = bound_of(model)
        C, attns = encoder.multi_stage_context(H_D, H_A, 1, bound)
        M = encoder.affinity_matrix(H_D, H_A, bound["att.W1"], bound["att.b1"])
        a = encoder.attention_from_affinity(M)
        expect = encoder.apply_attention(H_D, a)
        np.testing.assert_array_equal(C.value, expect.value)
        assert len(attns) == 1

    def test_stage_two_composes_stage_operations(self):
        model = make_model(stages=2)
        H_D, H_A = self._inputs(model)
        bound = bound_of(model)
        C2, attns = encoder.multi_stage_context(H_D, H_A, 2, bound)
        C1, _ = encoder.multi_stage_context(H_D, H_A, 1, bound)
        M2 = encoder.affinity_matrix(H_D, C1, bound["att.W2"], bound["att.b2"])
        a2 = encoder.attention_from_affinity(M2)
        expect = encoder.apply_attention(H_D, a2)
        np.testing.assert_allclose(C2.value, expect.value, rtol=1e-12)
        assert len(attns) == 2

    def test_stage_three_still_probability_vector(self):
        model = make_model(stages=3)
        H_D, H_A = self._inputs(model)
        _, attns = encoder.multi_stage_context(H_D, H_A, 3, bound_of(model))
        for a in attns:
            assert np.all(a.value >= 0)
            assert abs(a.value.sum() - 1.0) < 1e-6

    def test_k_zero_rejected(self):
        model = make_model()
        H_D, H_A = self._inputs(model)
        with pytest.raises(nd.GraphError, match=">= 1"):
            encoder.multi_stage_context(H_D, H_A, 0, bound_of(model))


class TestMaskAnswer:
    def test_span_rows_replaced(self):
        C = nd.DiffArray(np.arange(18.0).reshape(6, 3))
        mask = nd.DiffArray(np.array([9.0, 9.0, 9.0]))
        out = encoder.mask_answer(C, (5, 5), mask)
        np.testing.assert_array_equal(out.value[5], mask.value)
        np.testing.assert_array_equal(out.value[:5], C.value[:5])

    def test_whole_document_span(self):
        C = nd.DiffArray(np.ones((3, 2)))
        mask = nd.DiffArray(np.array([5.0, 6.0]))
        out = encoder.mask_answer(C, (0, 2), mask)
        np.testing.assert_array_equal(out.value, np.tile([5.0, 6.0], (3, 1)))

    def test_zero_mask_vector(self):
        C = nd.DiffArray(np.ones((4, 2)))
        out = encoder.mask_answer(C, (1, 2), nd.DiffArray(np.zeros(2)))
        assert np.all(out.value[1:3] == 0)

    def test_out_of_bounds_rejected(self):
        C = nd.DiffArray(np.ones((4, 2)))
        with pytest.raises(nd.GraphError, match="out of bounds"):
            encoder.mask_answer(C, (3, 4), nd.DiffArray(np.zeros(2)))

    def test_out_of_span_rows_bit_identical(self):
        rng = np.random.default_rng(12)
        C = nd.DiffArray(rng.normal(size=(6, 4)))
        out = encoder.mask_answer(C, (2, 3), nd.DiffArray(rng.normal(size=4)))
        assert np.array_equal(out.value[[0, 1, 4, 5]], C.value[[0, 1, 4, 5]])


class TestEncoderProperties:
    def test_attention_probability_vectors_every_stage(self):
        model = make_model(stages=3)
        ex = Example(id="p", doc_tokens=["a", "b", "c", "d"],
                     answer_span=(1, 2), question_tokens=["e", "f"])
        enc = encoder.encode_example(
            model.vocab.encode(ex.doc_tokens),
            model.vocab.encode(ex.answer_tokens), ex.answer_span,
            nd.DiffArray(model.embeddings.matrix), bound_of(model),
            model.config)
        for a in enc.attentions:
            assert np.all(a.value >= 0)
            assert abs(a.value.sum() - 1.0) < 1e-6

    def test_permutation_consistency_identity_encoder(self):
        # with the recurrent layer replaced by the embedding pass-through,
        # permuting document positions permutes stage-1 attention identically
        model = make_model(d=8, d_emb=8, stages=1, encoder_kind="identity")
        bound = bound_of(model)
        emb = nd.DiffArray(model.embeddings.matrix)
        doc = [5, 6, 7, 8]
        perm = [2, 0, 3, 1]
        enc = encoder.encode_example(doc, [6], (1, 1), emb, bound, model.config)
        enc_p = encoder.encode_example([doc[i] for i in perm], [6], (3, 3),
                                       emb, bound, model.config)
        np.testing.assert_allclose(enc_p.attentions[0].value,
                                   enc.attentions[0].value[perm], rtol=1e-12)

    def test_gradients_reach_every_encoder_param(self):
        model = make_model(d=8, stages=2)
        ex = Example(id="g", doc_tokens=["a", "b", "c", "d"],
                     answer_span=(2, 2), question_tokens=["e", "f"])
        tape = nd.Tape()
        loss = example_loss(model, ex, tape)
        grads = tape.backward(loss)
        by_name = {tape.leaf_names[nid]: g for nid, g in grads.items()
                   if nid in tape.leaf_names}
        for name in model.params.names():
            assert name in by_name, f"no gradient for {name}"
            assert np.any(by_name[name] != 0), f"gradient for {name} is zero"
