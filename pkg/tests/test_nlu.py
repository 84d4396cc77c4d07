import numpy as np
import pytest

from dialact.corpus import bits_from_ids
from dialact.neural import LstmParams
from dialact.nlu import (
    NluParams,
    decode_multilabel,
    decode_tags,
    init_nlu_params,
    nlu_backward,
    nlu_forward,
    nlu_loss,
)
from dialact.optim import grad_check, named_arrays


def zero_lstm(input_dim, hidden_dim):
    return LstmParams(
        w_x=np.zeros((4 * hidden_dim, input_dim)),
        u_h=np.zeros((4 * hidden_dim, hidden_dim)),
        b=np.zeros(4 * hidden_dim),
    )


def zero_nlu_params(vocab=11, embed=4, hidden=3, n_tags=5, n_intents=3):
    return NluParams(
        embedding=np.zeros((vocab, embed)),
        trunk_fwd=zero_lstm(embed, hidden),
        trunk_bwd=zero_lstm(embed, hidden),
        w_tag_fwd=np.zeros((n_tags, hidden)),
        w_tag_bwd=np.zeros((n_tags, hidden)),
        b_tag=np.zeros(n_tags),
        intent_lstm=zero_lstm(2 * hidden, hidden),
        w_int=np.zeros((n_intents, hidden)),
        b_int=np.zeros(n_intents),
        feature_lstm=zero_lstm(2 * hidden, n_tags + n_intents),
    )


class TestForward:
    def test_shapes(self):
        rng = np.random.default_rng(0)
        p = init_nlu_params(11, 4, 6, n_tags=5, n_intents=3, rng=rng)
        out = nlu_forward([1, 2, 3, 4, 5, 6, 7], p)
        assert out.tag_probs.shape == (7, 5)
        assert out.intent_probs.shape == (3,)
        assert out.feature.shape == (8,)

    def test_zero_parameters(self):
        p = zero_nlu_params()
        out = nlu_forward([0, 3, 7], p)
        assert np.allclose(out.tag_probs, 0.2)
        assert np.allclose(out.intent_probs, 0.5)
        assert np.array_equal(out.feature, np.zeros(8))

    def test_feature_length_independent_of_utterance_length(self):
        rng = np.random.default_rng(1)
        p = init_nlu_params(11, 4, 6, n_tags=5, n_intents=3, rng=rng)
        for T in (1, 4, 9):
            assert nlu_forward(list(range(T % 10 + 1)) * (T // 10 + 1), p).feature.shape == (8,)

    def test_out_of_range_id(self):
        p = zero_nlu_params(vocab=11)
        with pytest.raises(ValueError):
            nlu_forward([3, 11], p)
        with pytest.raises(ValueError):
            nlu_forward([], p)

    def test_inference_deterministic(self):
        rng = np.random.default_rng(2)
        p = init_nlu_params(11, 4, 6, n_tags=5, n_intents=3, rng=rng)
        a = nlu_forward([1, 2, 3], p)
        b = nlu_forward([1, 2, 3], p)
        assert np.array_equal(a.tag_probs, b.tag_probs)
        assert np.array_equal(a.intent_probs, b.intent_probs)
        assert np.array_equal(a.feature, b.feature)

    def test_reversal_with_swapped_directions(self):
        # reversing tokens and swapping the direction-specific trunk and tag
        # matrices reverses the per-token tag distributions
        rng = np.random.default_rng(3)
        p = init_nlu_params(11, 4, 6, n_tags=5, n_intents=3, rng=rng)
        ids = [1, 5, 2, 9, 4]
        swapped = NluParams(
            embedding=p.embedding,
            trunk_fwd=p.trunk_bwd,
            trunk_bwd=p.trunk_fwd,
            w_tag_fwd=p.w_tag_bwd,
            w_tag_bwd=p.w_tag_fwd,
            b_tag=p.b_tag,
            intent_lstm=p.intent_lstm,
            w_int=p.w_int,
            b_int=p.b_int,
            feature_lstm=p.feature_lstm,
        )
        base = nlu_forward(ids, p).tag_probs
        flipped = nlu_forward(ids[::-1], swapped).tag_probs
        assert np.allclose(flipped, base[::-1], atol=1e-12)

    def test_dropout_requires_rng(self):
        p = zero_nlu_params()
        with pytest.raises(ValueError):
            nlu_forward([1, 2], p, training=True, dropout_rate=0.5)


class TestDecoding:
    def test_argmax_row(self):
        assert decode_tags(np.array([[0.1, 0.7, 0.2]]))[0] == 1

    def test_tie_breaks_low(self):
        assert decode_tags(np.array([[0.25, 0.25, 0.25, 0.25]]))[0] == 0

    def test_monotone_transform_invariant(self):
        rng = np.random.default_rng(4)
        probs = rng.random((6, 5))
        probs /= probs.sum(axis=1, keepdims=True)
        transformed = 3.0 * probs + 1.0  # strictly monotone per-row transform
        assert np.array_equal(decode_tags(probs), decode_tags(transformed))

    def test_threshold_inclusive(self):
        assert decode_multilabel([0.45, 0.391, 0.1], 0.391) == {0, 1}

    def test_threshold_zero_selects_all(self):
        assert decode_multilabel([0.2, 0.001, 0.9], 0.0) == {0, 1, 2}

    def test_threshold_monotone(self):
        rng = np.random.default_rng(5)
        probs = rng.random(8)
        prev = decode_multilabel(probs, 0.0)
        for t in np.linspace(0.05, 1.0, 20):
            cur = decode_multilabel(probs, float(t))
            assert cur <= prev
            prev = cur

    def test_threshold_out_of_range(self):
        with pytest.raises(ValueError):
            decode_multilabel([0.5], 1.5)


class TestLoss:
    def test_perfect_predictions(self):
        out = nlu_forward([1, 2, 3, 4], zero_nlu_params())
        out.tag_probs = np.eye(5)[[0, 2, 1, 3]].astype(float)
        out.intent_probs = np.array([1.0, 0.0, 1.0])
        l_tag, l_int = nlu_loss(out, [0, 2, 1, 3], [1, 0, 1])
        assert l_tag < 1e-10
        assert l_int < 1e-10

    def test_zero_model_closed_form(self):
        out = nlu_forward([1, 2, 3, 4], zero_nlu_params(n_tags=5, n_intents=3))
        l_tag, l_int = nlu_loss(out, [0, 1, 2, 3], [1, 0, 0])
        assert l_tag == pytest.approx(4 * np.log(5), abs=1e-9)
        assert l_int == pytest.approx(3 * np.log(2), abs=1e-9)

    def test_matches_single_expression_recomputation(self):
        rng = np.random.default_rng(6)
        p = init_nlu_params(11, 4, 6, n_tags=5, n_intents=3, rng=rng)
        ids = [1, 7, 3, 2]
        gold_tags = [0, 4, 2, 1]
        gold_ints = bits_from_ids({0, 2}, 3)
        out = nlu_forward(ids, p)
        l_tag, l_int = nlu_loss(out, gold_tags, gold_ints)
        # independent one-expression tallies straight from the probabilities
        ref_tag = -sum(np.log(out.tag_probs[t, gold_tags[t]]) for t in range(4))
        ref_int = -float(
            np.sum(
                gold_ints * np.log(out.intent_probs)
                + (1 - gold_ints) * np.log(1 - out.intent_probs)
            )
        )
        assert l_tag == pytest.approx(ref_tag, abs=1e-12)
        assert l_int == pytest.approx(ref_int, abs=1e-12)

    def test_length_mismatch(self):
        out = nlu_forward([1, 2, 3], zero_nlu_params())
        with pytest.raises(Exception):
            nlu_loss(out, [0, 1], [1, 0, 0])


class TestGradients:
    def test_joint_tag_intent_gradient(self):
        rng = np.random.default_rng(7)
        p = init_nlu_params(9, 4, 5, n_tags=4, n_intents=3, rng=rng)
        ids = np.array([1, 4, 7, 2])
        gold_tags = np.array([0, 2, 1, 3])
        gold_int = bits_from_ids({0, 2}, 3)

        def loss(params):
            out = nlu_forward(ids, params)
            lt, li = nlu_loss(out, gold_tags, gold_int)
            return lt + li

        out = nlu_forward(ids, p)
        d_tag = out.tag_probs.copy()
        d_tag[np.arange(4), gold_tags] -= 1.0
        grads = nlu_backward(p, out, d_tag, out.intent_probs - gold_int, None)
        report = grad_check(loss, p, 1e-5, analytic=grads)
        assert report.max_rel_error < 1e-4

    def test_no_dead_parameters_in_joint_probe(self):
        # every array must see gradient from some input once the action path
        # is in play; exercised through joint_step in test_training
        from dialact.corpus import EncodedExample, EncodedWindow
        from dialact.training import JointParams, TrainConfig, joint_step
        from dialact.sap import init_sap_params

        rng = np.random.default_rng(8)
        nlu_p = init_nlu_params(9, 4, 5, n_tags=4, n_intents=3, rng=rng)
        sap_p = init_sap_params(7, 5, 4, rng)
        params = JointParams(nlu=nlu_p, sap=sap_p)
        cfg = TrainConfig(mode="joint", history_I=2, dropout_rate=0.0, embed_dim=4, hidden_dim=5)
        totals = {name: 0.0 for name, _ in named_arrays(params)}
        for _ in range(6):
            turns = [
                EncodedExample(
                    word_ids=rng.integers(0, 9, size=4),
                    tag_ids=rng.integers(0, 4, size=4),
                    intent_ids=frozenset({int(rng.integers(0, 3))}),
                    action_ids=frozenset({int(rng.integers(0, 4))}),
                )
                for _ in range(2)
            ]
            _, grads = joint_step(EncodedWindow(turns=turns), params, cfg, training=False)
            for name, arr in named_arrays(grads):
                totals[name] += float(np.abs(arr).sum())
        dead = [n for n, total in totals.items() if n.startswith("nlu.") and total == 0.0]
        assert not dead, f"NLU parameters with no gradient: {dead}"
        # the backward action direction reads out where it has consumed one
        # input, so its recurrence matrix is structurally untouched
        assert totals["sap.bwd.u_h"] == 0.0
