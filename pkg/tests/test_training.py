import numpy as np
import pytest

from dialact.corpus import EncodedExample, EncodedWindow, Example, build_vocabs
from dialact.errors import NumericalError
from dialact.generator import default_spec, gen_synthetic
from dialact.corpus import parse_corpus
from dialact.nlu import NluParams
from dialact.neural import LstmParams
from dialact.optim import grad_check, named_arrays
from dialact.sap import SapParams
from dialact.training import (
    JointParams,
    TrainConfig,
    evaluate,
    init_joint_params,
    joint_step,
    make_config,
    train,
    tune_thresholds,
    write_trainlog,
)


def zero_lstm(inp, hid):
    return LstmParams(np.zeros((4 * hid, inp)), np.zeros((4 * hid, hid)), np.zeros(4 * hid))


def zero_joint_params(vocab=10, embed=4, hidden=3, M=5, N=3, K=4):
    nlu = NluParams(
        embedding=np.zeros((vocab, embed)),
        trunk_fwd=zero_lstm(embed, hidden),
        trunk_bwd=zero_lstm(embed, hidden),
        w_tag_fwd=np.zeros((M, hidden)),
        w_tag_bwd=np.zeros((M, hidden)),
        b_tag=np.zeros(M),
        intent_lstm=zero_lstm(2 * hidden, hidden),
        w_int=np.zeros((N, hidden)),
        b_int=np.zeros(N),
        feature_lstm=zero_lstm(2 * hidden, M + N),
    )
    sap = SapParams(
        fwd=zero_lstm(M + N, hidden),
        bwd=zero_lstm(M + N, hidden),
        w_act_fwd=np.zeros((K, hidden)),
        w_act_bwd=np.zeros((K, hidden)),
        b_act=np.zeros(K),
    )
    return JointParams(nlu=nlu, sap=sap)


def window_of(turn_specs, window_len, vocab=10, M=5, N=3, K=4, rng=None):
    rng = rng or np.random.default_rng(0)
    turns = [None] * (window_len - len(turn_specs))
    for T in turn_specs:
        turns.append(
            EncodedExample(
                word_ids=rng.integers(0, vocab, size=T),
                tag_ids=rng.integers(0, M, size=T),
                intent_ids=frozenset({int(rng.integers(0, N))}),
                action_ids=frozenset({int(rng.integers(0, K))}),
            )
        )
    return EncodedWindow(turns=turns)


def tiny_corpus(n_sessions=12, seed=0):
    spec = default_spec()
    spec["splits"] = {"train_sessions": n_sessions, "dev_sessions": 4, "test_sessions": 4}
    return spec, seed


class TestJointStep:
    def test_zero_model_closed_form(self):
        # I=2 real turns of 3 tokens each: loss = K ln2 + 2*(3 ln M) + 2*(N ln 2)
        params = zero_joint_params(M=5, N=3, K=4)
        cfg = TrainConfig(mode="joint", history_I=2, dropout_rate=0.0)
        window = window_of([3, 3], window_len=2)
        losses, _ = joint_step(window, params, cfg, training=False)
        assert losses.act == pytest.approx(4 * np.log(2), abs=1e-9)
        assert losses.tag == pytest.approx(2 * 3 * np.log(5), abs=1e-9)
        assert losses.intent == pytest.approx(2 * 3 * np.log(2), abs=1e-9)
        expected = 4 * np.log(2) + 6 * np.log(5) + 6 * np.log(2)
        assert losses.total == pytest.approx(expected, abs=1e-9)

    def test_total_is_sum_of_components(self):
        rng = np.random.default_rng(1)
        cfg = TrainConfig(mode="joint", history_I=3, dropout_rate=0.0, embed_dim=4, hidden_dim=3)
        vocabs_rng = np.random.default_rng(2)
        params = init_joint_params(
            cfg, _fake_vocabs(vocab=10, M=5, N=3, K=4), vocabs_rng
        )
        for _ in range(20):
            window = window_of([2, 3], window_len=3, rng=rng)
            losses, _ = joint_step(window, params, cfg, training=False)
            assert losses.total == losses.act + losses.tag + losses.intent

    def test_padding_final_slot_rejected(self):
        params = zero_joint_params()
        cfg = TrainConfig(mode="joint", history_I=2, dropout_rate=0.0)
        window = window_of([2], window_len=2)
        window.turns.reverse()  # padding now in final slot
        with pytest.raises(ValueError):
            joint_step(window, params, cfg, training=False)

    def test_sap_pathway_reaches_nlu_parameters(self):
        # with tag and intent losses masked, gradients still flow into every
        # NLU tensor through the action predictor, and they are exact
        from dialact.optim import accumulate

        rng = np.random.default_rng(3)
        cfg = TrainConfig(mode="joint", history_I=3, dropout_rate=0.0, embed_dim=4, hidden_dim=4)
        params = init_joint_params(cfg, _fake_vocabs(vocab=8, M=4, N=3, K=3), rng)
        for _, arr in named_arrays(params):
            arr *= 2.5  # keep gradient coordinates above finite-difference noise
        windows = [
            window_of([4, 5, 6], window_len=3, vocab=8, M=4, N=3, K=3, rng=rng),
            window_of([5, 6], window_len=3, vocab=8, M=4, N=3, K=3, rng=rng),
        ]

        def loss(p):
            total = 0.0
            for w in windows:
                losses, _ = joint_step(
                    w, p, cfg, training=False,
                    include_tag_loss=False, include_int_loss=False, compute_grads=False,
                )
                total += losses.total
            return total

        grads = None
        for w in windows:
            _, g = joint_step(
                w, params, cfg, training=False, include_tag_loss=False, include_int_loss=False
            )
            if grads is None:
                grads = g
            else:
                accumulate(grads, g)
        assert np.abs(grads.nlu.embedding).sum() > 0.0
        report = grad_check(loss, params, 1e-5, analytic=grads)
        assert report.max_rel_error < 1e-4


def _fake_vocabs(vocab, M, N, K):
    from dialact.corpus import Vocab, VocabSet

    def v(n, prefix):
        return Vocab.from_tokens([f"{prefix}{i}" for i in range(n)])

    return VocabSet(words=v(vocab, "w"), tags=v(M, "t"), intents=v(N, "i"), actions=v(K, "a"))


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("smallc")
    spec, seed = tiny_corpus(n_sessions=12)
    gen_synthetic(spec, seed=seed, out_dir=out)
    return (
        parse_corpus(out / "train.jsonl"),
        parse_corpus(out / "dev.jsonl"),
        parse_corpus(out / "test.jsonl"),
    )


class TestTrain:
    def test_deterministic_runs(self, small_corpus):
        tr, dv, _ = small_corpus
        cfg = make_config("desk", epochs=2, seed=5, dev_eval_every=1)
        r1 = train(cfg, tr, dv)
        r2 = train(cfg, tr, dv)
        assert [rec.to_record() for rec in r1.log] == [rec.to_record() for rec in r2.log]
        for (n1, a1), (n2, a2) in zip(named_arrays(r1.params), named_arrays(r2.params)):
            assert n1 == n2
            assert np.array_equal(a1, a2)

    def test_zero_learning_rate_freezes_params(self, small_corpus):
        tr, _, _ = small_corpus
        cfg = make_config("desk", epochs=2, seed=5, learning_rate=0.0, dev_eval_every=0)
        result = train(cfg, tr, None)
        fresh = init_joint_params(cfg, result.vocabs, np.random.default_rng(cfg.seed))
        for (n1, a1), (n2, a2) in zip(named_arrays(result.params), named_arrays(fresh)):
            assert n1 == n2
            assert np.array_equal(a1, a2)

    def test_loss_halves_by_epoch_50(self, tmp_path):
        spec = default_spec()
        spec["splits"] = {"train_sessions": 25, "dev_sessions": 3, "test_sessions": 3}
        gen_synthetic(spec, seed=3, out_dir=tmp_path)
        tr = parse_corpus(tmp_path / "train.jsonl")
        cfg = make_config("desk", epochs=50, seed=0, dev_eval_every=0)
        result = train(cfg, tr, None)
        assert result.log[49].loss < 0.5 * result.log[0].loss

    def test_empty_corpus_rejected(self):
        cfg = make_config("desk", epochs=1)
        with pytest.raises(ValueError):
            train(cfg, [], None)

    def test_pipeline_and_oracle_modes(self, small_corpus):
        tr, dv, te = small_corpus
        for mode in ("pipeline", "oracle-sap"):
            cfg = make_config("desk", mode=mode, epochs=3, seed=1, dev_eval_every=0)
            result = train(cfg, tr, dv)
            assert result.log[-1].loss < result.log[0].loss
            if mode == "oracle-sap":
                assert result.params.nlu is None
            thr = tune_thresholds(result.params, dv, result.vocabs, cfg, mode)
            report = evaluate(result.params, te, result.vocabs, cfg, thr, mode)
            assert "actions" in report.tasks
            if mode == "oracle-sap":
                assert set(report.tasks) == {"actions"}

    def test_non_finite_loss_aborts(self, small_corpus):
        tr, _, _ = small_corpus
        cfg = make_config("desk", epochs=1, seed=0, dev_eval_every=0)
        vocabs = build_vocabs(tr)
        params = init_joint_params(cfg, vocabs, np.random.default_rng(0))
        params.nlu.embedding[:] = np.nan
        with pytest.raises(NumericalError):
            train(cfg, tr, None, init_params=params)

    def test_trainlog_records_deterministic_fields(self, small_corpus, tmp_path):
        tr, dv, _ = small_corpus
        cfg = make_config("desk", epochs=2, seed=5, dev_eval_every=2)
        result = train(cfg, tr, dv)
        path = tmp_path / "log.jsonl"
        write_trainlog(result.log, path)
        import json

        lines = path.read_text().strip().split("\n")
        assert len(lines) == 2
        first = json.loads(lines[0])
        assert set(first) == {"epoch", "loss", "loss_act", "loss_tag", "loss_int"}
        second = json.loads(lines[1])
        assert "dev" in second and "seconds" not in second


class TestEvaluate:
    def test_gold_predicting_model_scores_one(self):
        # constant-output model built from biases alone: every token is B-x,
        # every utterance carries intent i0 and action a0
        sessions = [
            [
                Example("s", 0, ["w1", "w2"], ["B-x", "B-x"], {"i0"}, {"a0"}),
                Example("s", 1, ["w3"], ["B-x"], {"i0"}, {"a0"}),
                Example("s", 2, ["w1"], ["B-x"], {"i0"}, {"a0"}),
            ]
        ]
        vocabs = build_vocabs(sessions)
        params = zero_joint_params(
            vocab=len(vocabs.words), M=vocabs.n_tags, N=vocabs.n_intents, K=vocabs.n_actions
        )
        params.nlu.b_tag[vocabs.tags.id("B-x")] = 10.0
        params.nlu.b_int[vocabs.intents.id("i0")] = 10.0
        params.nlu.b_int[0] = -10.0  # suppress the reserved UNK intent
        params.sap.b_act[vocabs.actions.id("a0")] = 10.0
        params.sap.b_act[0] = -10.0
        cfg = TrainConfig(mode="joint", history_I=2, dropout_rate=0.0)
        report = evaluate(params, sessions, vocabs, cfg, {"intent": 0.5, "action": 0.5}, "joint")
        for task in ("tags", "intents", "actions"):
            assert report.tasks[task].frame_accuracy == 1.0
            assert report.tasks[task].f1 == 1.0
        assert report.nlu_frame_accuracy == 1.0

    def test_hand_counted_uniform_model(self):
        # zero parameters: tags argmax to id 0 (UNK), intents/actions sit at
        # 0.5 so an inclusive 0.5 threshold predicts every label
        sessions = [
            [
                Example("s", 0, ["a", "b"], ["B-x", "O"], {"i0"}, {"a0"}),
                Example("s", 1, ["c"], ["O"], {"i0", "i1"}, {"a0", "a1"}),
                Example("s", 2, ["a"], ["B-x"], {"i1"}, {"a1"}),
            ]
        ]
        vocabs = build_vocabs(sessions)
        M, N, K = vocabs.n_tags, vocabs.n_intents, vocabs.n_actions
        assert (M, N, K) == (3, 3, 3)  # UNK + B-x + O, UNK + i0 + i1, UNK + a0 + a1
        params = zero_joint_params(vocab=len(vocabs.words), M=M, N=N, K=K)
        cfg = TrainConfig(mode="joint", history_I=2, dropout_rate=0.0)
        report = evaluate(params, sessions, vocabs, cfg, {"intent": 0.5, "action": 0.5}, "joint")
        # tags: every token predicted UNK (non-O): 4 tokens, gold non-O at 2
        tags = report.tasks["tags"]
        assert (tags.tp, tags.fp, tags.fn) == (0, 4, 2)
        assert tags.frame_accuracy == 0.0
        # intents: every frame predicts {UNK, i0, i1}; gold sizes 1, 2, 1
        intents = report.tasks["intents"]
        assert (intents.tp, intents.fp, intents.fn) == (4, 5, 0)
        assert intents.frame_accuracy == 0.0
        assert intents.precision == pytest.approx(4 / 9)
        assert intents.recall == 1.0
        actions = report.tasks["actions"]
        assert (actions.tp, actions.fp, actions.fn) == (4, 5, 0)

    def test_pipeline_and_joint_share_nlu_outputs(self, small_corpus):
        tr, dv, _ = small_corpus
        cfg = make_config("desk", epochs=2, seed=9, dev_eval_every=0)
        result = train(cfg, tr, None)
        thr = {"intent": 0.5, "action": 0.5}
        rep_joint = evaluate(result.params, dv, result.vocabs, cfg, thr, "joint")
        rep_pipe = evaluate(result.params, dv, result.vocabs, cfg, thr, "pipeline")
        for task in ("tags", "intents"):
            assert rep_joint.tasks[task] == rep_pipe.tasks[task]

    def test_threshold_validation(self, small_corpus):
        tr, _, _ = small_corpus
        vocabs = build_vocabs(tr)
        params = zero_joint_params(
            vocab=len(vocabs.words), M=vocabs.n_tags, N=vocabs.n_intents, K=vocabs.n_actions
        )
        cfg = TrainConfig(mode="joint", history_I=2, dropout_rate=0.0)
        with pytest.raises(ValueError):
            evaluate(params, tr, vocabs, cfg, {"intent": 1.5, "action": 0.5}, "joint")

    def test_parallel_evaluation_matches_sequential(self, small_corpus):
        tr, dv, _ = small_corpus
        cfg = make_config("desk", epochs=1, seed=2, dev_eval_every=0)
        result = train(cfg, tr, None)
        thr = {"intent": 0.4, "action": 0.4}
        seq = evaluate(result.params, dv, result.vocabs, cfg, thr, "joint", parallelism=1)
        par = evaluate(result.params, dv, result.vocabs, cfg, thr, "joint", parallelism=4)
        assert seq == par

    def test_null_action_exclusion_flag(self, small_corpus):
        # excluding NULL changes the action PRF counts but never frame accuracy
        tr, dv, _ = small_corpus
        cfg = make_config("desk", epochs=1, seed=2, dev_eval_every=0)
        result = train(cfg, tr, None)
        thr = {"intent": 0.5, "action": 0.5}
        counted = evaluate(result.params, dv, result.vocabs, cfg, thr, "joint")
        cfg_no_null = make_config("desk", epochs=1, seed=2, dev_eval_every=0, count_null_action=False)
        excluded = evaluate(result.params, dv, result.vocabs, cfg_no_null, thr, "joint")
        a, b = counted.tasks["actions"], excluded.tasks["actions"]
        assert a.frame_accuracy == b.frame_accuracy
        assert (a.tp + a.fp + a.fn) != (b.tp + b.fp + b.fn)

    def test_history_only_window_semantics_train(self, small_corpus):
        tr, _, _ = small_corpus
        cfg = make_config(
            "desk", epochs=1, seed=0, dev_eval_every=0, history_I=3, history_counts_current=False
        )
        result = train(cfg, tr, None)
        assert len(result.log) == 1


class TestConfig:
    def test_presets(self):
        desk = make_config("desk")
        paper = make_config("paper")
        assert desk.embed_dim == 32 and desk.hidden_dim == 32
        assert paper.embed_dim == 512 and paper.hidden_dim == 256
        assert paper.epochs == 300 and paper.history_I == 5
        assert paper.dropout_rate == 0.5 and paper.batch_size == 32

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            make_config("huge")

    def test_invalid_values(self):
        with pytest.raises(ValueError):
            make_config("desk", mode="bogus")
        with pytest.raises(ValueError):
            make_config("desk", dropout_rate=1.0)
        with pytest.raises(ValueError):
            make_config("desk", history_I=0)

    def test_window_semantics_switch(self):
        total = make_config("desk", history_I=4)
        history_only = make_config("desk", history_I=4, history_counts_current=False)
        assert total.window_len == 4
        assert history_only.window_len == 3
