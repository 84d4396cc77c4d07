"""End-to-end training and evaluation.

Three modes share one loop:

* joint: every window runs the NLU stack on each real turn, the action
  predictor on the resulting feature sequence, and minimizes
  action + tag + intent loss with gradients flowing from the action head back
  into every NLU parameter.
* pipeline: the NLU is trained on tag+intent loss of each utterance; the
  action predictor is trained separately on gold one-hot turn encodings and
  consumes encoded NLU *predictions* at test time.
* oracle-sap: the action predictor alone, trained and tested on gold
  encodings; word-level inputs are never touched.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .corpus import (
    EncodedExample,
    EncodedWindow,
    Example,
    VocabSet,
    bits_from_ids,
    build_vocabs,
    encode_example,
    encode_windows,
)
from .errors import NonFiniteError, NumericalError
from .metrics import EvalReport, TaskMetrics, frame_accuracy, set_prf, token_prf, tune_threshold
from .nlu import (
    NluOutput,
    NluParams,
    decode_multilabel,
    decode_tags,
    init_nlu_params,
    nlu_backward,
    nlu_forward,
    nlu_loss,
)
from .optim import AdamState, accumulate, adam_update, clip_global_norm, grad_check, named_arrays
from .sap import (
    SapParams,
    TurnFeature,
    encode_oracle_turn,
    init_sap_params,
    padding_turn,
    sap_backward,
    sap_forward,
    sap_loss,
)

log = logging.getLogger(__name__)

MODES = ("joint", "pipeline", "oracle-sap")
NULL_ACTION = "NULL"
OUTSIDE_TAG = "O"


@dataclass
class TrainConfig:
    mode: str = "joint"
    batch_size: int = 32
    epochs: int = 300
    history_I: int = 5
    embed_dim: int = 512
    hidden_dim: int = 256
    dropout_rate: float = 0.5
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    grad_clip: float = 5.0
    max_utterance_len: int = 60
    # window length = history_I turns including the current one; the
    # alternative reading (history only) is available for comparison
    history_counts_current: bool = True
    dev_eval_every: int = 1
    count_null_action: bool = True

    @property
    def window_len(self) -> int:
        return self.history_I if self.history_counts_current else self.history_I - 1

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.history_I < 1 or self.window_len < 1:
            raise ValueError("history_I too small for the chosen window semantics")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


# Desk scale is the working default; "paper" restores the reference sizes
# (512/256 dims, I=5, dropout 0.5, 300 epochs) for full-size corpora.
PRESETS: dict[str, dict] = {
    "desk": dict(
        embed_dim=32,
        hidden_dim=32,
        history_I=3,
        epochs=30,
        dropout_rate=0.15,
        learning_rate=5e-3,
        batch_size=32,
        max_utterance_len=40,
    ),
    "paper": dict(
        embed_dim=512,
        hidden_dim=256,
        history_I=5,
        epochs=300,
        dropout_rate=0.5,
        learning_rate=1e-3,
        batch_size=32,
        max_utterance_len=60,
    ),
}


def make_config(preset: str = "desk", **overrides) -> TrainConfig:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    cfg = TrainConfig(**{**PRESETS[preset], **overrides})
    cfg.validate()
    return cfg


@dataclass
class JointParams:
    """All trainable arrays; nlu is None in oracle-sap mode."""

    nlu: NluParams | None
    sap: SapParams


def init_joint_params(cfg: TrainConfig, vocabs: VocabSet, rng: np.random.Generator) -> JointParams:
    nlu = None
    if cfg.mode != "oracle-sap":
        nlu = init_nlu_params(
            len(vocabs.words), cfg.embed_dim, cfg.hidden_dim, vocabs.n_tags, vocabs.n_intents, rng
        )
    sap = init_sap_params(vocabs.n_tags + vocabs.n_intents, cfg.hidden_dim, vocabs.n_actions, rng)
    return JointParams(nlu=nlu, sap=sap)


@dataclass
class LossParts:
    act: float
    tag: float
    intent: float

    @property
    def total(self) -> float:
        return self.act + self.tag + self.intent


def joint_step(
    window: EncodedWindow,
    params: JointParams,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
    *,
    training: bool = True,
    include_tag_loss: bool = True,
    include_int_loss: bool = True,
    compute_grads: bool = True,
) -> tuple[LossParts, JointParams | None]:
    """Forward and exact backward for one window in joint mode.

    Padding turns contribute a zero feature and no NLU loss. The returned
    gradients cover every parameter; NLU parameters receive contributions both
    from their own losses and from the action head through the feature inputs.
    """
    if params.nlu is None:
        raise ValueError("joint_step requires NLU parameters")
    if len(window.turns) != cfg.window_len:
        raise ValueError(
            f"malformed window: {len(window.turns)} slots, config expects {cfg.window_len}"
        )
    if window.turns[-1] is None:
        raise ValueError("malformed window: final slot must be a real turn")
    n_tags, n_intents = params.nlu.n_tags, params.nlu.n_intents
    feat_dim = n_tags + n_intents
    feats: list[TurnFeature] = []
    outs: list[NluOutput | None] = []
    l_tag = 0.0
    l_int = 0.0
    for ex in window.turns:
        if ex is None:
            feats.append(padding_turn(feat_dim))
            outs.append(None)
            continue
        out = nlu_forward(
            ex.word_ids, params.nlu, training=training, dropout_rate=cfg.dropout_rate, rng=rng
        )
        t_loss, i_loss = nlu_loss(out, ex.tag_ids, bits_from_ids(ex.intent_ids, n_intents))
        if include_tag_loss:
            l_tag += t_loss
        if include_int_loss:
            l_int += i_loss
        feats.append(TurnFeature(out.feature))
        outs.append(out)
    sap_out = sap_forward(feats, params.sap, expected_len=len(window.turns))
    act_bits = bits_from_ids(window.target.action_ids, params.sap.n_actions)
    l_act = sap_loss(sap_out.action_probs, act_bits)
    losses = LossParts(act=float(l_act), tag=float(l_tag), intent=float(l_int))
    if not compute_grads:
        return losses, None

    sap_grads, d_feats = sap_backward(params.sap, sap_out, sap_out.action_probs - act_bits)
    nlu_grads = None
    for idx, ex in enumerate(window.turns):
        if ex is None:
            continue
        out = outs[idx]
        d_tag = None
        if include_tag_loss:
            d_tag = out.tag_probs.copy()
            d_tag[np.arange(ex.tag_ids.shape[0]), ex.tag_ids] -= 1.0
        d_int = None
        if include_int_loss:
            d_int = out.intent_probs - bits_from_ids(ex.intent_ids, n_intents)
        g = nlu_backward(params.nlu, out, d_tag, d_int, d_feats[idx])
        if nlu_grads is None:
            nlu_grads = g
        else:
            accumulate(nlu_grads, g)
    return losses, JointParams(nlu=nlu_grads, sap=sap_grads)


def _sap_oracle_step(
    window: EncodedWindow, sap_params: SapParams, n_tags: int, n_intents: int
) -> tuple[float, SapParams]:
    """Action loss and gradients with gold one-hot turn encodings as input."""
    feats = [
        padding_turn(n_tags + n_intents)
        if ex is None
        else encode_oracle_turn(set(ex.tag_ids.tolist()), ex.intent_ids, n_tags, n_intents)
        for ex in window.turns
    ]
    sap_out = sap_forward(feats, sap_params, expected_len=len(window.turns))
    act_bits = bits_from_ids(window.target.action_ids, sap_params.n_actions)
    l_act = sap_loss(sap_out.action_probs, act_bits)
    sap_grads, _ = sap_backward(sap_params, sap_out, sap_out.action_probs - act_bits)
    return float(l_act), sap_grads


def _pipeline_step(
    window: EncodedWindow,
    params: JointParams,
    cfg: TrainConfig,
    rng: np.random.Generator | None,
) -> tuple[LossParts, JointParams]:
    """NLU loss on the window's target utterance plus a separate oracle-input
    SAP loss; the two parameter groups never exchange gradients."""
    target = window.target
    n_intents = params.nlu.n_intents
    out = nlu_forward(
        target.word_ids, params.nlu, training=True, dropout_rate=cfg.dropout_rate, rng=rng
    )
    int_bits = bits_from_ids(target.intent_ids, n_intents)
    l_tag, l_int = nlu_loss(out, target.tag_ids, int_bits)
    d_tag = out.tag_probs.copy()
    d_tag[np.arange(target.tag_ids.shape[0]), target.tag_ids] -= 1.0
    nlu_grads = nlu_backward(params.nlu, out, d_tag, out.intent_probs - int_bits, None)
    l_act, sap_grads = _sap_oracle_step(window, params.sap, params.nlu.n_tags, n_intents)
    return LossParts(act=l_act, tag=float(l_tag), intent=float(l_int)), JointParams(
        nlu=nlu_grads, sap=sap_grads
    )


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    loss_act: float
    loss_tag: float
    loss_int: float
    seconds: float
    dev: dict | None = None

    def to_record(self) -> dict:
        # wall-clock time is reported live but kept out of the persisted log
        # so identical runs stay byte-identical
        rec = {
            "epoch": self.epoch,
            "loss": self.loss,
            "loss_act": self.loss_act,
            "loss_tag": self.loss_tag,
            "loss_int": self.loss_int,
        }
        if self.dev is not None:
            rec["dev"] = self.dev
        return rec


@dataclass
class TrainResult:
    params: JointParams
    vocabs: VocabSet
    log: list[EpochRecord]
    config: TrainConfig


def train(
    cfg: TrainConfig,
    train_sessions: list[list[Example]],
    dev_sessions: list[list[Example]] | None = None,
    init_params: JointParams | None = None,
    progress=None,
) -> TrainResult:
    """Mini-batch Adam over per-utterance windows.

    Windows are reshuffled each epoch from the run seed; batch gradients are
    means over the batch, clipped at cfg.grad_clip global norm. Vocabularies
    come from the train split alone. Returns final-epoch parameters and one
    log record per epoch (dev metrics use thresholds tuned on dev).
    """
    cfg.validate()
    if not train_sessions or not any(train_sessions):
        raise ValueError("train: empty corpus")
    vocabs = build_vocabs(train_sessions)
    rng = np.random.default_rng(cfg.seed)
    params = init_params if init_params is not None else init_joint_params(cfg, vocabs, rng)
    windows = encode_windows(train_sessions, vocabs, cfg.window_len, cfg.max_utterance_len)
    if not windows:
        raise ValueError("train: no training windows")
    adam = AdamState.for_params(
        params,
        learning_rate=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        epsilon=cfg.epsilon,
    )
    if cfg.mode == "oracle-sap":
        log.info("mode=oracle-sap: word-level inputs ignored (gold tag/intent encodings only)")
    n_tags, n_intents = vocabs.n_tags, vocabs.n_intents
    records: list[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(windows))
        sums = np.zeros(3)  # act, tag, int
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grads = None
            batch_loss = 0.0
            try:
                for wi in batch:
                    window = windows[int(wi)]
                    if cfg.mode == "joint":
                        losses, g = joint_step(window, params, cfg, rng)
                    elif cfg.mode == "pipeline":
                        losses, g = _pipeline_step(window, params, cfg, rng)
                    else:
                        l_act, sap_g = _sap_oracle_step(window, params.sap, n_tags, n_intents)
                        losses = LossParts(act=l_act, tag=0.0, intent=0.0)
                        g = JointParams(nlu=None, sap=sap_g)
                    sums += (losses.act, losses.tag, losses.intent)
                    batch_loss += losses.total
                    if grads is None:
                        grads = g
                    else:
                        accumulate(grads, g)
            except NonFiniteError as exc:
                raise NumericalError(f"non-finite values in epoch {epoch}: {exc}") from exc
            if not np.isfinite(batch_loss):
                raise NumericalError(f"non-finite loss in epoch {epoch}")
            for _, arr in named_arrays(grads):
                arr /= len(batch)
            clip_global_norm(grads, cfg.grad_clip)
            params, adam = adam_update(params, grads, adam)
        n = len(windows)
        dev_rec = None
        if (
            dev_sessions
            and cfg.dev_eval_every > 0
            and (epoch % cfg.dev_eval_every == 0 or epoch == cfg.epochs)
        ):
            thresholds = tune_thresholds(params, dev_sessions, vocabs, cfg, cfg.mode)
            report = evaluate(params, dev_sessions, vocabs, cfg, thresholds, cfg.mode)
            dev_rec = report.to_record()
        record = EpochRecord(
            epoch=epoch,
            loss=float(sums.sum() / n),
            loss_act=float(sums[0] / n),
            loss_tag=float(sums[1] / n),
            loss_int=float(sums[2] / n),
            seconds=time.perf_counter() - started,
            dev=dev_rec,
        )
        records.append(record)
        if progress is not None:
            progress(record)
    return TrainResult(params=params, vocabs=vocabs, log=records, config=cfg)


def write_trainlog(records: list[EpochRecord], path) -> None:
    """One JSON object per epoch, deterministic for identical runs."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_record(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Evaluation


def _precompute(params, sessions, vocabs, cfg, mode, parallelism: int = 1):
    """Per-session encoded examples plus (for NLU modes) one forward pass per
    utterance, reused by every window that touches the utterance."""

    def one(session):
        enc = [encode_example(ex, vocabs, cfg.max_utterance_len) for ex in session]
        outs = None
        if mode != "oracle-sap":
            outs = [nlu_forward(e.word_ids, params.nlu, training=False) for e in enc]
        return enc, outs

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(one, sessions))
    return [one(s) for s in sessions]


def _window_action_probs(params, data, vocabs, cfg, mode, intent_threshold):
    """Action probabilities and gold action sets, one entry per utterance."""
    n_tags, n_intents = vocabs.n_tags, vocabs.n_intents
    feat_dim = n_tags + n_intents
    win = cfg.window_len
    probs_list: list[np.ndarray] = []
    gold_sets: list[set[int]] = []
    for enc, outs in data:
        feats: list[TurnFeature] = []
        for idx, e in enumerate(enc):
            if mode == "joint":
                feats.append(TurnFeature(outs[idx].feature))
            elif mode == "pipeline":
                pred_tags = set(decode_tags(outs[idx].tag_probs).tolist())
                pred_ints = decode_multilabel(outs[idx].intent_probs, intent_threshold)
                feats.append(encode_oracle_turn(pred_tags, pred_ints, n_tags, n_intents))
            else:
                feats.append(
                    encode_oracle_turn(set(e.tag_ids.tolist()), e.intent_ids, n_tags, n_intents)
                )
        for t in range(len(enc)):
            lo = max(0, t - win + 1)
            window_feats = [padding_turn(feat_dim)] * (win - (t - lo + 1)) + feats[lo : t + 1]
            out = sap_forward(window_feats, params.sap, expected_len=win)
            probs_list.append(out.action_probs)
            gold_sets.append(set(enc[t].action_ids))
    return probs_list, gold_sets


def tune_thresholds(params, sessions, vocabs, cfg, mode, parallelism: int = 1) -> dict[str, float]:
    """Tune intent and action thresholds (in that order) on a dev set."""
    data = _precompute(params, sessions, vocabs, cfg, mode, parallelism)
    return _tune_from_data(params, data, vocabs, cfg, mode)


def _tune_from_data(params, data, vocabs, cfg, mode) -> dict[str, float]:
    thr_int = 0.5
    if mode != "oracle-sap":
        int_probs = [o.intent_probs for _, outs in data for o in outs]
        gold_ints = [set(e.intent_ids) for enc, _ in data for e in enc]
        thr_int = tune_threshold(int_probs, gold_ints)
    probs, golds = _window_action_probs(params, data, vocabs, cfg, mode, thr_int)
    thr_act = tune_threshold(probs, golds)
    return {"intent": float(thr_int), "action": float(thr_act)}


def evaluate(
    params,
    sessions,
    vocabs: VocabSet,
    cfg: TrainConfig,
    thresholds: dict[str, float],
    mode: str,
    parallelism: int = 1,
) -> EvalReport:
    """Decode and score every task this mode supports.

    Tag decoding is per-token argmax; intents and actions threshold their
    sigmoid outputs. Frame accuracy requires the whole tag sequence or the
    exact label set; the combined NLU frame accuracy requires both at once.
    """
    for key, value in thresholds.items():
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"threshold {key!r} must be in [0, 1], got {value}")
    data = _precompute(params, sessions, vocabs, cfg, mode, parallelism)
    return _evaluate_data(params, data, vocabs, cfg, thresholds, mode)


def _evaluate_data(params, data, vocabs, cfg, thresholds, mode) -> EvalReport:
    thr_int = float(thresholds.get("intent", 0.5))
    thr_act = float(thresholds.get("action", 0.5))
    tasks: dict[str, TaskMetrics] = {}
    nlu_frame: float | None = None
    if mode != "oracle-sap":
        pred_tag_seqs, gold_tag_seqs = [], []
        pred_int_sets, gold_int_sets = [], []
        for enc, outs in data:
            for e, o in zip(enc, outs):
                pred_tag_seqs.append(decode_tags(o.tag_probs).tolist())
                gold_tag_seqs.append(e.tag_ids.tolist())
                pred_int_sets.append(decode_multilabel(o.intent_probs, thr_int))
                gold_int_sets.append(set(e.intent_ids))
        o_id = vocabs.tags.id(OUTSIDE_TAG)
        tasks["tags"] = TaskMetrics.from_prf(
            token_prf(pred_tag_seqs, gold_tag_seqs, negative_label=o_id),
            frame_accuracy(pred_tag_seqs, gold_tag_seqs, kind="sequence"),
        )
        tasks["intents"] = TaskMetrics.from_prf(
            set_prf(pred_int_sets, gold_int_sets),
            frame_accuracy(pred_int_sets, gold_int_sets, kind="set"),
        )
        both = [
            1.0
            for pt, gt, pi, gi in zip(pred_tag_seqs, gold_tag_seqs, pred_int_sets, gold_int_sets)
            if pt == gt and pi == gi
        ]
        nlu_frame = len(both) / len(pred_tag_seqs) if pred_tag_seqs else 0.0
    probs_list, gold_sets = _window_action_probs(params, data, vocabs, cfg, mode, thr_int)
    pred_act_sets = [decode_multilabel(p, thr_act) for p in probs_list]
    prf_pred, prf_gold = pred_act_sets, gold_sets
    if not cfg.count_null_action:
        null_id = vocabs.actions.id(NULL_ACTION)
        prf_pred = [s - {null_id} for s in pred_act_sets]
        prf_gold = [s - {null_id} for s in gold_sets]
    tasks["actions"] = TaskMetrics.from_prf(
        set_prf(prf_pred, prf_gold),
        frame_accuracy(pred_act_sets, gold_sets, kind="set"),
    )
    return EvalReport(
        tasks=tasks,
        thresholds={"intent": thr_int, "action": thr_act},
        nlu_frame_accuracy=nlu_frame,
    )


# ---------------------------------------------------------------------------
# Whole-model gradient checking


def build_gradcheck_problem(dims: dict | None = None, seed: int = 0, init_scale: float = 3.5):
    """A tiny random joint model plus a fixed two-window batch.

    Returns (params, cfg, loss_fn, grads_fn) where loss_fn is deterministic
    (dropout off) and grads_fn returns the analytic batch-mean gradients.
    init_scale inflates the random weights so every connected gradient
    coordinate sits well above the finite-difference roundoff floor; at cold
    standard init the deepest paths carry ~1e-8 gradients that a central
    difference at eps=1e-5 cannot resolve.
    """
    d = {"vocab": 12, "embed": 8, "hidden": 8, "M": 5, "N": 3, "K": 4, "T": 6, "I": 3, "batch": 2}
    d.update(dims or {})
    for key, value in d.items():
        if int(value) < 1:
            raise ValueError(f"gradcheck dims: {key} must be >= 1")
    rng = np.random.default_rng(seed)
    cfg = TrainConfig(
        mode="joint",
        embed_dim=int(d["embed"]),
        hidden_dim=int(d["hidden"]),
        history_I=int(d["I"]),
        dropout_rate=0.0,
        max_utterance_len=int(d["T"]),
        seed=seed,
    )
    nlu = init_nlu_params(int(d["vocab"]), cfg.embed_dim, cfg.hidden_dim, int(d["M"]), int(d["N"]), rng)
    sap = init_sap_params(int(d["M"]) + int(d["N"]), cfg.hidden_dim, int(d["K"]), rng)
    params = JointParams(nlu=nlu, sap=sap)
    for _, arr in named_arrays(params):
        arr *= init_scale

    def random_example() -> EncodedExample:
        T = int(rng.integers(2, int(d["T"]) + 1))
        n_int = int(rng.integers(1, min(2, int(d["N"])) + 1))
        n_act = int(rng.integers(1, min(2, int(d["K"])) + 1))
        return EncodedExample(
            word_ids=rng.integers(0, int(d["vocab"]), size=T),
            tag_ids=rng.integers(0, int(d["M"]), size=T),
            intent_ids=frozenset(int(x) for x in rng.choice(int(d["N"]), size=n_int, replace=False)),
            action_ids=frozenset(int(x) for x in rng.choice(int(d["K"]), size=n_act, replace=False)),
        )

    windows = []
    win = cfg.window_len
    for b in range(int(d["batch"])):
        n_real = win if b % 2 == 0 else max(1, win - 1)  # exercise the padding path
        turns: list[EncodedExample | None] = [None] * (win - n_real)
        turns.extend(random_example() for _ in range(n_real))
        windows.append(EncodedWindow(turns=turns))

    def loss_fn(p: JointParams) -> float:
        total = 0.0
        for w in windows:
            losses, _ = joint_step(w, p, cfg, training=False, compute_grads=False)
            total += losses.total
        return total / len(windows)

    def grads_fn(p: JointParams) -> JointParams:
        grads = None
        for w in windows:
            _, g = joint_step(w, p, cfg, training=False)
            if grads is None:
                grads = g
            else:
                accumulate(grads, g)
        for _, arr in named_arrays(grads):
            arr /= len(windows)
        return grads

    return params, cfg, loss_fn, grads_fn


def joint_gradcheck(dims: dict | None = None, seed: int = 0, eps: float = 1e-5, corrupt: str | None = None):
    """Finite-difference check of the full joint model; the optional corrupt
    hook perturbs one named analytic gradient so failures stay detectable."""
    params, _, loss_fn, grads_fn = build_gradcheck_problem(dims, seed)
    analytic = grads_fn(params)
    if corrupt is not None:
        flat = dict(named_arrays(analytic))
        if corrupt not in flat:
            raise ValueError(f"unknown parameter {corrupt!r}; choose from {sorted(flat)}")
        flat[corrupt] *= 1.5
        flat[corrupt] += 1e-2
    return grad_check(loss_fn, params, eps, analytic=analytic)
