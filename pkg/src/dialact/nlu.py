"""Multi-task NLU network: shared embedding + biLSTM trunk, a per-token
softmax slot tagger, a second-layer LSTM intent head with one-vs-all sigmoids,
and a feature head whose final hidden vector (size M+N) summarizes the turn
for the action predictor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .neural import (
    LstmParams,
    LstmRun,
    categorical_ce,
    dropout_mask,
    glorot_uniform,
    init_lstm_params,
    multilabel_bce,
    sigmoid_vec,
    softmax,
)


@dataclass
class NluParams:
    embedding: np.ndarray  # (V, E)
    trunk_fwd: LstmParams  # input E, hidden H
    trunk_bwd: LstmParams
    w_tag_fwd: np.ndarray  # (M, H)
    w_tag_bwd: np.ndarray  # (M, H)
    b_tag: np.ndarray  # (M,)
    intent_lstm: LstmParams  # input 2H, hidden H
    w_int: np.ndarray  # (N, H)
    b_int: np.ndarray  # (N,)
    feature_lstm: LstmParams  # input 2H, hidden M+N

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.trunk_fwd.hidden_dim

    @property
    def n_tags(self) -> int:
        return self.w_tag_fwd.shape[0]

    @property
    def n_intents(self) -> int:
        return self.w_int.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.feature_lstm.hidden_dim


def init_nlu_params(
    vocab_size: int,
    embed_dim: int,
    hidden_dim: int,
    n_tags: int,
    n_intents: int,
    rng: np.random.Generator,
) -> NluParams:
    if min(vocab_size, embed_dim, hidden_dim, n_tags, n_intents) <= 0:
        raise ValueError("init_nlu_params: all dimensions must be positive")
    feature_dim = n_tags + n_intents
    return NluParams(
        embedding=glorot_uniform(rng, (vocab_size, embed_dim), vocab_size, embed_dim),
        trunk_fwd=init_lstm_params(embed_dim, hidden_dim, rng),
        trunk_bwd=init_lstm_params(embed_dim, hidden_dim, rng),
        w_tag_fwd=glorot_uniform(rng, (n_tags, hidden_dim), hidden_dim, n_tags),
        w_tag_bwd=glorot_uniform(rng, (n_tags, hidden_dim), hidden_dim, n_tags),
        b_tag=np.zeros(n_tags),
        intent_lstm=init_lstm_params(2 * hidden_dim, hidden_dim, rng),
        w_int=glorot_uniform(rng, (n_intents, hidden_dim), hidden_dim, n_intents),
        b_int=np.zeros(n_intents),
        feature_lstm=init_lstm_params(2 * hidden_dim, feature_dim, rng),
    )


@dataclass
class NluCache:
    word_ids: np.ndarray
    emb_mult: np.ndarray | None
    h2_mult: np.ndarray | None
    trunk_fwd_run: LstmRun
    trunk_bwd_run: LstmRun
    h2d: np.ndarray  # (T, 2H) trunk output after dropout, input to all heads
    intent_run: LstmRun
    feature_run: LstmRun


@dataclass
class NluOutput:
    tag_probs: np.ndarray  # (T, M)
    intent_probs: np.ndarray  # (N,)
    feature: np.ndarray  # (M+N,)
    cache: NluCache = field(repr=False)


def nlu_forward(
    word_ids,
    p: NluParams,
    *,
    training: bool = False,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> NluOutput:
    """Run the full NLU stack over one utterance.

    Dropout (training only) is applied to the embedded tokens and once to the
    concatenated trunk outputs; the dropped trunk sequence feeds all three
    heads, so their gradients share the same mask on the way back.
    """
    ids = np.asarray(word_ids, dtype=int)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("nlu_forward: word_ids must be a non-empty 1-d sequence")
    if ids.min() < 0 or ids.max() >= p.vocab_size:
        raise ValueError(f"nlu_forward: token id out of range [0, {p.vocab_size})")
    hd = p.hidden_dim
    use_drop = training and dropout_rate > 0.0
    if use_drop and rng is None:
        raise ValueError("nlu_forward: rng required for dropout in training mode")

    emb = p.embedding[ids]
    emb_mult = dropout_mask(emb.shape, dropout_rate, rng) if use_drop else None
    x = emb * emb_mult if use_drop else emb

    fwd = LstmRun(x, p.trunk_fwd)
    bwd = LstmRun(x, p.trunk_bwd, reverse=True)
    h2 = np.hstack([fwd.hidden, bwd.hidden])
    h2_mult = dropout_mask(h2.shape, dropout_rate, rng) if use_drop else None
    h2d = h2 * h2_mult if use_drop else h2

    tag_logits = h2d[:, :hd] @ p.w_tag_fwd.T + h2d[:, hd:] @ p.w_tag_bwd.T + p.b_tag
    tag_probs = softmax(tag_logits)

    intent_run = LstmRun(h2d, p.intent_lstm)
    intent_probs = sigmoid_vec(p.w_int @ intent_run.hidden[-1] + p.b_int)

    feature_run = LstmRun(h2d, p.feature_lstm)
    feature = feature_run.hidden[-1]

    cache = NluCache(
        word_ids=ids,
        emb_mult=emb_mult,
        h2_mult=h2_mult,
        trunk_fwd_run=fwd,
        trunk_bwd_run=bwd,
        h2d=h2d,
        intent_run=intent_run,
        feature_run=feature_run,
    )
    return NluOutput(tag_probs=tag_probs, intent_probs=intent_probs, feature=feature, cache=cache)


def nlu_backward(
    p: NluParams,
    out: NluOutput,
    d_tag_logits: np.ndarray | None = None,
    d_int_logits: np.ndarray | None = None,
    d_feature: np.ndarray | None = None,
) -> NluParams:
    """Exact gradients for one utterance given logit-level errors.

    Any of the three error signals may be None (that head then contributes
    nothing); the returned tree always covers every parameter.
    """
    cache = out.cache
    hd = p.hidden_dim
    T = cache.h2d.shape[0]
    g = NluParams(
        embedding=np.zeros_like(p.embedding),
        trunk_fwd=LstmParams(
            np.zeros_like(p.trunk_fwd.w_x), np.zeros_like(p.trunk_fwd.u_h), np.zeros_like(p.trunk_fwd.b)
        ),
        trunk_bwd=LstmParams(
            np.zeros_like(p.trunk_bwd.w_x), np.zeros_like(p.trunk_bwd.u_h), np.zeros_like(p.trunk_bwd.b)
        ),
        w_tag_fwd=np.zeros_like(p.w_tag_fwd),
        w_tag_bwd=np.zeros_like(p.w_tag_bwd),
        b_tag=np.zeros_like(p.b_tag),
        intent_lstm=LstmParams(
            np.zeros_like(p.intent_lstm.w_x), np.zeros_like(p.intent_lstm.u_h), np.zeros_like(p.intent_lstm.b)
        ),
        w_int=np.zeros_like(p.w_int),
        b_int=np.zeros_like(p.b_int),
        feature_lstm=LstmParams(
            np.zeros_like(p.feature_lstm.w_x), np.zeros_like(p.feature_lstm.u_h), np.zeros_like(p.feature_lstm.b)
        ),
    )
    d_h2d = np.zeros_like(cache.h2d)

    if d_tag_logits is not None:
        if d_tag_logits.shape != (T, p.n_tags):
            raise ShapeError("nlu_backward: bad d_tag_logits shape")
        g.w_tag_fwd += d_tag_logits.T @ cache.h2d[:, :hd]
        g.w_tag_bwd += d_tag_logits.T @ cache.h2d[:, hd:]
        g.b_tag += d_tag_logits.sum(axis=0)
        d_h2d[:, :hd] += d_tag_logits @ p.w_tag_fwd
        d_h2d[:, hd:] += d_tag_logits @ p.w_tag_bwd

    if d_int_logits is not None:
        h_last = cache.intent_run.hidden[-1]
        g.w_int += np.outer(d_int_logits, h_last)
        g.b_int += d_int_logits
        d_h = np.zeros((T, hd))
        d_h[-1] = p.w_int.T @ d_int_logits
        d_in, lstm_g = cache.intent_run.backward(d_h)
        accumulate_lstm(g.intent_lstm, lstm_g)
        d_h2d += d_in

    if d_feature is not None:
        d_h = np.zeros((T, p.feature_dim))
        d_h[-1] = d_feature
        d_in, lstm_g = cache.feature_run.backward(d_h)
        accumulate_lstm(g.feature_lstm, lstm_g)
        d_h2d += d_in

    d_h2 = d_h2d * cache.h2_mult if cache.h2_mult is not None else d_h2d
    d_x_f, trunk_f_g = cache.trunk_fwd_run.backward(d_h2[:, :hd])
    d_x_b, trunk_b_g = cache.trunk_bwd_run.backward(d_h2[:, hd:])
    accumulate_lstm(g.trunk_fwd, trunk_f_g)
    accumulate_lstm(g.trunk_bwd, trunk_b_g)
    d_x = d_x_f + d_x_b
    d_emb = d_x * cache.emb_mult if cache.emb_mult is not None else d_x
    np.add.at(g.embedding, cache.word_ids, d_emb)
    return g


def accumulate_lstm(into: LstmParams, delta: LstmParams) -> None:
    into.w_x += delta.w_x
    into.u_h += delta.u_h
    into.b += delta.b


def nlu_loss(out: NluOutput, gold_tags, gold_intents) -> tuple[float, float]:
    """(tag loss summed over tokens, intent one-vs-all loss)."""
    tags = np.asarray(gold_tags, dtype=int)
    if tags.shape[0] != out.tag_probs.shape[0]:
        raise ShapeError(
            f"nlu_loss: {tags.shape[0]} gold tags for {out.tag_probs.shape[0]} tokens"
        )
    l_tag = sum(categorical_ce(out.tag_probs[t], tags[t]) for t in range(tags.shape[0]))
    l_int = multilabel_bce(out.intent_probs, gold_intents)
    return float(l_tag), float(l_int)


def decode_tags(tag_probs) -> np.ndarray:
    """Per-token argmax; ties break to the lowest index."""
    probs = np.asarray(tag_probs, dtype=float)
    return probs.argmax(axis=-1)


def decode_multilabel(probs, threshold: float) -> set[int]:
    """Indices whose probability is at or above the threshold (inclusive)."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    p = np.asarray(probs, dtype=float)
    return set(int(k) for k in np.nonzero(p >= threshold)[0])
