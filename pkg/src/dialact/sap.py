"""System-action predictor: a biLSTM over a fixed-length window of per-turn
feature vectors, read out at the last position into K one-vs-all sigmoids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .neural import LstmParams, LstmRun, glorot_uniform, init_lstm_params, multilabel_bce, sigmoid_vec


@dataclass
class TurnFeature:
    """One turn's input to the action predictor.

    Padding turns (session starts) are all-zero by invariant; the constructor
    rejects anything else so padding can never smuggle in information.
    """

    values: np.ndarray
    is_padding: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ShapeError("TurnFeature: values must be a vector")
        if self.is_padding and np.any(self.values != 0.0):
            raise ValueError("TurnFeature: padding turns must be all-zero")


def padding_turn(dim: int) -> TurnFeature:
    return TurnFeature(values=np.zeros(dim), is_padding=True)


@dataclass
class SapParams:
    fwd: LstmParams  # input M+N, hidden H
    bwd: LstmParams
    w_act_fwd: np.ndarray  # (K, H)
    w_act_bwd: np.ndarray  # (K, H)
    b_act: np.ndarray  # (K,)

    @property
    def feature_dim(self) -> int:
        return self.fwd.input_dim

    @property
    def n_actions(self) -> int:
        return self.w_act_fwd.shape[0]


def init_sap_params(
    feature_dim: int, hidden_dim: int, n_actions: int, rng: np.random.Generator
) -> SapParams:
    if min(feature_dim, hidden_dim, n_actions) <= 0:
        raise ValueError("init_sap_params: all dimensions must be positive")
    return SapParams(
        fwd=init_lstm_params(feature_dim, hidden_dim, rng),
        bwd=init_lstm_params(feature_dim, hidden_dim, rng),
        w_act_fwd=glorot_uniform(rng, (n_actions, hidden_dim), hidden_dim, n_actions),
        w_act_bwd=glorot_uniform(rng, (n_actions, hidden_dim), hidden_dim, n_actions),
        b_act=np.zeros(n_actions),
    )


@dataclass
class SapCache:
    fwd_run: LstmRun
    bwd_run: LstmRun


@dataclass
class SapOutput:
    action_probs: np.ndarray  # (K,)
    cache: SapCache = field(repr=False)


def sap_forward(history, p: SapParams, expected_len: int | None = None) -> SapOutput:
    """Action probabilities for one window of TurnFeatures.

    Both directions run over the whole window but only the hiddens at the
    final position feed the output layer.
    """
    turns = list(history)
    if expected_len is not None and len(turns) != expected_len:
        raise ShapeError(f"sap_forward: history length {len(turns)}, expected {expected_len}")
    if not turns:
        raise ShapeError("sap_forward: empty history")
    if turns[-1].is_padding:
        raise ValueError("sap_forward: final turn must not be padding")
    x = np.vstack([t.values for t in turns])
    if x.shape[1] != p.feature_dim:
        raise ShapeError(f"sap_forward: feature dim {x.shape[1]}, params expect {p.feature_dim}")
    fwd = LstmRun(x, p.fwd)
    bwd = LstmRun(x, p.bwd, reverse=True)
    logits = p.w_act_fwd @ fwd.hidden[-1] + p.w_act_bwd @ bwd.hidden[-1] + p.b_act
    return SapOutput(action_probs=sigmoid_vec(logits), cache=SapCache(fwd_run=fwd, bwd_run=bwd))


def sap_backward(p: SapParams, out: SapOutput, d_logits: np.ndarray) -> tuple[SapParams, np.ndarray]:
    """Gradients for the predictor plus dL/d(input features), (I, M+N).

    The input-feature gradients are what joint training feeds back into the
    NLU feature heads.
    """
    fwd, bwd = out.cache.fwd_run, out.cache.bwd_run
    steps, hd = fwd.hidden.shape
    g = SapParams(
        fwd=LstmParams(np.zeros_like(p.fwd.w_x), np.zeros_like(p.fwd.u_h), np.zeros_like(p.fwd.b)),
        bwd=LstmParams(np.zeros_like(p.bwd.w_x), np.zeros_like(p.bwd.u_h), np.zeros_like(p.bwd.b)),
        w_act_fwd=np.outer(d_logits, fwd.hidden[-1]),
        w_act_bwd=np.outer(d_logits, bwd.hidden[-1]),
        b_act=np.asarray(d_logits, dtype=float).copy(),
    )
    d_h = np.zeros((steps, hd))
    d_h[-1] = p.w_act_fwd.T @ d_logits
    d_x_f, g_f = fwd.backward(d_h)
    d_h = np.zeros((steps, hd))
    d_h[-1] = p.w_act_bwd.T @ d_logits
    d_x_b, g_b = bwd.backward(d_h)
    g.fwd.w_x += g_f.w_x
    g.fwd.u_h += g_f.u_h
    g.fwd.b += g_f.b
    g.bwd.w_x += g_b.w_x
    g.bwd.u_h += g_b.u_h
    g.bwd.b += g_b.b
    return g, d_x_f + d_x_b


def encode_oracle_turn(tags, intents, n_tags: int, n_intents: int) -> TurnFeature:
    """Binary aggregation of a turn: a bit per tag type present plus a bit per intent.

    Duplicate occurrences set a bit once; this is the pipeline/oracle stand-in
    for the learned feature vector, so its length is also M+N.
    """
    values = np.zeros(n_tags + n_intents)
    for t in set(tags):
        t = int(t)
        if not 0 <= t < n_tags:
            raise ValueError(f"encode_oracle_turn: tag index {t} out of range [0, {n_tags})")
        values[t] = 1.0
    for i in set(intents):
        i = int(i)
        if not 0 <= i < n_intents:
            raise ValueError(f"encode_oracle_turn: intent index {i} out of range [0, {n_intents})")
        values[n_tags + i] = 1.0
    return TurnFeature(values=values, is_padding=False)


def sap_loss(probs, gold_actions) -> float:
    """One-vs-all loss over the K action labels."""
    return multilabel_bce(probs, gold_actions)
