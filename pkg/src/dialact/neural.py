"""Differentiable building blocks: activations, losses, dropout, and an LSTM
with exact hand-derived backpropagation.

Everything runs in float64. Gate blocks are stacked in o, i, f, g order inside
single matrices so a whole sequence's input projections reduce to one matmul;
the recurrent part stays an explicit Python loop with cached intermediates so
the backward pass can replay it step by step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, ShapeError

PROB_FLOOR = 1e-12


def softmax(logits) -> np.ndarray:
    """Numerically safe softmax over the last axis (max-subtraction)."""
    z = np.asarray(logits, dtype=float)
    if z.size == 0:
        raise ValueError("softmax: empty input")
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("softmax: input contains non-finite values")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid_vec(logits) -> np.ndarray:
    """Elementwise logistic function, stable for large |z|."""
    z = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("sigmoid_vec: input contains non-finite values")
    return _sigm(z)


def _sigm(z: np.ndarray) -> np.ndarray:
    # branch on sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def categorical_ce(probs, target: int) -> float:
    """-log p[target] with a floor so a zero probability cannot blow up."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("categorical_ce: probs must be a non-empty vector")
    if not 0 <= int(target) < p.shape[0]:
        raise ValueError(f"categorical_ce: target {target} out of range for {p.shape[0]} classes")
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("categorical_ce: non-finite probabilities")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("categorical_ce: probs do not sum to 1")
    return -float(np.log(max(p[int(target)], PROB_FLOOR)))


def multilabel_bce(probs, targets) -> float:
    """Sum of one-vs-all binary cross-entropies, with the same floor."""
    p = np.asarray(probs, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape:
        raise ShapeError(f"multilabel_bce: probs {p.shape} vs targets {t.shape}")
    pos = np.log(np.maximum(p, PROB_FLOOR))
    neg = np.log(np.maximum(1.0 - p, PROB_FLOOR))
    return -float(np.sum(t * pos + (1.0 - t) * neg))


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: kept entries are scaled by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    return (rng.random(shape) >= rate) / (1.0 - rate)


def dropout(v, rate: float, training: bool, rng: np.random.Generator | None = None) -> np.ndarray:
    """Inverted dropout; the identity outside training or at rate 0."""
    x = np.asarray(v, dtype=float)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: rng is required when training")
    return x * dropout_mask(x.shape, rate, rng)


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmParams:
    """Weights for one LSTM direction.

    The four gate blocks (output, input, forget, candidate) are stacked along
    the first axis: w_x is (4H, D), u_h is (4H, H), b is (4H,). Biases start
    at zero so the bias-free gate equations are recovered at initialization.
    """

    w_x: np.ndarray
    u_h: np.ndarray
    b: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.u_h.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[1]

    def check(self) -> None:
        h = self.hidden_dim
        if self.w_x.shape[0] != 4 * h or self.u_h.shape != (4 * h, h) or self.b.shape != (4 * h,):
            raise ShapeError(
                f"inconsistent LstmParams: w_x {self.w_x.shape}, u_h {self.u_h.shape}, b {self.b.shape}"
            )


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_lstm_params(input_dim: int, hidden_dim: int, rng: np.random.Generator) -> LstmParams:
    # all four gate blocks share (hidden_dim, input_dim), so one draw covers the stack
    return LstmParams(
        w_x=glorot_uniform(rng, (4 * hidden_dim, input_dim), input_dim, hidden_dim),
        u_h=glorot_uniform(rng, (4 * hidden_dim, hidden_dim), hidden_dim, hidden_dim),
        b=np.zeros(4 * hidden_dim),
    )


@dataclass
class CellState:
    """Hidden and cell vectors after one step; gate activations are kept for backprop."""

    h: np.ndarray
    c: np.ndarray
    gates: np.ndarray | None = field(default=None, repr=False)  # (4H,) post-activation o,i,f,g
    tanh_c: np.ndarray | None = field(default=None, repr=False)


def zero_state(hidden_dim: int) -> CellState:
    return CellState(h=np.zeros(hidden_dim), c=np.zeros(hidden_dim))


def lstm_cell(x, prev: CellState, p: LstmParams) -> CellState:
    """One LSTM step: o,i,f = sigm(affine), g = tanh(affine), c = f*c_prev + i*g, h = o*tanh(c)."""
    p.check()
    x = np.asarray(x, dtype=float)
    hd = p.hidden_dim
    if x.shape != (p.input_dim,):
        raise ShapeError(f"lstm_cell: input shape {x.shape}, expected ({p.input_dim},)")
    if prev.h.shape != (hd,) or prev.c.shape != (hd,):
        raise ShapeError(f"lstm_cell: state dims {prev.h.shape}/{prev.c.shape}, expected ({hd},)")
    a = p.w_x @ x + p.u_h @ prev.h + p.b
    gates = np.empty(4 * hd)
    gates[: 3 * hd] = _sigm(a[: 3 * hd])
    gates[3 * hd :] = np.tanh(a[3 * hd :])
    o, i, f, g = gates[:hd], gates[hd : 2 * hd], gates[2 * hd : 3 * hd], gates[3 * hd :]
    c = f * prev.c + i * g
    tc = np.tanh(c)
    return CellState(h=o * tc, c=c, gates=gates, tanh_c=tc)


def lstm_cell_backward(
    x,
    prev: CellState,
    p: LstmParams,
    state: CellState,
    d_h: np.ndarray,
    d_c: np.ndarray | None = None,
):
    """Exact gradients for one step.

    Returns (d_x, d_prev, grads) where d_prev carries dL/dh_prev and dL/dc_prev
    and grads is an LstmParams of the same shapes.
    """
    if state.gates is None or state.tanh_c is None:
        raise ValueError("lstm_cell_backward: state lacks cached gate activations")
    x = np.asarray(x, dtype=float)
    hd = p.hidden_dim
    o, i, f, g = (
        state.gates[:hd],
        state.gates[hd : 2 * hd],
        state.gates[2 * hd : 3 * hd],
        state.gates[3 * hd :],
    )
    tc = state.tanh_c
    dc = (d_c if d_c is not None else 0.0) + d_h * o * (1.0 - tc * tc)
    d_pre = np.empty(4 * hd)
    d_pre[:hd] = (d_h * tc) * o * (1.0 - o)
    d_pre[hd : 2 * hd] = (dc * g) * i * (1.0 - i)
    d_pre[2 * hd : 3 * hd] = (dc * prev.c) * f * (1.0 - f)
    d_pre[3 * hd :] = (dc * i) * (1.0 - g * g)
    grads = LstmParams(w_x=np.outer(d_pre, x), u_h=np.outer(d_pre, prev.h), b=d_pre.copy())
    d_x = p.w_x.T @ d_pre
    d_prev = CellState(h=p.u_h.T @ d_pre, c=dc * f)
    return d_x, d_prev, grads


class LstmRun:
    """Forward pass over one sequence with everything cached for backprop.

    ``reverse=True`` consumes the sequence right to left; hidden states are
    always reported aligned to the original token positions, so ``hidden[t]``
    is the state produced at position t regardless of direction.
    """

    __slots__ = ("params", "reverse", "x_int", "gates", "c", "tanh_c", "h_int")

    def __init__(self, seq, params: LstmParams, reverse: bool = False):
        x = np.asarray(seq, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError("run_lstm: sequence must be a non-empty (T, D) array")
        if x.shape[1] != params.input_dim:
            raise ShapeError(f"run_lstm: input dim {x.shape[1]}, params expect {params.input_dim}")
        self.params = params
        self.reverse = reverse
        # internal processing order; contiguous so both directions hit the
        # same gemm path and direction symmetries hold bitwise
        self.x_int = np.ascontiguousarray(x[::-1] if reverse else x)
        T = x.shape[0]
        hd = params.hidden_dim
        x_proj = self.x_int @ params.w_x.T + params.b  # (T, 4H)
        gates = np.empty((T, 4 * hd))
        cs = np.empty((T, hd))
        tcs = np.empty((T, hd))
        hs = np.empty((T, hd))
        u_h = params.u_h
        h_prev = np.zeros(hd)
        c_prev = np.zeros(hd)
        for t in range(T):
            a = x_proj[t] + u_h @ h_prev
            row = gates[t]
            row[: 3 * hd] = _sigm(a[: 3 * hd])
            row[3 * hd :] = np.tanh(a[3 * hd :])
            c_t = row[2 * hd : 3 * hd] * c_prev + row[hd : 2 * hd] * row[3 * hd :]
            tc = np.tanh(c_t)
            cs[t] = c_t
            tcs[t] = tc
            hs[t] = row[:hd] * tc
            h_prev = hs[t]
            c_prev = c_t
        self.gates = gates
        self.c = cs
        self.tanh_c = tcs
        self.h_int = hs

    @property
    def hidden(self) -> np.ndarray:
        """(T, H) hidden states aligned to original positions."""
        return self.h_int[::-1] if self.reverse else self.h_int

    def backward(self, d_hidden) -> tuple[np.ndarray, LstmParams]:
        """Backprop through time given dL/dh at every original position.

        Returns (d_inputs, grads) with d_inputs aligned to original positions.
        """
        d_h = np.asarray(d_hidden, dtype=float)
        T, hd = self.h_int.shape
        if d_h.shape != (T, hd):
            raise ShapeError(f"backward: d_hidden {d_h.shape}, expected {(T, hd)}")
        d_h_int = d_h[::-1] if self.reverse else d_h
        gates, cs, tcs = self.gates, self.c, self.tanh_c
        u_h = self.params.u_h
        d_pre = np.empty((T, 4 * hd))
        dh_carry = np.zeros(hd)
        dc = np.zeros(hd)
        for t in range(T - 1, -1, -1):
            row = gates[t]
            o, i, f, g = row[:hd], row[hd : 2 * hd], row[2 * hd : 3 * hd], row[3 * hd :]
            dh_t = d_h_int[t] + dh_carry
            tc = tcs[t]
            dc = dc + dh_t * o * (1.0 - tc * tc)
            out = d_pre[t]
            out[:hd] = (dh_t * tc) * o * (1.0 - o)
            out[hd : 2 * hd] = (dc * g) * i * (1.0 - i)
            if t > 0:
                out[2 * hd : 3 * hd] = (dc * cs[t - 1]) * f * (1.0 - f)
            else:
                out[2 * hd : 3 * hd] = 0.0  # initial cell state is a constant zero
            out[3 * hd :] = (dc * i) * (1.0 - g * g)
            dh_carry = u_h.T @ out
            dc = dc * f
        h_prev_rows = np.vstack([np.zeros(hd), self.h_int[:-1]])
        grads = LstmParams(
            w_x=d_pre.T @ self.x_int,
            u_h=d_pre.T @ h_prev_rows,
            b=d_pre.sum(axis=0),
        )
        d_x_int = d_pre @ self.params.w_x
        d_x = d_x_int[::-1] if self.reverse else d_x_int
        return d_x, grads


def run_lstm(seq, params: LstmParams, reverse: bool = False) -> np.ndarray:
    """Hidden states of one direction, aligned to original token positions."""
    return LstmRun(seq, params, reverse).hidden


def bilstm(seq, p_fwd: LstmParams, p_bwd: LstmParams) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-position (forward, backward) hidden pairs."""
    if p_fwd.hidden_dim != p_bwd.hidden_dim:
        raise ShapeError("bilstm: forward and backward hidden sizes differ")
    f = run_lstm(seq, p_fwd, reverse=False)
    b = run_lstm(seq, p_bwd, reverse=True)
    return [(f[t], b[t]) for t in range(f.shape[0])]
