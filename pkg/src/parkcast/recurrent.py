"""LSTM cells and sequence-to-one encoders."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, as_tensor, concat, matmul, sigmoid, stack, tanh
from .numerics import ParamSpec, dropout_mask

GATES = ("f", "i", "o", "c")


@dataclass
class LstmParams:
    """Per-gate input weights W_*, recurrent weights U_* and biases b_*."""

    W_f: Tensor
    W_i: Tensor
    W_o: Tensor
    W_c: Tensor
    U_f: Tensor
    U_i: Tensor
    U_o: Tensor
    U_c: Tensor
    b_f: Tensor
    b_i: Tensor
    b_o: Tensor
    b_c: Tensor

    def __post_init__(self):
        d_in, h = self.W_f.shape
        for g in GATES:
            W, U, b = (getattr(self, f"{k}_{g}") for k in "WUb")
            if W.shape != (d_in, h) or U.shape != (h, h) or b.shape != (h,):
                raise ShapeError("LstmParams", W.shape, U.shape,
                                 f"gate {g}: expected ({d_in},{h}), ({h},{h}), ({h},)")

    @property
    def input_dim(self):
        return self.W_f.shape[0]

    @property
    def hidden_dim(self):
        return self.W_f.shape[1]

    @classmethod
    def from_store(cls, store, prefix):
        return cls(**{f"{k}_{g}": store[f"{prefix}.{k}_{g}"] for k in "WUb" for g in GATES})

    @classmethod
    def zeros(cls, d_in, h):
        return cls(**{f"{k}_{g}": Tensor(np.zeros((d_in, h) if k == "W" else (h, h) if k == "U" else (h,)))
                      for k in "WUb" for g in GATES})

    def fused(self):
        """Gate-concatenated (W, U, b) in f, i, o, c order; stays on the tape."""
        return (concat([getattr(self, f"W_{g}") for g in GATES], axis=1),
                concat([getattr(self, f"U_{g}") for g in GATES], axis=1),
                concat([getattr(self, f"b_{g}") for g in GATES], axis=0))


@dataclass
class LstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, batch_shape, hidden):
        shape = tuple(batch_shape) + (hidden,)
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def lstm_param_specs(prefix, d_in, hidden):
    specs = []
    for g in GATES:
        specs.append(ParamSpec(f"{prefix}.W_{g}", (d_in, hidden)))
        specs.append(ParamSpec(f"{prefix}.U_{g}", (hidden, hidden)))
        specs.append(ParamSpec(f"{prefix}.b_{g}", (hidden,), kind="forget_bias" if g == "f" else "bias"))
    return specs


def _gates(pre, h):
    f = sigmoid(pre[..., 0:h])
    i = sigmoid(pre[..., h:2 * h])
    o = sigmoid(pre[..., 2 * h:3 * h])
    g = tanh(pre[..., 3 * h:4 * h])
    return f, i, o, g


def lstm_cell_step(x_t, prev, p, return_gates=False):
    """One step of the gated recurrence for x_t of shape (..., D_in)."""
    x_t = as_tensor(x_t)
    if x_t.shape[-1] != p.input_dim:
        raise ShapeError("lstm_cell_step", x_t.shape, p.W_f.shape, "input width")
    if prev.h.shape[-1] != p.hidden_dim:
        raise ShapeError("lstm_cell_step", prev.h.shape, p.U_f.shape, "hidden width")
    W, U, b = p.fused()
    pre = matmul(x_t, W) + matmul(prev.h, U) + b
    f, i, o, g = _gates(pre, p.hidden_dim)
    c = f * prev.c + i * g
    h = o * tanh(c)
    state = LstmState(h, c)
    return (state, (f, i, o)) if return_gates else state


def lstm_sequence(X, p, init=None, return_gates=False):
    """Hidden states for every step of X (..., T, D_in) -> list of T tensors (..., H)."""
    X = as_tensor(X)
    if X.ndim < 2 or X.shape[-2] < 1:
        raise ValueError("an LSTM needs a non-empty sequence")
    if X.shape[-1] != p.input_dim:
        raise ShapeError("lstm_sequence", X.shape, p.W_f.shape, "input width")
    T, H = X.shape[-2], p.hidden_dim
    W, U, b = p.fused()
    # input projection for all steps at once; the recurrence only adds h @ U
    xw = matmul(X, W) + b
    state = init or LstmState.zeros(X.shape[:-2], H)
    hs, gates = [], []
    for t in range(T):
        pre = xw[..., t, :] + matmul(state.h, U)
        f, i, o, g = _gates(pre, H)
        c = f * state.c + i * g
        h = o * tanh(c)
        state = LstmState(h, c)
        hs.append(h)
        if return_gates:
            gates.append((f, i, o))
    return (hs, state, gates) if return_gates else (hs, state)


def lstm_seq_to_one(X, p, init=None):
    """Run the recurrence over X (..., T, D_in) and return the last hidden state."""
    _, state = lstm_sequence(X, p, init)
    return state.h


def stacked_lstm(X, layers, dropout_rate=0.0, mode="eval", rng=None):
    """Layer k reads layer k-1's full hidden sequence; the last layer emits h_T.

    Inverted dropout sits between layers and is active only with mode="train".
    """
    if not layers:
        raise ValueError("stacked_lstm needs at least one layer")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    for k in range(1, len(layers)):
        if layers[k].input_dim != layers[k - 1].hidden_dim:
            raise ShapeError("stacked_lstm", layers[k - 1].U_f.shape, layers[k].W_f.shape,
                             f"layer {k} input width")
    seq = as_tensor(X)
    for k, p in enumerate(layers):
        if k > 0:
            seq = stack(hs, axis=-2)
            if mode == "train" and dropout_rate > 0:
                seq = seq * dropout_mask(seq.shape, dropout_rate, rng)
        hs, state = lstm_sequence(seq, p)
    return state.h
