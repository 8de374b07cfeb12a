"""Peephole LSTM cell with full (matrix) peephole connections, and sequence helpers."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .module import Module

GATES = ("i", "f", "o", "c")


class LstmCell(Module):
    """One LSTM direction.

    Input, forget and output gates read the cell state through ``H x H``
    peephole matrices ``W_ci``, ``W_cf`` (previous cell) and ``W_co``
    (current cell). The candidate has no peephole.
    """

    def __init__(self, prefix, input_size, hidden_size, rng, dtype=ad.DEFAULT_DTYPE):
        super().__init__(prefix, rng, dtype)
        if input_size < 1 or hidden_size < 1:
            raise ad.ConfigError("LSTM sizes must be positive")
        self.input_size = input_size
        self.hidden_size = hidden_size
        H, D = hidden_size, input_size
        for g in GATES:
            setattr(self, f"W_z{g}", self.param(f"W_z{g}", (H, D), "glorot_uniform"))
        for g in GATES:
            setattr(self, f"W_h{g}", self.param(f"W_h{g}", (H, H), "glorot_uniform"))
        for g in ("i", "f", "o"):
            setattr(self, f"W_c{g}", self.param(f"W_c{g}", (H, H), "glorot_uniform"))
        for g in GATES:
            setattr(self, f"b_{g}", self.param(f"b_{g}", (H,), "zeros"))

    def project_inputs(self, z: Tensor) -> dict[str, Tensor]:
        """``W_z* z + b_*`` for every gate; ``z`` may carry any leading axes."""
        if z.shape[-1] != self.input_size:
            raise ad.DimensionError(f"LSTM input size {z.shape[-1]} != {self.input_size}")
        return {g: ad.affine(z, getattr(self, f"W_z{g}"), getattr(self, f"b_{g}")) for g in GATES}

    def step_projected(self, proj: dict[str, Tensor], h_prev: Tensor, c_prev: Tensor):
        i = ad.sigmoid(ad.add_n([proj["i"], ad.affine(h_prev, self.W_hi), ad.affine(c_prev, self.W_ci)]))
        f = ad.sigmoid(ad.add_n([proj["f"], ad.affine(h_prev, self.W_hf), ad.affine(c_prev, self.W_cf)]))
        c_tilde = ad.tanh(ad.add(proj["c"], ad.affine(h_prev, self.W_hc)))
        c = ad.add(ad.mul(f, c_prev), ad.mul(i, c_tilde))
        o = ad.sigmoid(ad.add_n([proj["o"], ad.affine(h_prev, self.W_ho), ad.affine(c, self.W_co)]))
        h = ad.mul(o, ad.tanh(c))
        return h, c


def lstm_step(z_t: Tensor, h_prev: Tensor, c_prev: Tensor, cell: LstmCell):
    """Single LSTM update; returns ``(h_t, c_t)``."""
    H = cell.hidden_size
    if h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ad.DimensionError(f"LSTM state size must be {H}")
    return cell.step_projected(cell.project_inputs(z_t), h_prev, c_prev)


def run_lstm(cell: LstmCell, inputs: Tensor) -> Tensor:
    """Run ``cell`` left to right over ``inputs`` of shape ``[B, T, D]`` from zero states.

    Returns hidden states ``[B, T, H]``. Padding must sit at the end of
    each row so it never influences valid positions.
    """
    B, T, _ = inputs.shape
    proj = cell.project_inputs(inputs)
    zeros = np.zeros((B, cell.hidden_size), dtype=inputs.dtype)
    h = ad.Tensor(zeros, requires_grad=False)
    c = ad.Tensor(zeros, requires_grad=False)
    outputs = []
    for t in range(T):
        step = {g: proj[g][:, t] for g in GATES}
        h, c = cell.step_projected(step, h, c)
        outputs.append(h)
    return ad.stack(outputs, axis=1)


def reversal_index(lengths, T):
    """Row-wise permutation reversing the first ``lengths[b]`` positions and fixing the rest."""
    lengths = np.asarray(lengths)
    t = np.arange(T)[None, :]
    return np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)


def reverse_padded(x: Tensor, lengths) -> Tensor:
    """Reverse each ``[B, T, ...]`` row within its valid length (an involution)."""
    B, T = x.shape[:2]
    idx = reversal_index(lengths, T)
    return x[np.arange(B)[:, None], idx]
