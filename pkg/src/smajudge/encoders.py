"""Embedding lookup, LSTM/BiLSTM sequence encoding, and grounds attention.

Three separate BiLSTM parameter sets encode the lower-court facts, the
appellate fact sequence, and the grounds of appeal; per-position hidden
vectors concatenate the forward and backward passes.  The attention stage
scores each appellate fact position against a context vector derived from
the encoded grounds and pools the hidden states with those weights.

A hidden sequence is an N-by-2H matrix whose row i is h_i.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .corpus import PAD_ID
from .numerics import RngStream, Tensor

HiddenSequence = Tensor


class EmbeddingTable:
    """Trainable token vectors; the PAD row is zero and never updated."""

    def __init__(self, vocab_size: int, dim: int, rng: RngStream, pad_id: int = PAD_ID):
        weights = nm.embedding_uniform((vocab_size, dim), rng)
        weights[pad_id] = 0.0
        self.weights = Tensor(weights, requires_grad=True)
        self.pad_id = pad_id
        self.dim = dim

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weights": self.weights}


def embed_sequence(token_ids, table: EmbeddingTable) -> Tensor:
    """Look up one row per token; gradients never touch the PAD row."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty sequence")
    return nm.gather_rows(table.weights, ids, skip_id=table.pad_id)


class LstmParams:
    """One direction of an LSTM: fused input/recurrent gate weights.

    Gate order along the fused 4H axis is input, forget, output, candidate.
    """

    def __init__(self, input_dim: int, hidden: int, rng: RngStream):
        self.hidden = hidden
        self.w_x = Tensor(nm.glorot_uniform((4 * hidden, input_dim), rng), requires_grad=True)
        self.w_h = Tensor(nm.glorot_uniform((4 * hidden, hidden), rng), requires_grad=True)
        self.b = Tensor(np.zeros(4 * hidden), requires_grad=True)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_x": self.w_x, f"{prefix}.w_h": self.w_h, f"{prefix}.b": self.b}

    def run(self, x: Tensor, reverse: bool = False) -> Tensor:
        return nm.lstm_sequence(x, self.w_x, self.w_h, self.b, reverse=reverse)


class BiLstmEncoder:
    """Forward and backward LSTM over one text field; outputs are 2H wide."""

    def __init__(self, input_dim: int, hidden: int, rng: RngStream, name: str = ""):
        self.hidden = hidden
        self.name = name
        self.forward = LstmParams(input_dim, hidden, rng)
        self.backward = LstmParams(input_dim, hidden, rng)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {}
        params.update(self.forward.named_parameters(f"{prefix}.fw"))
        params.update(self.backward.named_parameters(f"{prefix}.bw"))
        return params


def bilstm_encode(x: Tensor, enc: BiLstmEncoder) -> HiddenSequence:
    """Encode an N-by-k embedded sequence into the N-by-2H hidden matrix.

    Row i concatenates the forward state (a function of x_1..x_i) with the
    backward state (a function of x_i..x_N).
    """
    if x.data.ndim != 2 or x.shape[0] < 1:
        raise ValueError("empty input sequence")
    fwd = enc.forward.run(x, reverse=False)
    bwd = enc.backward.run(x, reverse=True)
    return nm.concat_cols(fwd, bwd)


def last_hidden(states: HiddenSequence) -> Tensor:
    """Per-field summary: the final state of each direction, concatenated.

    The forward half comes from the last position, the backward half from the
    first position (the backward pass finishes there after consuming the whole
    sequence).  Taking both halves from the last row would leave the backward
    recurrence unused by any consumer of the summary alone.
    """
    n = states.shape[0]
    width = states.shape[1]
    half = width // 2
    fwd_final = nm.slice_vec(nm.row(states, n - 1), 0, half)
    bwd_final = nm.slice_vec(nm.row(states, 0), half, width)
    return nm.concat([fwd_final, bwd_final])


class AttentionParams:
    """Context map over the encoded grounds plus the fact-side projection."""

    def __init__(self, hidden: int, rng: RngStream, att_dim: int | None = None):
        dim = att_dim if att_dim is not None else 2 * hidden
        self.w_ctx = Tensor(nm.glorot_uniform((dim, 2 * hidden), rng), requires_grad=True)
        self.b_ctx = Tensor(np.zeros(dim), requires_grad=True)
        self.w_proj = Tensor(nm.glorot_uniform((dim, 2 * hidden), rng), requires_grad=True)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_ctx": self.w_ctx, f"{prefix}.b_ctx": self.b_ctx,
                f"{prefix}.w_proj": self.w_proj}


def grounds_attention(h_af: HiddenSequence, h_g_last: Tensor,
                      att: AttentionParams) -> tuple[Tensor, Tensor]:
    """Weights over fact positions driven by the grounds context vector.

    Returns (alpha, u): alpha is a probability vector over the fact
    positions and u their alpha-weighted sum.
    """
    if h_af.data.ndim != 2 or h_af.shape[0] < 1:
        raise ValueError("empty fact sequence")
    mu = nm.affine(h_g_last, att.w_ctx, att.b_ctx)
    projected = nm.tanh(nm.matmul_t(h_af, att.w_proj))
    scores = nm.matvec(projected, mu)
    alpha = nm.softmax(scores)
    u = nm.vecmat(alpha, h_af)
    return alpha, u


def appellate_fact_repr(h_af: HiddenSequence, u: Tensor) -> Tensor:
    """Concatenate the last fact hidden state with the attention pool: 4H wide."""
    h_last = last_hidden(h_af)
    if h_last.shape != u.shape:
        raise ValueError(f"dimension mismatch: {h_last.shape} vs {u.shape}")
    return nm.concat([h_last, u])
