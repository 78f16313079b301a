"""Recurrent encoders and masked temporal self-attention over snapshot sequences.

All functions are batched over nodes: an input sequence is a list of T
tensors of shape (N, F), and the stacked RNN states have shape (N, T, D).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ContractError, ShapeError
from .hat import glorot, zeros
from .tensor import Tensor

LSTM_GATES = ("i", "f", "o", "c")
GRU_GATES = ("z", "r", "s")


@dataclass
class RnnParams:
    """Gate weights of shape (2D, D) applied to ``[h_t || s_{t-1}]``, plus (D,) biases.

    ``proj`` maps inputs of width F to D when the two differ.
    """

    variant: str
    W: dict[str, Tensor]
    b: dict[str, Tensor]
    proj: Tensor | None = None

    @classmethod
    def init(cls, rng, variant: str, input_dim: int, hidden: int):
        if variant not in ("lstm", "gru"):
            raise ContractError(f"unknown rnn variant {variant!r}")
        gates = LSTM_GATES if variant == "lstm" else GRU_GATES
        W = {g: glorot(rng, 2 * hidden, hidden, name=f"rnn/W_{g}") for g in gates}
        b = {g: zeros((hidden,), name=f"rnn/b_{g}") for g in gates}
        proj = glorot(rng, input_dim, hidden, name="rnn/proj") if input_dim != hidden else None
        return cls(variant, W, b, proj)

    @property
    def hidden(self) -> int:
        return next(iter(self.b.values())).shape[0]

    def named(self, prefix: str = "rnn"):
        for g in self.W:
            yield f"{prefix}/W_{g}", self.W[g]
            yield f"{prefix}/b_{g}", self.b[g]
        if self.proj is not None:
            yield f"{prefix}/proj", self.proj


@dataclass
class RnnState:
    s: Tensor
    c: Tensor | None = None

    @classmethod
    def zeros(cls, n: int, hidden: int, variant: str) -> "RnnState":
        c = Tensor(np.zeros((n, hidden))) if variant == "lstm" else None
        return cls(Tensor(np.zeros((n, hidden))), c)


def _gate(x: Tensor, p: RnnParams, g: str) -> Tensor:
    return x @ p.W[g] + p.b[g]


def _input(h: Tensor, p: RnnParams) -> Tensor:
    if p.proj is not None:
        return h @ p.proj
    if h.shape[-1] != p.hidden:
        raise ShapeError(f"input width {h.shape[-1]} != hidden width {p.hidden} and no projection")
    return h


def lstm_step(h: Tensor, prev: RnnState, p: RnnParams) -> RnnState:
    x = tn.concat([_input(h, p), prev.s], axis=-1)
    i = tn.sigmoid(_gate(x, p, "i"))
    f = tn.sigmoid(_gate(x, p, "f"))
    o = tn.sigmoid(_gate(x, p, "o"))
    c_tilde = tn.tanh(_gate(x, p, "c"))
    c = f * prev.c + i * c_tilde
    return RnnState(o * tn.tanh(c), c)


def gru_step(h: Tensor, prev: RnnState, p: RnnParams) -> RnnState:
    h = _input(h, p)
    x = tn.concat([h, prev.s], axis=-1)
    z = tn.sigmoid(_gate(x, p, "z"))
    r = tn.sigmoid(_gate(x, p, "r"))
    s_tilde = tn.tanh(_gate(tn.concat([h, r * prev.s], axis=-1), p, "s"))
    return RnnState((1.0 - z) * prev.s + z * s_tilde)


def run_rnn(inputs: list[Tensor], p: RnnParams) -> list[Tensor]:
    """States s^1..s^T from zero initial state."""
    step = lstm_step if p.variant == "lstm" else gru_step
    state = RnnState.zeros(inputs[0].shape[0], p.hidden, p.variant)
    out = []
    for h in inputs:
        state = step(h, state, p)
        out.append(state.s)
    return out


@dataclass
class TemporalAttentionParams:
    """Query/key/value maps with heads packed column-wise: each (D, heads * D')."""

    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    heads: int

    @classmethod
    def init(cls, rng, input_dim: int, head_dim: int, heads: int):
        if heads < 1:
            raise ContractError("need at least one temporal head")

        def packed(kind):
            W = np.concatenate([glorot(rng, input_dim, head_dim).data for _ in range(heads)], axis=1)
            return Tensor(W, True, f"temporal/W_{kind}")

        return cls(packed("q"), packed("k"), packed("v"), heads)

    @property
    def head_dim(self) -> int:
        return self.W_q.shape[1] // self.heads

    def head(self, h: int) -> tuple[Tensor, Tensor, Tensor]:
        cols = slice(h * self.head_dim, (h + 1) * self.head_dim)
        return self.W_q[:, cols], self.W_k[:, cols], self.W_v[:, cols]

    def named(self, prefix: str = "temporal"):
        yield f"{prefix}/W_q", self.W_q
        yield f"{prefix}/W_k", self.W_k
        yield f"{prefix}/W_v", self.W_v


def attention_mask(T: int, orientation: str = "eq7") -> np.ndarray:
    """Additive (T, T) mask of 0 / -inf.

    ``eq7`` keeps cell (u, v) when u <= v, so snapshot u attends to itself
    and later snapshots.  ``causal`` keeps u >= v instead.
    """
    u, v = np.indices((T, T))
    if orientation == "eq7":
        keep = u <= v
    elif orientation == "causal":
        keep = u >= v
    else:
        raise ContractError(f"unknown mask orientation {orientation!r}")
    return np.where(keep, 0.0, -np.inf)


def temporal_self_attention(
    S: Tensor, W_q: Tensor, W_k: Tensor, W_v: Tensor, mask: np.ndarray, heads: int = 1
) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over time.

    ``S`` is (T, D) or batched (N, T, D); the weight matrices hold ``heads``
    packed column blocks of width D'.  Returns the head outputs concatenated
    in head order, (..., T, heads * D'), and Gamma of shape (..., heads, T, T).
    """
    squeeze = S.ndim == 2
    if squeeze:
        S = tn.reshape(S, (1,) + S.shape)
    N, T, _ = S.shape
    d_head = W_q.shape[1] // heads

    def split(W):
        return tn.transpose(tn.reshape(S @ W, (N, T, heads, d_head)), (0, 2, 1, 3))

    Q, K, V = split(W_q), split(W_k), split(W_v)
    logits = (Q @ K.T) * (1.0 / np.sqrt(d_head))
    gamma = tn.masked_softmax(logits, mask, axis=-1)
    Z = tn.reshape(tn.transpose(gamma @ V, (0, 2, 1, 3)), (N, T, heads * d_head))
    if squeeze:
        return tn.reshape(Z, Z.shape[1:]), tn.reshape(gamma, gamma.shape[1:])
    return Z, gamma


@dataclass
class FinalEmbedding:
    z: Tensor                    # (N, d) embedding of the last snapshot
    Z: Tensor | None = None      # (N, T, d) all snapshots, when produced
    states: Tensor | None = None
    gammas: list[Tensor] = field(default_factory=list)


def encode_sequences(
    inputs: list[Tensor],
    rnn: RnnParams | None,
    attention: TemporalAttentionParams | None,
    mask: str = "eq7",
) -> FinalEmbedding:
    """RNN (optional) then multi-head temporal attention (optional).

    With neither, the per-snapshot inputs are concatenated.
    """
    if not inputs:
        raise ContractError("empty input sequence")
    if rnn is None and attention is None:
        z = inputs[0] if len(inputs) == 1 else tn.concat(inputs, axis=-1)
        return FinalEmbedding(z)
    seq = run_rnn(inputs, rnn) if rnn is not None else list(inputs)
    S = tn.stack(seq, axis=1)
    if attention is None:
        return FinalEmbedding(seq[-1], states=S)
    M = attention_mask(len(seq), mask)
    Z, gamma = temporal_self_attention(S, attention.W_q, attention.W_k, attention.W_v, M, attention.heads)
    return FinalEmbedding(Z[:, -1, :], Z=Z, states=S, gammas=[gamma])
