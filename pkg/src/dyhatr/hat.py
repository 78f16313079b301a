"""Hierarchical attention over one heterogeneous snapshot.

Node-level attention runs inside every edge-type sub-network: a node
attends over its sampled same-type neighbors (itself included), per head,
and the head outputs are concatenated.  Edge-level attention then fuses a
node's per-type vectors with one globally shared scoring network.

Row-vector convention throughout: node features are rows, so a transform
is ``X @ W`` with ``W`` of shape (in, out).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ContractError, ShapeError
from .graph import NeighborSample, Snapshot, sample_typed_neighbors, split_by_edge_type
from .tensor import Tensor

LEAKY_SLOPE = 0.2


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, name=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = shape or (fan_in, fan_out)
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True, name=name)


def zeros(shape, name=None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


@dataclass
class NodeAttentionParams:
    """Per edge type, all heads packed side by side.

    ``W`` is (input_dim, heads * head_dim); columns ``h*hd:(h+1)*hd`` belong
    to head h.  Row h of ``a`` (heads, 2 * head_dim) is that head's
    attention vector, self half first.
    """

    W: Tensor
    a: Tensor

    @property
    def heads(self) -> int:
        return self.a.shape[0]

    @property
    def head_dim(self) -> int:
        return self.W.shape[1] // self.heads

    @classmethod
    def init(cls, rng, input_dim: int, head_dim: int, heads: int, prefix: str = "node"):
        if heads < 1:
            raise ContractError("need at least one attention head")
        W = np.concatenate([glorot(rng, input_dim, head_dim).data for _ in range(heads)], axis=1)
        a = np.stack([glorot(rng, 2 * head_dim, 1).data[:, 0] for _ in range(heads)])
        return cls(Tensor(W, True, f"{prefix}/W"), Tensor(a, True, f"{prefix}/a"))

    def head(self, h: int) -> tuple[Tensor, Tensor]:
        """(W, a) of a single head, as views recorded on the tape."""
        hd = self.head_dim
        return self.W[:, h * hd : (h + 1) * hd], self.a[h : h + 1]

    def named(self, prefix: str):
        yield f"{prefix}/W", self.W
        yield f"{prefix}/a", self.a


@dataclass
class EdgeAttentionParams:
    """Shared across all edge types and snapshots: ``q . tanh(h W + b)`` scores a type."""

    W: Tensor
    b: Tensor
    q: Tensor

    @classmethod
    def init(cls, rng, embed_dim: int, hidden: int):
        return cls(
            glorot(rng, embed_dim, hidden, name="edge/W"),
            zeros((hidden,), name="edge/b"),
            glorot(rng, hidden, 1, name="edge/q"),
        )

    def named(self, prefix: str = "edge"):
        yield f"{prefix}/W", self.W
        yield f"{prefix}/b", self.b
        yield f"{prefix}/q", self.q


@dataclass
class SnapshotEmbedding:
    h: Tensor                                   # (N, E) fused, zero rows for absent nodes
    per_type: dict[str, tuple[np.ndarray, Tensor]] = field(default_factory=dict)
    alpha: dict[str, Tensor] = field(default_factory=dict)          # (n, m, heads)
    beta: Tensor | None = None                  # (n_present, R_present)
    present: np.ndarray | None = None           # registry indices with >= 1 typed neighbor
    types: list[str] = field(default_factory=list)


def node_attention(
    X: Tensor, W: Tensor, a: Tensor, sample: NeighborSample, slope: float = LEAKY_SLOPE
) -> tuple[Tensor, Tensor]:
    """Node-level attention for every node in ``sample``.

    ``a`` has one row per head and ``W`` the matching packed columns, so one
    call evaluates all heads.  Returns the head outputs concatenated in head
    order, shape (n, heads * head_dim), and the coefficients (n, m, heads)
    over each node's m sampled neighbors.
    """
    if a.ndim == 1:
        a = tn.reshape(a, (1, -1))
    heads = a.shape[0]
    hd = a.shape[1] // 2
    if W.shape[1] != heads * hd:
        raise ShapeError(f"W has {W.shape[1]} columns, expected {heads} heads x {hd}")
    N = X.shape[0]
    n, m = sample.neighbors.shape
    P = tn.reshape(X @ W, (N, heads, hd))
    # a . [Wx_i || Wx_j] splits into a self score and a neighbor score
    self_s = (P * a[:, :hd]).sum(axis=2)
    nbr_s = (P * a[:, hd:]).sum(axis=2)
    logits = tn.leaky_relu(tn.reshape(self_s[sample.nodes], (n, 1, heads)) + nbr_s[sample.neighbors], slope)
    alpha = tn.softmax(logits, axis=1)
    agg = (tn.reshape(alpha, (n, m, heads, 1)) * P[sample.neighbors]).sum(axis=1)
    return tn.elu(tn.reshape(agg, (n, heads * hd))), alpha


def multi_head_concat(heads: list[Tensor]) -> Tensor:
    if not heads:
        raise ContractError("no head outputs to concatenate")
    dims = {h.shape for h in heads}
    if len(dims) != 1:
        raise ContractError(f"head outputs differ in shape: {sorted(dims)}")
    if len(heads) == 1:
        return heads[0]
    return tn.concat(heads, axis=-1)


def edge_attention(
    per_type: list[Tensor], available: np.ndarray, params: EdgeAttentionParams
) -> tuple[Tensor, Tensor]:
    """Fuse per-type rows ``per_type[r]`` (each (n, E)) with edge-level attention.

    ``available[i, r]`` says whether node i has a representation for type r;
    unavailable types get weight exactly 0.  Every row needs at least one.
    """
    available = np.asarray(available, dtype=bool)
    if available.shape != (per_type[0].shape[0], len(per_type)):
        raise ShapeError(f"availability mask {available.shape} does not match inputs")
    if not available.any(axis=1).all():
        raise ContractError("edge_attention called for a node with no available edge type")
    cols = [tn.tanh(H @ params.W + params.b) @ params.q for H in per_type]
    scores = cols[0] if len(cols) == 1 else tn.concat(cols, axis=1)
    beta = tn.masked_softmax(scores, available, axis=1)
    h = None
    for r, H in enumerate(per_type):
        term = beta[:, r : r + 1] * H
        h = term if h is None else h + term
    return h, beta


def encode_snapshot(
    snapshot: Snapshot,
    X: Tensor,
    node_params: dict[str, NodeAttentionParams],
    edge_params: EdgeAttentionParams,
    k: int = 25,
    rng: np.random.Generator | None = None,
    samples: dict[str, NeighborSample] | None = None,
    slope: float = LEAKY_SLOPE,
) -> SnapshotEmbedding:
    """Node-level then edge-level attention for every registry node.

    Either pass ``samples`` (fixed neighborhoods per edge type) or ``rng``.
    Each edge type draws from its own child stream of ``rng``, so edges of
    one type never influence another type's samples.
    """
    N = snapshot.num_nodes
    if X.shape[0] != N:
        raise ShapeError(f"feature table has {X.shape[0]} rows for {N} nodes")
    some = next(iter(node_params.values()))
    E = some.heads * some.head_dim
    if samples is None:
        if rng is None:
            raise ContractError("encode_snapshot needs either samples or an rng")
        streams = rng.spawn(len(snapshot.edge_types))
    subs = split_by_edge_type(snapshot)
    out = SnapshotEmbedding(h=None)
    rows = []
    for code, r in enumerate(snapshot.edge_types):
        if r not in subs:
            continue
        if samples is not None:
            sample = samples.get(r)
            if sample is None:
                continue
        else:
            sample = sample_typed_neighbors(subs[r], code, k, streams[code])
        if len(sample.nodes) == 0:
            continue
        p = node_params[r]
        h_rt, alpha = node_attention(X, p.W, p.a, sample, slope)
        out.per_type[r] = (sample.nodes, h_rt)
        out.alpha[r] = alpha
        out.types.append(r)
        rows.append(sample.nodes)

    if not rows:
        out.h = Tensor(np.zeros((N, E)))
        out.present = np.zeros(0, dtype=np.int64)
        return out
    present = np.unique(np.concatenate(rows))
    pos = np.full(N, -1, dtype=np.int64)
    pos[present] = np.arange(len(present))
    avail = np.zeros((len(present), len(out.types)), dtype=bool)
    aligned = []
    for j, r in enumerate(out.types):
        nodes, H = out.per_type[r]
        avail[pos[nodes], j] = True
        if len(nodes) == len(present):
            aligned.append(H)  # nodes and present are both sorted, so rows line up
        else:
            aligned.append(tn.scatter_rows(H, pos[nodes], len(present)))
    fused, beta = edge_attention(aligned, avail, edge_params)
    out.h = fused if len(present) == N else tn.scatter_rows(fused, present, N)
    out.beta = beta
    out.present = present
    return out
