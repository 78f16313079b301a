"""End-to-end model: parameters, full forward pass, skip-gram loss and training loop."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as tn
from .errors import CheckpointError, ConfigError, NumericError
from .evaluation import EvalSplit, validation_auroc
from .graph import DynamicGraph, NeighborSample, NodeFeatures, negative_distribution, walk_pairs
from .hat import EdgeAttentionParams, NodeAttentionParams, SnapshotEmbedding, encode_snapshot
from .optim import make_optimizer
from .temporal import FinalEmbedding, RnnParams, TemporalAttentionParams, encode_sequences
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

# variant name -> (rnn cell, temporal attention on?)
VARIANTS = {
    "HAT-C": (None, False),
    "HAT-GRU": ("gru", False),
    "HAT-LSTM": ("lstm", False),
    "HAT-T": (None, True),
    "HAT-TGRU": ("gru", True),
    "HAT-TLSTM": ("lstm", True),
}


@dataclass
class TrainConfig:
    variant: str = "HAT-TGRU"
    feature_dim: int = 32          # width of the id-embedding table
    embed_dim: int = 32            # E = heads * head_dim, also F
    heads: int = 4
    edge_att_dim: int = 32
    rnn_dim: int | None = None     # D; defaults to F
    out_dim: int = 32              # d = temporal_heads * D'
    temporal_heads: int = 4
    mask: str = "eq7"
    k: int = 25
    num_walks: int = 10
    walk_len: int = 10
    window: int = 5
    negatives: int = 5
    l2: float = 1e-4
    optimizer: str = "adam"
    lr: float = 0.01
    epochs: int = 100
    batch_size: int = 512
    seed: int = 0
    freeze_walks: bool = False
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        for name in ("feature_dim", "embed_dim", "heads", "edge_att_dim", "out_dim",
                     "temporal_heads", "k", "num_walks", "negatives", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.walk_len < 2:
            raise ConfigError("walk_len must be >= 2")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.out_dim % self.temporal_heads:
            raise ConfigError(
                f"out_dim {self.out_dim} not divisible by temporal_heads {self.temporal_heads}"
            )
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.mask not in ("eq7", "causal"):
            raise ConfigError(f"unknown mask {self.mask!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    @property
    def rnn(self) -> str | None:
        return VARIANTS[self.variant][0]

    @property
    def temporal_attention(self) -> bool:
        return VARIANTS[self.variant][1]

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def hidden(self) -> int:
        return self.rnn_dim or self.embed_dim

    def final_dim(self, T: int) -> int:
        if self.temporal_attention:
            return self.out_dim
        if self.rnn:
            return self.hidden
        return T * self.embed_dim

    def with_rnn(self, cell: str) -> "TrainConfig":
        """Same variant family with a different recurrent cell."""
        if cell not in ("gru", "lstm"):
            raise ConfigError(f"unknown rnn {cell!r}")
        if self.rnn is None:
            return self
        name = ("HAT-T" if self.temporal_attention else "HAT-") + cell.upper()
        return replace(self, variant=name)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown train config keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class DyhatrParams:
    """Every learnable tensor of the model, plus fixed node attributes if used."""

    embedding: Tensor | None
    node: dict[str, NodeAttentionParams]
    edge: EdgeAttentionParams
    rnn: RnnParams | None = None
    temporal: TemporalAttentionParams | None = None
    attributes: np.ndarray | None = None

    def named(self) -> list[tuple[str, Tensor]]:
        out = []
        if self.embedding is not None:
            out.append(("input/embedding", self.embedding))
        for r in sorted(self.node):
            out.extend(self.node[r].named(f"node/{r}"))
        out.extend(self.edge.named())
        if self.rnn is not None:
            out.extend(self.rnn.named())
        if self.temporal is not None:
            out.extend(self.temporal.named())
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        mine = dict(self.named())
        if set(mine) != set(state):
            missing = sorted(set(mine) - set(state))
            extra = sorted(set(state) - set(mine))
            raise CheckpointError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, arr in state.items():
            if mine[name].shape != arr.shape:
                raise CheckpointError(f"{name}: shape {arr.shape} != expected {mine[name].shape}")
            mine[name].data[...] = arr

    def inputs(self) -> Tensor:
        if self.attributes is None:
            return self.embedding
        fixed = Tensor(self.attributes)
        if self.embedding is None:
            return fixed
        return tn.concat([self.embedding, fixed], axis=1)


def init_params(
    graph: DynamicGraph,
    config: TrainConfig,
    rng: np.random.Generator,
    features: NodeFeatures | None = None,
) -> DyhatrParams:
    features = features or NodeFeatures("id", config.feature_dim)
    N = graph.num_nodes
    embedding = None
    if "id" in features.mode:
        limit = np.sqrt(3.0 / features.dim)
        embedding = Tensor(rng.uniform(-limit, limit, (N, features.dim)), True, "input/embedding")
    attrs = features.attributes if "attribute" in features.mode else None
    if attrs is not None and attrs.shape[0] != N:
        raise ConfigError(f"attribute matrix has {attrs.shape[0]} rows for {N} nodes")
    in_dim = features.input_dim
    node = {
        r: NodeAttentionParams.init(rng, in_dim, config.head_dim, config.heads, prefix=f"node/{r}")
        for r in graph.edge_types
    }
    edge = EdgeAttentionParams.init(rng, config.embed_dim, config.edge_att_dim)
    rnn = RnnParams.init(rng, config.rnn, config.embed_dim, config.hidden) if config.rnn else None
    temporal = None
    if config.temporal_attention:
        width = config.hidden if config.rnn else config.embed_dim
        temporal = TemporalAttentionParams.init(
            rng, width, config.out_dim // config.temporal_heads, config.temporal_heads
        )
    return DyhatrParams(embedding, node, edge, rnn, temporal, attrs)


def forward_full(
    graph: DynamicGraph,
    params: DyhatrParams,
    config: TrainConfig,
    rng: np.random.Generator | None = None,
    samples: list[dict[str, NeighborSample]] | None = None,
) -> tuple[FinalEmbedding, list[SnapshotEmbedding]]:
    """Encode every snapshot, then the temporal path selected by ``config.variant``."""
    X = params.inputs()
    snaps = []
    for t, snap in enumerate(graph.snapshots):
        snaps.append(
            encode_snapshot(
                snap, X, params.node, params.edge, k=config.k, rng=rng,
                samples=None if samples is None else samples[t], slope=config.leaky_slope,
            )
        )
    final = encode_sequences([s.h for s in snaps], params.rnn, params.temporal, config.mask)
    return final, snaps


def loss(z: Tensor, u, v, negs, tensors, l2: float) -> Tensor:
    """Skip-gram negative-sampling loss summed over (u, v) pairs, plus ``l2 * sum(p**2)``.

    ``negs`` is (m, Q); the expectation over the noise distribution is the
    mean over the Q draws, scaled by Q.
    """
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    negs = np.asarray(negs, dtype=np.int64)
    if len(u) == 0:
        raise ValueError("loss needs at least one example")
    m, Q = negs.shape
    zu = z[u]
    pos = (zu * z[v]).sum(axis=1)
    neg = (tn.reshape(zu, (m, 1, -1)) * z[negs]).sum(axis=2)
    data = -tn.log_sigmoid(pos).sum() - Q * tn.mean(tn.log_sigmoid(-neg), axis=1).sum()
    if l2 == 0:
        return data
    penalty = None
    for p in tensors:
        sq = (p * p).sum()
        penalty = sq if penalty is None else penalty + sq
    return data + l2 * penalty


def embed(graph: DynamicGraph, params: DyhatrParams, config: TrainConfig, seed: int | None = None) -> np.ndarray:
    """Final embeddings (no gradient recording), neighbor samples drawn from a fixed stream."""
    rng = np.random.default_rng([config.seed if seed is None else seed, 0xE3B])
    final, _ = forward_full(graph, params, config, rng)
    return final.z.data.copy()


@dataclass
class TrainResult:
    params: DyhatrParams
    embeddings: np.ndarray
    history: list[dict] = field(default_factory=list)
    best_epoch: int | None = None


def _diagnose(params: DyhatrParams) -> str:
    worst = max(params.named(), key=lambda nt: float(np.nan_to_num(np.abs(nt[1].data), nan=np.inf).max()))
    return f"{worst[0]} (max |value| {np.abs(worst[1].data).max():.3g})"


def train(
    graph: DynamicGraph,
    config: TrainConfig,
    features: NodeFeatures | None = None,
    split: EvalSplit | None = None,
) -> TrainResult:
    """Optimise the loss on walks over the last snapshot.

    With a validation ``split`` the returned parameters are those of the
    epoch with the best validation AUROC; otherwise the last epoch's.
    """
    init_rng, walk_rng, neg_rng, nbr_rng = np.random.default_rng(config.seed).spawn(4)
    params = init_params(graph, config, init_rng, features)
    tensors = params.tensors()
    opt = make_optimizer(config.optimizer, tensors, config.lr)
    last = graph.snapshots[-1]
    if last.num_edges == 0:
        raise ConfigError("last training snapshot has no edges; nothing to train on")
    sampler = negative_distribution(last)
    frozen = None
    history: list[dict] = []
    best_auc, best_epoch, best_state = -np.inf, None, None

    for epoch in range(config.epochs):
        if frozen is None or not config.freeze_walks:
            frozen = walk_pairs(last, config.walk_len, config.num_walks, config.window, walk_rng)
        u_all, v_all = frozen
        if len(u_all) == 0:
            raise ConfigError("random walks produced no training pairs")
        order = walk_rng.permutation(len(u_all))
        total = 0.0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start : start + config.batch_size]
            negs = sampler.sample((len(idx), config.negatives), neg_rng)
            try:
                with Tape() as tape:
                    final, _ = forward_full(graph, params, config, nbr_rng)
                    L = loss(final.z, u_all[idx], v_all[idx], negs, tensors, config.l2)
                grads = tape.backward(L)
                opt.step(grads)
            except NumericError as exc:
                raise NumericError(
                    f"epoch {epoch} batch {b}: {exc}; largest parameter {_diagnose(params)}"
                ) from exc
            total += L.item()
        record = {"epoch": epoch, "loss": total / len(order)}
        if split is not None:
            auc = validation_auroc(embed(graph, params, config), split)
            record["val_auroc"] = auc
            if auc > best_auc:
                best_auc, best_epoch, best_state = auc, epoch, params.state_dict()
        history.append(record)
        log.info("epoch %d loss %.5f%s", epoch, record["loss"],
                 f" val_auroc {record['val_auroc']:.4f}" if split is not None else "")

    if best_state is not None:
        params.load_state(best_state)
    return TrainResult(params, embed(graph, params, config), history, best_epoch)


# ---------------------------------------------------------------------------
# checkpoints: magic, u32 version, u64 header length, JSON header, raw <f8 data

MAGIC = b"DYHATRCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: DyhatrParams, config: TrainConfig, meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, t in params.named():
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "tensors": entries,
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hb)))
        fh.write(hb)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: no such checkpoint")
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", raw, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )
    pos += struct.calcsize("<IQ")
    header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    state = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        start = pos + e["offset"]
        if start + 8 * n > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        state[e["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=start).reshape(e["shape"]).astype(np.float64)
    return header, state


def load_checkpoint(path, graph: DynamicGraph, features: NodeFeatures | None = None):
    """Rebuild parameters for ``graph`` from a checkpoint; returns (params, config, header)."""
    header, state = read_checkpoint(path)
    config = TrainConfig.from_dict(header["config"])
    params = init_params(graph, config, np.random.default_rng(0), features)
    params.load_state(state)
    return params, config, header
