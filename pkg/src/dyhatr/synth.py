"""Dynamic heterogeneous stochastic-block graphs with drifting communities."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .graph import DynamicGraph, from_edge_rows, save_snapshots


@dataclass
class EdgeTypeSpec:
    name: str
    src_type: str
    dst_type: str
    p_in: float
    p_out: float


def _default_edge_types():
    return [
        EdgeTypeSpec("click", "user", "item", 0.15, 0.01),
        EdgeTypeSpec("buy", "user", "item", 0.10, 0.005),
    ]


@dataclass
class SyntheticSpec:
    """Block model per edge type: ``p_in`` within a community, ``p_out`` across.

    Each snapshot, every node independently redraws its community with
    probability ``drift``.
    """

    node_counts: dict[str, int] = field(default_factory=lambda: {"user": 150, "item": 150})
    edge_types: list[EdgeTypeSpec] = field(default_factory=_default_edge_types)
    communities: int = 4
    drift: float = 0.05
    T: int = 7
    seed: int = 0

    def __post_init__(self):
        self.edge_types = [e if isinstance(e, EdgeTypeSpec) else EdgeTypeSpec(**e) for e in self.edge_types]
        self.validate()

    def validate(self) -> None:
        if self.T < 2:
            raise ConfigError("synthetic graphs need T >= 2")
        if self.communities < 1:
            raise ConfigError("need at least one community")
        if not 0.0 <= self.drift <= 1.0:
            raise ConfigError("drift must lie in [0, 1]")
        if not self.edge_types:
            raise ConfigError("need at least one edge type")
        for e in self.edge_types:
            for p in (e.p_in, e.p_out):
                if not 0.0 <= p <= 1.0:
                    raise ConfigError(f"edge type {e.name}: probabilities must lie in [0, 1]")
            for t in (e.src_type, e.dst_type):
                if t not in self.node_counts:
                    raise ConfigError(f"edge type {e.name} references unknown node type {t!r}")
        if any(n < 1 for n in self.node_counts.values()):
            raise ConfigError("node counts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown synthetic spec keys: {sorted(extra)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        return cls.from_dict(json.loads(text))


def node_ids(spec: SyntheticSpec) -> dict[str, list[str]]:
    return {t: [f"{t}{i}" for i in range(n)] for t, n in spec.node_counts.items()}


def community_paths(spec: SyntheticSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """(T, n) community labels per node type."""
    out = {}
    for t, n in spec.node_counts.items():
        labels = np.empty((spec.T, n), dtype=np.int64)
        labels[0] = rng.permutation(np.arange(n) % spec.communities)
        for step in range(1, spec.T):
            move = rng.random(n) < spec.drift
            labels[step] = np.where(move, rng.integers(0, spec.communities, n), labels[step - 1])
        out[t] = labels
    return out


def _block_probs(e: EdgeTypeSpec, cs: np.ndarray, cd: np.ndarray) -> np.ndarray:
    P = np.where(cs[:, None] == cd[None, :], e.p_in, e.p_out)
    if e.src_type == e.dst_type:
        P = np.triu(P, k=1)
    return P


def expected_edges(spec: SyntheticSpec, communities: dict[str, np.ndarray]) -> np.ndarray:
    """Analytic expected edge count per snapshot given the community paths."""
    out = np.zeros(spec.T)
    for t in range(spec.T):
        for e in spec.edge_types:
            out[t] += _block_probs(e, communities[e.src_type][t], communities[e.dst_type][t]).sum()
    return out


def generate(spec: SyntheticSpec) -> tuple[DynamicGraph, dict[str, np.ndarray]]:
    rng = np.random.default_rng(spec.seed)
    comm = community_paths(spec, rng)
    ids = node_ids(spec)
    rows = []
    for t in range(spec.T):
        for e in spec.edge_types:
            P = _block_probs(e, comm[e.src_type][t], comm[e.dst_type][t])
            hit = rng.random(P.shape) < P
            for i, j in zip(*np.nonzero(hit)):
                rows.append((0, ids[e.src_type][i], e.src_type, ids[e.dst_type][j], e.dst_type, e.name, t))
    return from_edge_rows(rows, source="synthetic"), comm


def write_synthetic(spec: SyntheticSpec, out_dir) -> dict[str, Path]:
    """Write ``graph.tsv``, ``communities.tsv`` and ``spec.json`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g, comm = generate(spec)
    paths = {"graph": out / "graph.tsv", "communities": out / "communities.tsv", "spec": out / "spec.json"}
    save_snapshots(g, paths["graph"])
    ids = node_ids(spec)
    with open(paths["communities"], "w", encoding="utf-8") as fh:
        fh.write("# node_id\tnode_type\tsnapshot\tcommunity\n")
        for t in range(spec.T):
            for ntype in sorted(comm):
                for nid, c in zip(ids[ntype], comm[ntype][t].tolist()):
                    fh.write(f"{nid}\t{ntype}\t{t}\t{c}\n")
    paths["spec"].write_text(spec.to_json(), encoding="utf-8")
    return paths
