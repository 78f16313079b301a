"""Dynamic heterogeneous graphs as ordered lists of typed snapshots.

Nodes carry a global integer index into the graph's registry; every
snapshot stores its edges as parallel ``src``/``dst``/``etype`` arrays over
those indices, so the same node keeps the same row in every embedding
matrix.  All sampling helpers take an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, asdict
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DataError, ParseError

log = logging.getLogger(__name__)

NEG_POWER = 0.75


class Snapshot:
    """One static heterogeneous graph ``G^t``.

    ``nodes`` is the sorted array of registry indices present in this
    snapshot.  Edges are a multiset: duplicate rows are kept.
    """

    def __init__(
        self,
        num_nodes: int,
        src: Sequence[int],
        dst: Sequence[int],
        etype: Sequence[int],
        edge_types: Sequence[str],
        directed: bool = False,
        nodes: Iterable[int] | None = None,
    ):
        self.num_nodes = int(num_nodes)
        self.src = np.asarray(src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        self.etype = np.asarray(etype, dtype=np.int64).reshape(-1)
        self.edge_types = tuple(edge_types)
        self.directed = bool(directed)
        if not (len(self.src) == len(self.dst) == len(self.etype)):
            raise ContractError("src, dst and etype must have equal length")
        ends = np.concatenate([self.src, self.dst])
        if len(ends) and (ends.min() < 0 or ends.max() >= self.num_nodes):
            raise ContractError("edge endpoint outside the node registry")
        if len(self.etype) and (self.etype.min() < 0 or self.etype.max() >= len(self.edge_types)):
            raise ContractError("edge type code outside the edge type list")
        present = np.unique(ends)
        if nodes is not None:
            present = np.union1d(present, np.asarray(list(nodes), dtype=np.int64))
        self.nodes = present
        for arr in (self.src, self.dst, self.etype, self.nodes):
            arr.setflags(write=False)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def __len__(self):
        return self.num_edges

    def __eq__(self, other):
        if not isinstance(other, Snapshot):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.edge_types == other.edge_types
            and self.directed == other.directed
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.etype, other.etype)
            and np.array_equal(self.nodes, other.nodes)
        )

    def __repr__(self):
        return f"Snapshot(|V|={len(self.nodes)}, |E|={self.num_edges}, types={self.present_edge_types()})"

    def present_edge_types(self) -> list[str]:
        return [self.edge_types[c] for c in np.unique(self.etype)]

    def edge_counts(self) -> dict[str, int]:
        counts = np.bincount(self.etype, minlength=len(self.edge_types))
        return {name: int(c) for name, c in zip(self.edge_types, counts) if c}

    def _csr(self, keep: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s, d = self.src[keep], self.dst[keep]
        if self.directed:
            heads, tails = s, d
        else:
            loop = s == d
            heads = np.concatenate([s, d[~loop]])
            tails = np.concatenate([d, s[~loop]])
        order = np.argsort(heads, kind="stable")
        indices = tails[order]
        indptr = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(heads, minlength=self.num_nodes), out=indptr[1:])
        return indptr, indices

    @cached_property
    def _typed_csr(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        return {int(c): self._csr(self.etype == c) for c in np.unique(self.etype)}

    @cached_property
    def _all_csr(self) -> tuple[np.ndarray, np.ndarray]:
        return self._csr(np.ones(self.num_edges, dtype=bool))

    def adjacency(self, edge_type: str | int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """CSR ``(indptr, indices)`` over typed neighbors, or all edges if ``edge_type`` is None."""
        if edge_type is None:
            return self._all_csr
        code = self._code(edge_type)
        if code in self._typed_csr:
            return self._typed_csr[code]
        return np.zeros(self.num_nodes + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)

    def neighbors(self, node: int, edge_type: str | int | None = None) -> np.ndarray:
        indptr, indices = self.adjacency(edge_type)
        return indices[indptr[node] : indptr[node + 1]]

    def degree(self, edge_type: str | int | None = None) -> np.ndarray:
        return np.diff(self.adjacency(edge_type)[0])

    def _code(self, edge_type: str | int) -> int:
        if isinstance(edge_type, (int, np.integer)):
            return int(edge_type)
        try:
            return self.edge_types.index(edge_type)
        except ValueError:
            raise ContractError(f"unknown edge type {edge_type!r}") from None

    def edge_set(self) -> set[tuple[int, int]]:
        """Type-agnostic pairs, both orientations when undirected."""
        pairs = set(zip(self.src.tolist(), self.dst.tolist()))
        if not self.directed:
            pairs |= {(b, a) for a, b in pairs}
        return pairs


@dataclass
class DynamicGraph:
    """Ordered snapshots sharing one node registry."""

    node_ids: list[str]
    node_type_of: list[str]
    edge_types: tuple[str, ...]
    snapshots: list[Snapshot]
    times: list[int] = field(default_factory=list)
    directed: bool = False

    def __post_init__(self):
        if not self.times:
            self.times = list(range(len(self.snapshots)))
        if len(self.times) != len(self.snapshots):
            raise ContractError("one time index per snapshot")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ContractError("snapshot time indices must be strictly increasing")
        if len(self.node_ids) != len(self.node_type_of):
            raise ContractError("node_ids and node_type_of differ in length")
        self.index_of = {nid: i for i, nid in enumerate(self.node_ids)}
        if len(self.index_of) != len(self.node_ids):
            raise ContractError("duplicate node ids in registry")

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def T(self) -> int:
        return len(self.snapshots)

    @property
    def node_types(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.node_type_of)))

    def __eq__(self, other):
        if not isinstance(other, DynamicGraph):
            return NotImplemented
        return (
            self.node_ids == other.node_ids
            and self.node_type_of == other.node_type_of
            and self.edge_types == other.edge_types
            and self.times == other.times
            and self.directed == other.directed
            and self.snapshots == other.snapshots
        )

    def stats(self) -> dict:
        return {
            "nodes": self.num_nodes,
            "edges": int(sum(s.num_edges for s in self.snapshots)),
            "node_types": len(self.node_types),
            "edge_types": len(self.edge_types),
            "snapshots": self.T,
            "edges_per_snapshot": [s.num_edges for s in self.snapshots],
        }

    def subgraph(self, start: int, stop: int) -> "DynamicGraph":
        """Snapshots ``[start, stop)`` over the same registry."""
        return DynamicGraph(
            self.node_ids,
            self.node_type_of,
            self.edge_types,
            self.snapshots[start:stop],
            self.times[start:stop],
            self.directed,
        )

    def with_snapshots(self, snapshots: list[Snapshot], times: list[int] | None = None) -> "DynamicGraph":
        return DynamicGraph(
            self.node_ids, self.node_type_of, self.edge_types, snapshots, times or [], self.directed
        )


# ---------------------------------------------------------------------------
# ingestion


@dataclass
class FormatConfig:
    """Column layout of an edge-list file.

    The default is the native 6-column layout.  For SNAP-style files set
    ``timestamp`` instead of ``snapshot`` plus ``bin_seconds``, and give
    constant types where the file has no type column.
    """

    delimiter: str | None = "\t"
    src: int = 0
    src_type: int | None = 1
    dst: int = 2
    dst_type: int | None = 3
    edge_type: int | None = 4
    snapshot: int | None = 5
    timestamp: int | None = None
    bin_seconds: float | None = None
    origin: float | None = None
    const_src_type: str = "node"
    const_dst_type: str = "node"
    const_edge_type: str = "edge"
    directed: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "FormatConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise DataError(f"unknown format descriptor keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "FormatConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


def _parse_rows(path: Path, fmt: FormatConfig):
    if fmt.snapshot is None and (fmt.timestamp is None or not fmt.bin_seconds):
        raise DataError("format needs a snapshot column, or a timestamp column with bin_seconds")
    cols = [fmt.src, fmt.dst, fmt.src_type, fmt.dst_type, fmt.edge_type, fmt.snapshot, fmt.timestamp]
    need = max(c for c in cols if c is not None) + 1
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split(fmt.delimiter)
            if len(parts) < need:
                raise ParseError(f"expected at least {need} fields, got {len(parts)}", path, lineno)
            src, dst = parts[fmt.src].strip(), parts[fmt.dst].strip()
            if not src or not dst:
                raise ParseError("empty node id", path, lineno)
            stype = parts[fmt.src_type].strip() if fmt.src_type is not None else fmt.const_src_type
            dtype = parts[fmt.dst_type].strip() if fmt.dst_type is not None else fmt.const_dst_type
            etype = parts[fmt.edge_type].strip() if fmt.edge_type is not None else fmt.const_edge_type
            if fmt.snapshot is not None:
                tok = parts[fmt.snapshot].strip()
                try:
                    when = int(tok)
                except ValueError:
                    raise ParseError(f"snapshot index {tok!r} is not an integer", path, lineno) from None
                if when < 0:
                    raise ParseError(f"negative snapshot index {when}", path, lineno)
            else:
                tok = parts[fmt.timestamp].strip()
                try:
                    when = float(tok)
                except ValueError:
                    raise ParseError(f"timestamp {tok!r} is not numeric", path, lineno) from None
            rows.append((lineno, src, stype, dst, dtype, etype, when))
    return rows


def load_snapshots(path, format_config: FormatConfig | dict | None = None) -> DynamicGraph:
    """Read an edge-list file into a :class:`DynamicGraph`.

    Missing snapshot indices between the smallest and largest one become
    empty snapshots (with a warning).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    if isinstance(format_config, dict):
        fmt = FormatConfig.from_dict(format_config)
    else:
        fmt = format_config or FormatConfig()
    rows = _parse_rows(path, fmt)

    if fmt.snapshot is None:
        origin = fmt.origin if fmt.origin is not None else min(r[6] for r in rows)
        rows = [r[:6] + (int(math.floor((r[6] - origin) / fmt.bin_seconds)),) for r in rows]
        if any(r[6] < 0 for r in rows):
            raise DataError("timestamps earlier than the configured origin")

    return from_edge_rows(rows, fmt.directed, source=path)


def from_edge_rows(rows, directed: bool = False, source=None) -> DynamicGraph:
    """Build a graph from ``(lineno, src, src_type, dst, dst_type, edge_type, snapshot)`` tuples."""
    if not rows:
        raise DataError(f"{source or 'input'}: no edges")
    times = sorted({r[6] for r in rows})
    lo, hi = times[0], times[-1]
    gaps = sorted(set(range(lo, hi + 1)) - set(times))
    if gaps:
        warnings.warn(f"{source or 'input'}: snapshot indices {gaps} have no edges; kept as empty snapshots")
    span = list(range(lo, hi + 1))

    # registry order: first appearance scanning snapshots in time order
    by_time: dict[int, list] = {t: [] for t in span}
    for r in rows:
        by_time[r[6]].append(r)
    node_ids: list[str] = []
    node_type_of: list[str] = []
    index_of: dict[str, int] = {}
    for t in span:
        for lineno, src, stype, dst, dtype, _, _ in by_time[t]:
            for nid, ntype in ((src, stype), (dst, dtype)):
                i = index_of.get(nid)
                if i is None:
                    index_of[nid] = len(node_ids)
                    node_ids.append(nid)
                    node_type_of.append(ntype)
                elif node_type_of[i] != ntype:
                    raise ParseError(
                        f"node {nid!r} typed {ntype!r} but earlier {node_type_of[i]!r}", source, lineno
                    )
    edge_types = tuple(sorted({r[5] for r in rows}))
    code = {name: c for c, name in enumerate(edge_types)}
    n = len(node_ids)
    snaps = []
    for t in span:
        rs = by_time[t]
        snaps.append(
            Snapshot(
                n,
                [index_of[r[1]] for r in rs],
                [index_of[r[3]] for r in rs],
                [code[r[5]] for r in rs],
                edge_types,
                directed=directed,
            )
        )
    g = DynamicGraph(node_ids, node_type_of, edge_types, snaps, span, directed)
    if len(g.node_types) + len(g.edge_types) <= 2:
        warnings.warn(f"{source or 'input'}: graph is homogeneous (|O|+|R| <= 2)")
    log.info("loaded %s: %s", source, g.stats())
    return g


def save_snapshots(g: DynamicGraph, path) -> None:
    """Write the native 6-column edge list; inverse of :func:`load_snapshots`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# src_id\tsrc_type\tdst_id\tdst_type\tedge_type\tsnapshot\n")
        for t, s in zip(g.times, g.snapshots):
            for a, b, e in zip(s.src.tolist(), s.dst.tolist(), s.etype.tolist()):
                fh.write(
                    f"{g.node_ids[a]}\t{g.node_type_of[a]}\t{g.node_ids[b]}\t"
                    f"{g.node_type_of[b]}\t{g.edge_types[e]}\t{t}\n"
                )


@dataclass
class NodeFeatures:
    """Per-node model input.

    ``mode`` is ``"id"`` (a trainable lookup row of width ``dim``),
    ``"attribute"`` (fixed rows of ``attributes``) or ``"id+attribute"``
    (both, concatenated).
    """

    mode: str = "id"
    dim: int = 32
    attributes: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("id", "attribute", "id+attribute"):
            raise ContractError(f"unknown feature mode {self.mode!r}")
        if "attribute" in self.mode:
            if self.attributes is None:
                raise ContractError(f"feature mode {self.mode!r} needs an attribute matrix")
            self.attributes = np.asarray(self.attributes, dtype=np.float64)
            if self.attributes.ndim != 2:
                raise ContractError("attribute matrix must be 2-d")

    @property
    def input_dim(self) -> int:
        width = 0
        if "id" in self.mode:
            width += self.dim
        if self.attributes is not None and "attribute" in self.mode:
            width += self.attributes.shape[1]
        return width


def load_attributes(path, g: DynamicGraph) -> np.ndarray:
    """Read ``id v1 v2 ...`` lines into a registry-aligned matrix (missing rows are zero)."""
    rows: dict[int, list[float]] = {}
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                vals = [float(v) for v in parts[1:]]
            except ValueError:
                raise ParseError("non-numeric attribute", path, lineno) from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(f"expected {width} attributes, got {len(vals)}", path, lineno)
            if parts[0] in g.index_of:
                rows[g.index_of[parts[0]]] = vals
    if width is None:
        raise DataError(f"{path}: no attribute rows")
    out = np.zeros((g.num_nodes, width))
    for i, vals in rows.items():
        out[i] = vals
    return out


# ---------------------------------------------------------------------------
# structural operations


def split_by_edge_type(s: Snapshot) -> dict[str, Snapshot]:
    """One sub-network per edge type present in ``s``."""
    out = {}
    for c in np.unique(s.etype):
        keep = s.etype == c
        out[s.edge_types[c]] = Snapshot(
            s.num_nodes, s.src[keep], s.dst[keep], s.etype[keep], s.edge_types, s.directed
        )
    return out


def merge_snapshots(g: DynamicGraph, group_size: int) -> DynamicGraph:
    """Union consecutive groups of ``group_size`` snapshots."""
    if group_size < 1:
        raise ContractError("group_size must be >= 1")
    if group_size == 1:
        return g
    snaps, times = [], []
    for start in range(0, g.T, group_size):
        members = g.snapshots[start : start + group_size]
        snaps.append(
            Snapshot(
                g.num_nodes,
                np.concatenate([m.src for m in members]),
                np.concatenate([m.dst for m in members]),
                np.concatenate([m.etype for m in members]),
                g.edge_types,
                g.directed,
                nodes=np.concatenate([m.nodes for m in members]),
            )
        )
        times.append(start // group_size)
    return g.with_snapshots(snaps, times)


# ---------------------------------------------------------------------------
# sampling


@dataclass
class NeighborSample:
    """Sampled typed neighborhoods for the nodes of one sub-network.

    ``neighbors[i]`` lists the ``k`` samples for ``nodes[i]``, followed by
    ``nodes[i]`` itself when self-inclusion is on.
    """

    nodes: np.ndarray
    neighbors: np.ndarray


def sample_neighbors(node: int, edge_type, snapshot: Snapshot, k: int, rng: np.random.Generator) -> list[int]:
    """``k`` uniform draws with replacement from the typed neighbors of ``node``."""
    if k < 1:
        raise ContractError("k must be >= 1")
    nbrs = snapshot.neighbors(node, edge_type)
    if len(nbrs) == 0:
        return []
    return nbrs[rng.integers(0, len(nbrs), size=k)].tolist()


def sample_typed_neighbors(
    sub: Snapshot, edge_type, k: int, rng: np.random.Generator, include_self: bool = True
) -> NeighborSample:
    """Vectorised :func:`sample_neighbors` for every node with a typed neighbor."""
    if k < 1:
        raise ContractError("k must be >= 1")
    indptr, indices = sub.adjacency(edge_type)
    deg = np.diff(indptr)
    nodes = np.flatnonzero(deg)
    if len(nodes) == 0:
        width = k + int(include_self)
        return NeighborSample(nodes, np.zeros((0, width), dtype=np.int64))
    offs = rng.integers(0, deg[nodes][:, None], size=(len(nodes), k))
    nbrs = indices[indptr[nodes][:, None] + offs]
    if include_self:
        nbrs = np.concatenate([nbrs, nodes[:, None]], axis=1)
    return NeighborSample(nodes, nbrs)


def random_walks(
    snapshot: Snapshot, starts: np.ndarray, walk_len: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform random walks over all edge types; ``-1`` pads walks that hit a dead end."""
    if walk_len < 2:
        raise ContractError("walk_len must be >= 2")
    indptr, indices = snapshot.adjacency(None)
    deg = np.diff(indptr)
    starts = np.asarray(starts, dtype=np.int64)
    walks = np.full((len(starts), walk_len), -1, dtype=np.int64)
    walks[:, 0] = starts
    cur = starts.copy()
    alive = deg[cur] > 0
    for step in range(1, walk_len):
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            break
        c = cur[idx]
        nxt = indices[indptr[c] + rng.integers(0, deg[c])]
        walks[idx, step] = nxt
        cur[idx] = nxt
        alive[idx] = deg[nxt] > 0
    return walks


def walk_contexts(walks: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """(center, context) pairs: nodes within ``window`` steps of an occurrence of the walk's start node."""
    start = walks[:, 0]
    L = walks.shape[1]
    centers, contexts = [], []
    for p in range(L):
        occ = walks[:, p] == start
        if not occ.any():
            continue
        for o in range(1, window + 1):
            for q in (p - o, p + o):
                if q < 0 or q >= L:
                    continue
                other = walks[:, q]
                ok = occ & (other >= 0) & (other != start)
                centers.append(start[ok])
                contexts.append(other[ok])
    if not centers:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def walk_neighborhood(
    snapshot: Snapshot,
    node: int,
    walk_len: int,
    num_walks: int,
    window: int,
    rng: np.random.Generator,
) -> list[int]:
    """Context multiset of ``node`` from ``num_walks`` walks started there."""
    walks = random_walks(snapshot, np.full(num_walks, node, dtype=np.int64), walk_len, rng)
    return walk_contexts(walks, window)[1].tolist()


def walk_pairs(
    snapshot: Snapshot,
    walk_len: int,
    num_walks: int,
    window: int,
    rng: np.random.Generator,
    nodes: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Positive (u, v) training pairs for every non-isolated node of ``snapshot``."""
    if nodes is None:
        nodes = np.flatnonzero(snapshot.degree())
    starts = np.repeat(np.asarray(nodes, dtype=np.int64), num_walks)
    return walk_contexts(random_walks(snapshot, starts, walk_len, rng), window)


class NegativeSampler:
    """Categorical sampler over nodes with probability proportional to degree**0.75."""

    def __init__(self, nodes: np.ndarray, probs: np.ndarray):
        self.nodes = nodes
        self.probs = probs
        self._cdf = np.cumsum(probs)
        self._cdf[-1] = 1.0

    def probability(self, node: int) -> float:
        hit = np.flatnonzero(self.nodes == node)
        return float(self.probs[hit[0]]) if len(hit) else 0.0

    def sample(self, size, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(size)
        return self.nodes[np.searchsorted(self._cdf, u, side="right")]


def negative_distribution(snapshot: Snapshot, power: float = NEG_POWER) -> NegativeSampler:
    deg = snapshot.degree().astype(np.float64)
    nodes = np.flatnonzero(deg)
    if len(nodes) == 0:
        raise ContractError("negative sampling needs a snapshot with edges")
    w = deg[nodes] ** power
    return NegativeSampler(nodes, w / w.sum())
