"""Small fixtures shared by the training and acceptance tests."""

import numpy as np

from dyhatr.graph import from_edge_rows, sample_typed_neighbors, split_by_edge_type


def toy_graph():
    """8 nodes (4 users, 4 items), edge types click/buy, T=3."""
    edges = [
        ("u0", "i0", "click", 0), ("u1", "i1", "click", 0), ("u2", "i0", "buy", 0), ("u3", "i2", "click", 0),
        ("u0", "i1", "buy", 1), ("u1", "i1", "click", 1), ("u2", "i3", "click", 1), ("u3", "i2", "buy", 1),
        ("u0", "i0", "click", 2), ("u1", "i2", "buy", 2), ("u2", "i3", "click", 2), ("u3", "i1", "click", 2),
        ("u0", "i3", "buy", 2),
    ]
    rows = [(n + 1, u, "user", i, "item", e, t) for n, (u, i, e, t) in enumerate(edges)]
    return from_edge_rows(rows)


def fixed_samples(graph, k, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for snap in graph.snapshots:
        subs = split_by_edge_type(snap)
        out.append({r: sample_typed_neighbors(sub, r, k, rng) for r, sub in subs.items()})
    return out


TOY_CONFIG = dict(
    feature_dim=4, embed_dim=4, heads=2, edge_att_dim=3, out_dim=4, temporal_heads=2,
    k=3, num_walks=2, walk_len=4, window=2, negatives=3, l2=1e-3, epochs=2, batch_size=16,
)
