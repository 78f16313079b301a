"""Dynamic link-prediction protocol and metrics.

Positives come from the held-out snapshot: 20% go to validation, and the
remaining 80% are split 25/75 into classifier-train and classifier-test.
Each positive set gets an equal number of node pairs with no edge in that
snapshot, drawn among the nodes active in it.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, SplitError
from .graph import Snapshot
from .tensor import _sigmoid

MIN_EVAL_EDGES = 10


@dataclass
class EvalSplit:
    val_pos: np.ndarray
    val_neg: np.ndarray
    train_pos: np.ndarray
    train_neg: np.ndarray
    test_pos: np.ndarray
    test_neg: np.ndarray

    def sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in vars(self).items()}


def positive_pairs(snapshot: Snapshot) -> np.ndarray:
    """Distinct node pairs joined by an edge, any type; self-loops dropped."""
    a, b = snapshot.src, snapshot.dst
    keep = a != b
    a, b = a[keep], b[keep]
    if not snapshot.directed:
        a, b = np.minimum(a, b), np.maximum(a, b)
    if len(a) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.stack([a, b], axis=1), axis=0)


def _sample_negatives(
    nodes: np.ndarray, forbidden: set, count: int, rng: np.random.Generator, directed: bool
) -> np.ndarray:
    n = len(nodes)
    possible = n * (n - 1) if directed else n * (n - 1) // 2
    taken = len(forbidden) if directed else len(forbidden) // 2
    if possible - taken < count:
        raise SplitError(f"only {possible - taken} non-edges available, {count} needed")
    chosen: list[tuple[int, int]] = []
    seen = set(forbidden)
    while len(chosen) < count:
        need = count - len(chosen)
        draw = rng.integers(0, n, size=(2 * need + 8, 2))
        for i, j in draw.tolist():
            if i == j:
                continue
            u, v = int(nodes[i]), int(nodes[j])
            if not directed and u > v:
                u, v = v, u
            if (u, v) in seen:
                continue
            seen.add((u, v))
            if not directed:
                seen.add((v, u))
            chosen.append((u, v))
            if len(chosen) == count:
                break
    return np.array(chosen, dtype=np.int64).reshape(-1, 2)


def make_split(
    snapshot: Snapshot, rng: np.random.Generator, val_pos: np.ndarray | None = None
) -> EvalSplit:
    """Partition the edges of the evaluation snapshot.

    Sizes use floor division: validation = n // 5, classifier-train =
    (n - validation) // 4, test = the rest.  Passing ``val_pos`` reuses a
    validation set and partitions only the remaining edges.
    """
    pairs = positive_pairs(snapshot)
    n = len(pairs)
    if n < MIN_EVAL_EDGES:
        raise SplitError(f"evaluation snapshot has {n} distinct edges, need >= {MIN_EVAL_EDGES}")
    if val_pos is None:
        perm = rng.permutation(n)
        n_val = n // 5
        val_pos = pairs[perm[:n_val]]
        rest = pairs[perm[n_val:]]
    else:
        vset = {tuple(p) for p in np.asarray(val_pos).tolist()}
        rest = np.array([p for p in pairs.tolist() if tuple(p) not in vset], dtype=np.int64)
        rest = rest[rng.permutation(len(rest))]
    n_train = len(rest) // 4
    train_pos, test_pos = rest[:n_train], rest[n_train:]
    forbidden = snapshot.edge_set()
    neg = _sample_negatives(
        snapshot.nodes, forbidden, len(val_pos) + len(rest), rng, snapshot.directed
    )
    a, b = len(val_pos), len(val_pos) + n_train
    return EvalSplit(val_pos, neg[:a], train_pos, neg[a:b], test_pos, neg[b:])


def make_splits(snapshot: Snapshot, seed: int, n_repeats: int = 5) -> list[EvalSplit]:
    """``n_repeats`` splits sharing one validation set; train/test and negatives vary."""
    first = make_split(snapshot, np.random.default_rng([seed, 0]))
    out = [first]
    for r in range(1, n_repeats):
        out.append(make_split(snapshot, np.random.default_rng([seed, r]), val_pos=first.val_pos))
    for s in out[1:]:
        s.val_neg = first.val_neg
    return out


# ---------------------------------------------------------------------------
# features and classifier


def link_feature(z_u: np.ndarray, z_v: np.ndarray, mode: str = "hadamard") -> np.ndarray:
    z_u, z_v = np.asarray(z_u, dtype=np.float64), np.asarray(z_v, dtype=np.float64)
    if z_u.shape != z_v.shape:
        raise ContractError(f"embedding shapes differ: {z_u.shape} vs {z_v.shape}")
    if mode == "hadamard":
        return z_u * z_v
    if mode == "dot":
        return (z_u * z_v).sum(axis=-1, keepdims=True)
    raise ContractError(f"unknown link feature mode {mode!r}")


def pair_features(emb: np.ndarray, pairs: np.ndarray, mode: str = "hadamard") -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return link_feature(emb[pairs[:, 0]], emb[pairs[:, 1]], mode)


@dataclass
class LogRegModel:
    w: np.ndarray
    b: float


def bce(p: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def logreg_fit(X, y, epochs: int = 1000, lr: float = 0.5) -> LogRegModel:
    """Full-batch gradient descent on mean binary cross-entropy, from zeros."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if len(np.unique(y)) < 2:
        raise ContractError("logistic regression needs both labels present")
    w = np.zeros(X.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        err = _sigmoid(X @ w + b) - y
        w -= lr * (X.T @ err) / n
        b -= lr * err.sum() / n
    return LogRegModel(w, float(b))


def logreg_score(model: LogRegModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return _sigmoid(X @ model.w + model.b)


# ---------------------------------------------------------------------------
# metrics


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if len(scores) != len(labels):
        raise ContractError("scores and labels differ in length")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise ContractError("metric needs both positive and negative labels")
    return scores, labels, n_pos, len(labels) - n_pos


def auroc(scores, labels) -> float:
    """Mann-Whitney statistic with midranks for ties."""
    scores, labels, n_pos, n_neg = _check_binary(scores, labels)
    ranks = rankdata(scores, method="average")
    twice = int(round(2.0 * ranks[labels].sum()))  # midranks are multiples of 1/2
    return (twice - n_pos * (n_pos + 1)) / (2 * n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Step-wise area under precision-recall, one step per distinct score."""
    scores, labels, n_pos, _ = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    total = 0.0
    prev_tp = 0
    for t, f in zip(tp.tolist(), fp.tolist()):
        total += ((t - prev_tp) / n_pos) * (t / (t + f))
        prev_tp = t
    return total


# ---------------------------------------------------------------------------
# protocol


def _dataset(emb, pos, neg, mode):
    X = np.concatenate([pair_features(emb, pos, mode), pair_features(emb, neg, mode)])
    y = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
    return X, y


def _standardizer(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd < 1e-12] = 1.0
    return mu, sd


def evaluate_split(emb: np.ndarray, split: EvalSplit, feature: str = "hadamard") -> dict[str, float]:
    Xtr, ytr = _dataset(emb, split.train_pos, split.train_neg, feature)
    Xte, yte = _dataset(emb, split.test_pos, split.test_neg, feature)
    mu, sd = _standardizer(Xtr)
    model = logreg_fit((Xtr - mu) / sd, ytr)
    scores = logreg_score(model, (Xte - mu) / sd)
    return {"auroc": auroc(scores, yte), "auprc": auprc(scores, yte)}


def evaluate(embeddings: np.ndarray, splits, feature: str = "hadamard", workers: int = 1) -> dict:
    """Fit and score the classifier on every split; mean and std per metric.

    Repetitions are independent, so with ``workers > 1`` they run on a
    thread pool; results are collected in split order either way.
    """
    if isinstance(splits, EvalSplit):
        splits = [splits]
    if workers > 1 and len(splits) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(splits))) as pool:
            runs = list(pool.map(lambda s: evaluate_split(embeddings, s, feature), splits))
    else:
        runs = [evaluate_split(embeddings, s, feature) for s in splits]
    out = {"n_repeats": len(runs), "runs": runs}
    for m in ("auroc", "auprc"):
        vals = np.array([r[m] for r in runs])
        out[m] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


def validation_auroc(embeddings: np.ndarray, split: EvalSplit, feature: str = "hadamard") -> float:
    """Model-selection score: classifier fit on the train pairs, scored on the validation pairs.

    Test pairs are never touched.
    """
    Xtr, ytr = _dataset(embeddings, split.train_pos, split.train_neg, feature)
    Xva, yva = _dataset(embeddings, split.val_pos, split.val_neg, feature)
    mu, sd = _standardizer(Xtr)
    model = logreg_fit((Xtr - mu) / sd, ytr)
    return auroc(logreg_score(model, (Xva - mu) / sd), yva)


def fmt_mean_std(mean: float, std: float) -> str:
    return f"{mean:.3f}({std:.3f})"


def report_records(result: dict, config_hash: str) -> list[dict]:
    return [
        {
            "metric": m,
            "mean": result[m]["mean"],
            "std": result[m]["std"],
            "n_repeats": result["n_repeats"],
            "config_hash": config_hash,
        }
        for m in ("auroc", "auprc")
    ]


def report_json(result: dict, config_hash: str) -> str:
    return json.dumps({"results": report_records(result, config_hash)}, indent=2, sort_keys=True) + "\n"


def format_table(rows: list[tuple[str, dict]]) -> str:
    """Aligned text table of ``(label, evaluate-result)`` rows."""
    header = ("variant", "AUROC", "AUPRC")
    body = [
        (label, fmt_mean_std(r["auroc"]["mean"], r["auroc"]["std"]), fmt_mean_std(r["auprc"]["mean"], r["auprc"]["std"]))
        for label, r in rows
    ]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(3)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [header, *body]]
    return "\n".join(lines) + "\n"


def pooled_std(stds) -> float:
    stds = np.asarray(stds, dtype=np.float64)
    return float(math.sqrt(np.mean(stds**2)))
