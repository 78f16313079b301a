import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from dyhatr.errors import ContractError, SplitError
from dyhatr.evaluation import (
    auprc,
    auroc,
    evaluate,
    fmt_mean_std,
    format_table,
    link_feature,
    logreg_fit,
    logreg_score,
    make_split,
    make_splits,
    pair_features,
    pooled_std,
    positive_pairs,
    report_json,
    validation_auroc,
)
from dyhatr.graph import Snapshot


def auroc_oracle(scores, labels):
    """Count every (positive, negative) pair; a tie is worth one half."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    twice = 0
    for p in pos:
        for q in neg:
            twice += 2 if p > q else (1 if p == q else 0)
    return twice / (2 * len(pos) * len(neg))


def auprc_oracle(scores, labels):
    """Walk the distinct thresholds from high to low, recounting TP/FP from scratch each time."""
    n_pos = sum(1 for y in labels if y)
    total, prev_tp = 0.0, 0
    for thr in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= thr and y)
        fp = sum(1 for s, y in zip(scores, labels) if s >= thr and not y)
        total += ((tp - prev_tp) / n_pos) * (tp / (tp + fp))
        prev_tp = tp
    return total


def random_scores(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 201))
    labels = rng.random(n) < rng.uniform(0.1, 0.9)
    labels[0], labels[1] = True, False
    # coarse rounding on some seeds to force ties
    scores = rng.normal(size=n)
    if seed % 2:
        scores = np.round(scores, 1)
    return scores, labels


class TestMetrics:
    @pytest.mark.parametrize("seed", range(0, 100, 9))
    def test_exact_against_oracles(self, seed):
        scores, labels = random_scores(seed)
        assert auroc(scores, labels) == auroc_oracle(scores.tolist(), labels.tolist())
        assert auprc(scores, labels) == auprc_oracle(scores.tolist(), labels.tolist())

    def test_known_values(self):
        assert auroc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
        assert auroc([0.1, 0.2], [1, 0]) == 0.0
        assert auroc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5
        assert auprc([0.5] * 4, [1, 0, 1, 0]) == 0.5
        # ranking P N P: precision 1 at recall 1/2, 2/3 at recall 1
        assert auprc([3, 2, 1], [1, 0, 1]) == pytest.approx(0.5 + 0.5 * 2 / 3, abs=1e-15)

    def test_auroc_rational_form(self):
        scores, labels = random_scores(3)
        pos, neg = int(labels.sum()), int((~labels).sum())
        frac = Fraction(auroc(scores, labels)).limit_denominator(2 * pos * neg)
        assert frac.denominator <= 2 * pos * neg

    def test_needs_both_classes(self):
        with pytest.raises(ContractError):
            auroc([0.1, 0.2], [1, 1])
        with pytest.raises(ContractError):
            auprc([0.1, 0.2], [0, 0])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_transform_invariance(self, seed):
        scores, labels = random_scores(seed)
        squashed = 1.0 / (1.0 + np.exp(-3 * scores))
        assert auroc(squashed, labels) == auroc(scores, labels)


def snapshot_with_edges(n_edges, n_nodes=200, seed=0, dup=0):
    rng = np.random.default_rng(seed)
    pairs = set()
    while len(pairs) < n_edges:
        a, b = rng.integers(0, n_nodes, 2)
        if a != b:
            pairs.add((min(a, b), max(a, b)))
    pairs = sorted(pairs)
    src = [int(p[0]) for p in pairs] + [int(p[1]) for p in pairs[:dup]]
    dst = [int(p[1]) for p in pairs] + [int(p[0]) for p in pairs[:dup]]
    return Snapshot(n_nodes, src, dst, [0] * len(src), ("e",))


class TestSplit:
    @pytest.mark.parametrize("n, sizes", [(1000, (200, 200, 600)), (100, (20, 20, 60)), (37, (7, 7, 23))])
    def test_counts(self, n, sizes):
        s = snapshot_with_edges(n)
        sp = make_split(s, np.random.default_rng(0))
        assert (len(sp.val_pos), len(sp.train_pos), len(sp.test_pos)) == sizes
        assert (len(sp.val_neg), len(sp.train_neg), len(sp.test_neg)) == sizes

    def test_partition_and_negatives(self):
        s = snapshot_with_edges(300, n_nodes=80, seed=1)
        sp = make_split(s, np.random.default_rng(1))
        pos = [tuple(p) for part in (sp.val_pos, sp.train_pos, sp.test_pos) for p in part.tolist()]
        assert sorted(pos) == sorted(tuple(p) for p in positive_pairs(s).tolist())
        neg = [tuple(p) for part in (sp.val_neg, sp.train_neg, sp.test_neg) for p in part.tolist()]
        assert len(set(neg)) == len(neg)
        edges = s.edge_set()
        active = set(s.nodes.tolist())
        for a, b in neg:
            assert a != b and (a, b) not in edges and (b, a) not in edges
            assert a in active and b in active

    def test_duplicates_and_self_loops_ignored(self):
        s = snapshot_with_edges(50, dup=10)
        assert len(positive_pairs(s)) == 50
        loop = Snapshot(3, [0, 1, 1], [1, 1, 2], [0, 0, 0], ("e",))
        assert positive_pairs(loop).tolist() == [[0, 1], [1, 2]]

    def test_too_few_edges(self):
        with pytest.raises(SplitError):
            make_split(snapshot_with_edges(5), np.random.default_rng(0))

    def test_not_enough_non_edges(self):
        # complete graph on 6 nodes: 15 edges, no non-edges at all
        src, dst = np.triu_indices(6, 1)
        s = Snapshot(6, src, dst, [0] * 15, ("e",))
        with pytest.raises(SplitError):
            make_split(s, np.random.default_rng(0))

    def test_repeats_share_validation(self):
        s = snapshot_with_edges(200, n_nodes=60)
        splits = make_splits(s, seed=4, n_repeats=3)
        for sp in splits[1:]:
            np.testing.assert_array_equal(sp.val_pos, splits[0].val_pos)
            np.testing.assert_array_equal(sp.val_neg, splits[0].val_neg)
            assert not np.array_equal(sp.test_pos, splits[0].test_pos)
            assert len(sp.test_pos) == len(splits[0].test_pos)
        again = make_splits(s, seed=4, n_repeats=3)
        for a, b in zip(splits, again):
            np.testing.assert_array_equal(a.test_neg, b.test_neg)


def logreg_oracle(X, y, epochs, lr):
    """Loop transcription of batch gradient descent on mean cross-entropy."""
    n, d = X.shape
    w = [0.0] * d
    b = 0.0
    for _ in range(epochs):
        gw = [0.0] * d
        gb = 0.0
        for i in range(n):
            z = b + sum(w[j] * X[i, j] for j in range(d))
            p = 1 / (1 + np.exp(-z))
            for j in range(d):
                gw[j] += (p - y[i]) * X[i, j]
            gb += p - y[i]
        w = [w[j] - lr * gw[j] / n for j in range(d)]
        b -= lr * gb / n
    return np.array(w), b


class TestClassifier:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(30, 3))
        y = (X[:, 0] + 0.5 * rng.normal(size=30) > 0).astype(float)
        m = logreg_fit(X, y, epochs=40, lr=0.5)
        w, b = logreg_oracle(X, y, 40, 0.5)
        np.testing.assert_allclose(m.w, w, atol=1e-10)
        assert abs(m.b - b) < 1e-10

    def test_converges_to_optimum(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(200, 2))
        y = (X @ [1.0, -2.0] + rng.normal(size=200) > 0).astype(float)

        def nll(theta):
            z = X @ theta[:2] + theta[2]
            return np.mean(np.logaddexp(0, z) - y * z)

        opt = minimize(nll, np.zeros(3), method="BFGS", options={"gtol": 1e-10})
        m = logreg_fit(X, y, epochs=20000, lr=0.5)
        np.testing.assert_allclose(np.r_[m.w, m.b], opt.x, atol=1e-4)

    def test_scores_are_probabilities(self):
        m = logreg_fit(np.array([[0.0], [1.0], [2.0], [3.0]]), np.array([0, 0, 1, 1]))
        p = logreg_score(m, np.array([[-5.0], [10.0]]))
        assert 0.0 <= p[0] < 0.5 < p[1] <= 1.0

    def test_single_class_rejected(self):
        with pytest.raises(ContractError):
            logreg_fit(np.ones((3, 1)), np.ones(3))


class TestFeatures:
    def test_hadamard_and_dot(self):
        u, v = np.array([1.0, 2.0, 3.0]), np.array([2.0, 0.5, -1.0])
        np.testing.assert_array_equal(link_feature(u, v), [2.0, 1.0, -3.0])
        np.testing.assert_array_equal(link_feature(u, v, "dot"), [0.0])
        with pytest.raises(ContractError):
            link_feature(u, v, "l1")
        with pytest.raises(ContractError):
            link_feature(u, v[:2])

    def test_pair_features(self):
        emb = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(pair_features(emb, [[0, 2]], "dot"), [[0 * 4 + 1 * 5]])


class TestProtocol:
    def setup_method(self):
        self.s = snapshot_with_edges(300, n_nodes=100, seed=2)
        rng = np.random.default_rng(0)
        # planted embeddings: an edge's endpoints share a direction
        self.good = rng.normal(size=(100, 8))
        for a, b in positive_pairs(self.s).tolist():
            self.good[b] += 0.5 * self.good[a]
        self.noise = np.random.default_rng(5).normal(size=(100, 8))

    def test_signal_beats_noise(self):
        splits = make_splits(self.s, 0, 3)
        good = evaluate(self.good, splits)
        noise = evaluate(self.noise, splits)
        assert good["auroc"]["mean"] > noise["auroc"]["mean"]
        assert abs(noise["auroc"]["mean"] - 0.5) < 0.1
        assert good["n_repeats"] == 3

    def test_thread_pool_matches_serial(self):
        splits = make_splits(self.s, 1, 4)
        assert evaluate(self.good, splits, workers=3) == evaluate(self.good, splits)

    def test_validation_score_in_range(self):
        sp = make_split(self.s, np.random.default_rng(0))
        assert 0.0 <= validation_auroc(self.good, sp) <= 1.0

    def test_reporting(self):
        res = evaluate(self.noise, make_splits(self.s, 0, 2))
        doc = json.loads(report_json(res, "abc"))
        assert [r["metric"] for r in doc["results"]] == ["auroc", "auprc"]
        assert set(doc["results"][0]) == {"metric", "mean", "std", "n_repeats", "config_hash"}
        table = format_table([("HAT-C", res), ("HAT-TGRU", res)])
        lines = table.splitlines()
        assert lines[0].split() == ["variant", "AUROC", "AUPRC"]
        assert len({line.index("0.") for line in lines[1:]}) == 1
        assert fmt_mean_std(0.6961, 0.0049) == "0.696(0.005)"
        assert pooled_std([0.3, 0.4]) == pytest.approx(np.sqrt(0.125))
