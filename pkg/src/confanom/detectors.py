"""Built-in anomaly scorers and the pluggable scorer contract.

Two detectors are implemented from scratch: an isolation forest and a
k-nearest-neighbor distance score. Both expose a fixed scoring function after
fitting (scoring the same point twice returns bit-identical values) and both
fit permutation-invariantly: reordering the training rows yields a scorer
with identical outputs everywhere. Score polarity is normalized at this
boundary so that downstream modules always see "larger = more anomalous".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import (
    AmbiguousPolarity,
    DataMatrix,
    DimensionMismatch,
    EmptyTrainingSet,
    InvalidHyperparameter,
    KTooLarge,
    ScoreVector,
    _readonly,
    check_seed,
    make_rng,
    split_seed,
)

SCORER_KINDS = ("isolation_forest", "knn_distance", "external")
POLARITIES = ("higher_is_anomalous", "lower_is_anomalous", "auto")

# row chunk for brute-force distance computations, bounds peak memory
_KNN_CHUNK = 512


@dataclass(frozen=True)
class ScorerSpec:
    """Configuration of an anomaly scorer.

    Parameters
    ----------
    kind : {'isolation_forest', 'knn_distance', 'external'}
    n_trees, subsample_size, max_depth
        Isolation forest settings. Depth defaults to ceil(log2(subsample)).
    k, aggregation
        knn settings; ``aggregation`` is 'kth' (k-th nearest distance) or
        'mean' (mean of the k nearest distances).
    polarity : {'higher_is_anomalous', 'lower_is_anomalous', 'auto'}
        'auto' resolves from the kind for built-ins and is an error for
        external scorers.
    """

    kind: str
    n_trees: int = 100
    subsample_size: int = 256
    max_depth: int | None = None
    k: int = 5
    aggregation: str = "kth"
    polarity: str = "auto"

    def __post_init__(self):
        if self.kind not in SCORER_KINDS:
            raise InvalidHyperparameter(f"unknown scorer kind {self.kind!r}")
        if self.polarity not in POLARITIES:
            raise InvalidHyperparameter(f"unknown polarity {self.polarity!r}")
        if self.kind == "isolation_forest":
            if int(self.n_trees) < 1:
                raise InvalidHyperparameter("n_trees must be at least 1")
            if int(self.subsample_size) < 2:
                raise InvalidHyperparameter("subsample_size must be at least 2")
            if self.max_depth is not None and int(self.max_depth) < 1:
                raise InvalidHyperparameter("max_depth must be at least 1")
        elif self.kind == "knn_distance":
            if int(self.k) < 1:
                raise InvalidHyperparameter("k must be at least 1")
            if self.aggregation not in ("kth", "mean"):
                raise InvalidHyperparameter(
                    f"unknown knn aggregation {self.aggregation!r}")


def _harmonic(m):
    # exact partial sum; m stays small (at most the subsample size)
    return float(np.sum(1.0 / np.arange(1, m + 1)))


def average_path_length(m):
    """c(m) of the isolation-forest score: expected path length of an
    unsuccessful BST search in a subtree of m points."""
    m = int(m)
    if m <= 1:
        return 0.0
    return 2.0 * _harmonic(m - 1) - 2.0 * (m - 1) / m


class _IsolationTree:
    """Flat-array binary tree. feature < 0 marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "size")

    def __init__(self, rows, rng, depth_cap):
        feature, threshold, left, right, size = [], [], [], [], []
        # (node_index, row_subset, depth), explicit stack so user-set depth
        # caps cannot hit the interpreter recursion limit
        stack = [(0, rows, 0)]
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(len(rows))
        while stack:
            node, sub, depth = stack.pop()
            if depth >= depth_cap or len(sub) <= 1:
                continue
            lo = sub.min(axis=0)
            hi = sub.max(axis=0)
            cand = np.nonzero(hi > lo)[0]
            if len(cand) == 0:
                continue
            q = int(cand[rng.integers(len(cand))])
            t = float(rng.uniform(lo[q], hi[q]))
            mask = sub[:, q] < t
            li = len(feature)
            ri = li + 1
            for child_rows in (sub[mask], sub[~mask]):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                size.append(len(child_rows))
            feature[node] = q
            threshold[node] = t
            left[node] = li
            right[node] = ri
            stack.append((li, sub[mask], depth + 1))
            stack.append((ri, sub[~mask], depth + 1))
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.size = np.asarray(size, dtype=np.int32)

    @classmethod
    def _from_arrays(cls, feature, threshold, left, right, size):
        tree = object.__new__(cls)
        tree.feature = np.asarray(feature, dtype=np.int32)
        tree.threshold = np.asarray(threshold, dtype=np.float64)
        tree.left = np.asarray(left, dtype=np.int32)
        tree.right = np.asarray(right, dtype=np.int32)
        tree.size = np.asarray(size, dtype=np.int32)
        return tree

    def path_lengths(self, X, c_table):
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        depth = np.zeros(n, dtype=np.float64)
        active = np.nonzero(self.feature[node] >= 0)[0]
        while active.size:
            cur = node[active]
            f = self.feature[cur]
            go_left = X[active, f] < self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            depth[active] += 1.0
            active = active[self.feature[node[active]] >= 0]
        # unbuilt-subtree adjustment at the leaf
        return depth + c_table[self.size[node]]


class IsolationForestScorer:
    """Isolation forest fitted on content-sorted, seeded subsamples.

    The anomaly score of a point is 2**(-E[h(x)] / c(psi)) with h the path
    length, psi the subsample size, and c the average-path-length constant,
    so scores lie in (0, 1].
    """

    kind = "isolation_forest"

    def __init__(self, spec, trees, psi, n_features, training_size):
        self.spec = spec
        self.trees = tuple(trees)
        self.psi = int(psi)
        self.n_features = int(n_features)
        self.training_size = int(training_size)
        self._c_psi = average_path_length(psi)
        self._c_table = np.array([average_path_length(m) for m in range(psi + 1)])

    def score_raw(self, X):
        paths = np.zeros(X.shape[0], dtype=np.float64)
        for tree in self.trees:
            paths += tree.path_lengths(X, self._c_table)
        mean_path = paths / len(self.trees)
        return np.power(2.0, -mean_path / self._c_psi)


class KnnScorer:
    """Distance to the k-th nearest training point (or mean over the k
    nearest). Query points are never removed from the reference set."""

    kind = "knn_distance"

    def __init__(self, spec, refs):
        self.spec = spec
        self.refs = _readonly(np.asarray(refs, dtype=np.float64))
        self.k = int(spec.k)
        self.aggregation = spec.aggregation
        self.n_features = self.refs.shape[1]
        self.training_size = self.refs.shape[0]

    def score_raw(self, X):
        out = np.empty(X.shape[0], dtype=np.float64)
        for start in range(0, X.shape[0], _KNN_CHUNK):
            chunk = X[start:start + _KNN_CHUNK]
            d = cdist(chunk, self.refs)
            part = np.partition(d, self.k - 1, axis=1)
            if self.aggregation == "kth":
                out[start:start + _KNN_CHUNK] = part[:, self.k - 1]
            else:
                # sort the k smallest before summing so the result does not
                # depend on partition's internal order under ties
                out[start:start + _KNN_CHUNK] = np.sort(part[:, :self.k], axis=1).mean(axis=1)
        return out


class ExternalScorer:
    """Pre-fitted opaque scoring callable wrapped for detached calibration."""

    kind = "external"

    def __init__(self, score_function, polarity):
        self.spec = ScorerSpec(kind="external", polarity=polarity)
        self.score_function = score_function
        self.polarity = polarity
        self.n_features = None
        self.training_size = 0

    def score_raw(self, X):
        raw = np.asarray(self.score_function(X), dtype=np.float64)
        raw = raw.reshape(-1)
        if raw.shape[0] != X.shape[0]:
            raise DimensionMismatch(
                f"external scorer returned {raw.shape[0]} scores for {X.shape[0]} rows")
        if self.polarity == "lower_is_anomalous":
            raw = -raw
        return raw


def fit(spec, train, seed):
    """Fit a scorer on training data.

    Parameters
    ----------
    spec : ScorerSpec
    train : DataMatrix
        At least 2 rows; for knn, more than ``spec.k`` rows.
    seed : int
        Isolation-forest trees draw their subsamples from child streams of
        this seed, keyed by tree index, over rows sorted lexicographically by
        content, which makes fitting independent of the input row order.

    Returns
    -------
    IsolationForestScorer or KnnScorer
    """
    if not isinstance(train, DataMatrix):
        raise InvalidHyperparameter("train must be a DataMatrix")
    seed = check_seed(seed)
    n = train.n_rows
    if n < 2:
        raise EmptyTrainingSet("training requires at least 2 rows")
    if spec.kind == "knn_distance":
        if spec.k >= n:
            raise KTooLarge(f"k={spec.k} needs more than {n} training rows")
        return KnnScorer(spec, train.values)
    if spec.kind == "isolation_forest":
        values = train.values
        order = np.lexsort(values.T[::-1])
        sorted_rows = values[order]
        psi = min(int(spec.subsample_size), n)
        depth_cap = int(spec.max_depth) if spec.max_depth is not None else math.ceil(math.log2(psi))
        trees = []
        for t in range(int(spec.n_trees)):
            rng = make_rng(split_seed(seed, t))
            idx = rng.choice(n, size=psi, replace=False)
            trees.append(_IsolationTree(sorted_rows[idx], rng, depth_cap))
        return IsolationForestScorer(spec, trees, psi, train.n_cols, n)
    raise InvalidHyperparameter(
        "external scorers are wrapped with wrap_detached, not fitted")


def score(scorer, X):
    """Score a batch. Returns a polarity-normalized ScoreVector."""
    if not isinstance(X, DataMatrix):
        raise InvalidHyperparameter("X must be a DataMatrix")
    if scorer.n_features is not None and X.n_cols != scorer.n_features:
        raise DimensionMismatch(
            f"scorer expects {scorer.n_features} features, got {X.n_cols}")
    return ScoreVector(scorer.score_raw(X.values), polarity_normalized=True)


def normalize_polarity(raw, polarity, kind=None):
    """Normalize raw scores to the higher-is-anomalous convention.

    ``auto`` resolves from the scorer kind for built-in detectors; external
    or unknown kinds must state their polarity explicitly.
    """
    if polarity not in POLARITIES:
        raise InvalidHyperparameter(f"unknown polarity {polarity!r}")
    if polarity == "auto":
        if kind in ("isolation_forest", "knn_distance"):
            polarity = "higher_is_anomalous"
        else:
            raise AmbiguousPolarity(
                "polarity cannot be inferred for external scorers; state it explicitly")
    raw = np.asarray(raw, dtype=np.float64)
    if polarity == "lower_is_anomalous":
        raw = -raw
    return ScoreVector(raw, polarity_normalized=True)


def wrap_detached(score_function, polarity):
    """Wrap a pre-fitted scoring callable for detached calibration.

    The callable receives a (n, d) float array and must return n scores.
    Only the split (detached) calibration path accepts the result.
    """
    if polarity not in ("higher_is_anomalous", "lower_is_anomalous"):
        raise AmbiguousPolarity(
            "detached scorers must declare higher_is_anomalous or lower_is_anomalous")
    if not callable(score_function):
        raise InvalidHyperparameter("score_function must be callable")
    return ExternalScorer(score_function, polarity)
