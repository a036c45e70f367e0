"""Conformalization strategies: split, cross-validation, jackknife, and
jackknife-after-bootstrap calibration.

Every strategy produces a :class:`CalibrationModel`: calibration-score
entries, each bound to the model (or out-of-bag model set) that produced it,
under the out-of-sample discipline that no entry was scored by a model whose
training multiset contains that entry's row. The number of entries fixes the
p-value floor 1/(n_entries + 1) downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CalibrationTooLarge,
    DataMatrix,
    DimensionMismatch,
    EmptyCalibration,
    InvalidHyperparameter,
    KOutOfRange,
    NoOutOfBagRows,
    _readonly,
    check_seed,
    make_rng,
    split_seed,
)
from . import detectors

STRATEGY_KINDS = ("split", "cross_validation", "jackknife", "jackknife_bootstrap")
MODES = ("plus", "single_model")
AGGREGATIONS = ("median", "mean")


@dataclass(frozen=True)
class StrategySpec:
    """Configuration of a conformalization strategy.

    ``n_calib`` (split only) is an absolute count or a fraction in (0, 1) of
    the rows. ``mode`` applies to the resampling kinds: 'plus' keeps every
    fold/bootstrap model for paired test scoring, 'single_model' refits one
    scorer on all rows and keeps only that. ``aggregation`` is how plus-mode
    entries and test scores are pooled across out-of-bag models.
    """

    kind: str
    n_calib: int | float | None = None
    k: int | None = None
    n_bootstraps: int | None = None
    mode: str | None = None
    aggregation: str = "median"

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise InvalidHyperparameter(f"unknown strategy kind {self.kind!r}")
        if self.aggregation not in AGGREGATIONS:
            raise InvalidHyperparameter(f"unknown aggregation {self.aggregation!r}")
        if self.kind == "split":
            if self.n_calib is None:
                raise InvalidHyperparameter("split requires n_calib")
            self._check_n_calib()
            if self.k is not None or self.n_bootstraps is not None or self.mode is not None:
                raise InvalidHyperparameter("split takes only n_calib")
            return
        if self.n_calib is not None:
            raise InvalidHyperparameter(f"{self.kind} does not take n_calib")
        if self.mode not in MODES:
            raise InvalidHyperparameter(
                f"{self.kind} requires mode 'plus' or 'single_model'")
        if self.kind == "cross_validation":
            if self.k is None or int(self.k) < 2:
                raise InvalidHyperparameter("cross_validation requires k >= 2")
        elif self.k is not None:
            raise InvalidHyperparameter(f"{self.kind} does not take k")
        if self.kind == "jackknife_bootstrap":
            if self.n_bootstraps is None or int(self.n_bootstraps) < 1:
                raise InvalidHyperparameter(
                    "jackknife_bootstrap requires n_bootstraps >= 1")
        elif self.n_bootstraps is not None:
            raise InvalidHyperparameter(f"{self.kind} does not take n_bootstraps")

    def _check_n_calib(self):
        v = self.n_calib
        if isinstance(v, bool):
            raise InvalidHyperparameter("n_calib must be a count or fraction")
        if isinstance(v, (int, np.integer)):
            if v < 1:
                raise InvalidHyperparameter("n_calib count must be positive")
        elif isinstance(v, float):
            if not 0.0 < v < 1.0:
                raise InvalidHyperparameter("n_calib fraction must be inside (0, 1)")
        else:
            raise InvalidHyperparameter("n_calib must be a count or fraction")


def split(n_calib):
    return StrategySpec(kind="split", n_calib=n_calib)


def cross_validation(k, mode="plus", aggregation="median"):
    return StrategySpec(kind="cross_validation", k=k, mode=mode, aggregation=aggregation)


def jackknife(mode="plus", aggregation="median"):
    return StrategySpec(kind="jackknife", mode=mode, aggregation=aggregation)


def jackknife_bootstrap(n_bootstraps, mode="plus", aggregation="median"):
    return StrategySpec(kind="jackknife_bootstrap", n_bootstraps=n_bootstraps,
                        mode=mode, aggregation=aggregation)


@dataclass(frozen=True)
class CalibrationModel:
    """Calibration entries plus the scorers needed to score tests symmetrically.

    Fields
    ------
    entry_scores : (n_entries,) float array, polarity normalized.
    entry_models : per entry, the tuple of model indices it is paired with
        (a single fold model, or the out-of-bag bootstrap set).
    models : retained fitted scorers.
    cal_rows : the covariate rows behind the entries, in entry order (used by
        the weighting module and for test-side pairing bookkeeping).
    model_train_indices : per model, the sorted multiset of row indices (into
        the data passed to the calibrate operation) it was trained on; kept
        for out-of-sample audits.
    dropped_rows : rows that were in-bag in every bootstrap and produced no
        entry (jackknife-after-bootstrap only).
    """

    entry_scores: np.ndarray
    entry_models: tuple[tuple[int, ...], ...]
    models: tuple
    mode: str
    strategy: StrategySpec
    cal_rows: np.ndarray
    model_train_indices: tuple[tuple[int, ...], ...]
    dropped_rows: int = 0
    detached: bool = False

    def __post_init__(self):
        object.__setattr__(self, "entry_scores",
                           _readonly(np.asarray(self.entry_scores, dtype=np.float64)))
        object.__setattr__(self, "cal_rows",
                           _readonly(np.asarray(self.cal_rows, dtype=np.float64)))
        if self.entry_scores.shape[0] == 0:
            raise EmptyCalibration("calibration produced no entries")
        if self.mode not in MODES:
            raise InvalidHyperparameter(f"unknown mode {self.mode!r}")
        if self.mode == "single_model":
            if len(self.models) != 1 or any(m != (0,) for m in self.entry_models):
                raise InvalidHyperparameter(
                    "single_model calibration must bind every entry to model 0")

    @property
    def n_entries(self):
        return self.entry_scores.shape[0]

    @property
    def n_features(self):
        return self.cal_rows.shape[1]


def _resolve_n_calib(n_calib, n_rows):
    if isinstance(n_calib, float) and not isinstance(n_calib, bool):
        # round half away from zero; 0.2 of 1000 must be exactly 200
        resolved = int(np.floor(n_calib * n_rows + 0.5))
    else:
        resolved = int(n_calib)
    if resolved < 1:
        raise CalibrationTooLarge(
            f"n_calib={n_calib} resolves to {resolved}, need at least 1 entry")
    if resolved >= n_rows:
        raise CalibrationTooLarge(
            f"n_calib={n_calib} resolves to {resolved} of {n_rows} rows, "
            "leaving no training data")
    return resolved


def calibrate_split(spec, data, n_calib, seed):
    """Disjoint-split calibration: one scorer on D_train, entries on D_cal.

    A uniformly random partition is drawn from the seed; stream 0 drives the
    partition and stream 1 the fit, so the same seed always yields the same
    split.
    """
    seed = check_seed(seed)
    n = data.n_rows
    n_cal = _resolve_n_calib(n_calib, n)
    rng = make_rng(split_seed(seed, 0))
    perm = rng.permutation(n)
    cal_idx = np.sort(perm[:n_cal])
    train_idx = np.sort(perm[n_cal:])
    train = DataMatrix(data.values[train_idx])
    scorer = detectors.fit(spec, train, split_seed(seed, 1))
    cal = DataMatrix(data.values[cal_idx])
    entries = detectors.score(scorer, cal).scores
    return CalibrationModel(
        entry_scores=entries,
        entry_models=tuple((0,) for _ in range(n_cal)),
        models=(scorer,),
        mode="single_model",
        strategy=StrategySpec(kind="split", n_calib=n_calib),
        cal_rows=cal.values,
        model_train_indices=(tuple(int(i) for i in train_idx),),
    )


def calibrate_detached(scorer, calib):
    """Calibrate a pre-fitted scorer directly on a held-out inlier set."""
    if not isinstance(calib, DataMatrix):
        raise InvalidHyperparameter("calib must be a DataMatrix")
    entries = detectors.score(scorer, calib).scores
    return CalibrationModel(
        entry_scores=entries,
        entry_models=tuple((0,) for _ in range(calib.n_rows)),
        models=(scorer,),
        mode="single_model",
        strategy=StrategySpec(kind="split", n_calib=calib.n_rows),
        cal_rows=calib.values,
        model_train_indices=((),),
        detached=True,
    )


def _fold_bounds(n, k):
    sizes = np.full(k, n // k, dtype=np.int64)
    sizes[: n % k] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return bounds


def calibrate_cv(spec, data, k, mode, seed, aggregation="median"):
    """K-fold cross-conformal calibration.

    Each fold's rows are scored by the model trained on the other k-1 folds.
    Entries cover every row exactly once and are ordered by original row
    index. 'plus' keeps the k fold models; 'single_model' refits on all rows
    and rebinds every entry to that one model.
    """
    seed = check_seed(seed)
    n = data.n_rows
    k = int(k)
    if not 2 <= k <= n:
        raise KOutOfRange(f"k must be in [2, {n}], got {k}")
    if mode not in MODES:
        raise InvalidHyperparameter(f"unknown mode {mode!r}")
    rng = make_rng(split_seed(seed, 0))
    perm = rng.permutation(n)
    bounds = _fold_bounds(n, k)
    scores = np.empty(n, dtype=np.float64)
    fold_of_row = np.empty(n, dtype=np.int64)
    fold_models = []
    train_sets = []
    for f in range(k):
        fold_idx = perm[bounds[f]:bounds[f + 1]]
        other_idx = np.concatenate([perm[: bounds[f]], perm[bounds[f + 1]:]])
        model = detectors.fit(spec, DataMatrix(data.values[other_idx]),
                              split_seed(seed, 1 + f))
        fold_scores = detectors.score(model, DataMatrix(data.values[fold_idx])).scores
        scores[fold_idx] = fold_scores
        fold_of_row[fold_idx] = f
        fold_models.append(model)
        train_sets.append(tuple(sorted(int(i) for i in other_idx)))
    strategy = StrategySpec(kind="cross_validation", k=k, mode=mode,
                            aggregation=aggregation)
    if mode == "single_model":
        final = detectors.fit(spec, data, split_seed(seed, 1 + k))
        return CalibrationModel(
            entry_scores=scores,
            entry_models=tuple((0,) for _ in range(n)),
            models=(final,),
            mode="single_model",
            strategy=strategy,
            cal_rows=data.values,
            model_train_indices=(tuple(range(n)),),
        )
    return CalibrationModel(
        entry_scores=scores,
        entry_models=tuple((int(f),) for f in fold_of_row),
        models=tuple(fold_models),
        mode="plus",
        strategy=strategy,
        cal_rows=data.values,
        model_train_indices=tuple(train_sets),
    )


def calibrate_jackknife(spec, data, mode, seed, aggregation="median"):
    """Leave-one-out calibration: cross-validation with k = n_rows."""
    if data.n_rows < 2:
        raise KOutOfRange("jackknife requires at least 2 rows")
    cm = calibrate_cv(spec, data, data.n_rows, mode, seed, aggregation=aggregation)
    strategy = StrategySpec(kind="jackknife", mode=mode, aggregation=aggregation)
    return CalibrationModel(
        entry_scores=cm.entry_scores,
        entry_models=cm.entry_models,
        models=cm.models,
        mode=cm.mode,
        strategy=strategy,
        cal_rows=cm.cal_rows,
        model_train_indices=cm.model_train_indices,
    )


def _aggregate(values, aggregation, axis=-1):
    if aggregation == "median":
        return np.median(values, axis=axis)
    return np.mean(values, axis=axis)


def calibrate_bootstrap(spec, data, n_bootstraps, mode, seed, aggregation="median"):
    """Jackknife-after-bootstrap calibration.

    Each bootstrap resamples the rows with replacement and fits one scorer;
    a row's entry is the aggregate (default median) of its scores under the
    models for which it is out-of-bag. Rows that are in-bag everywhere are
    dropped and counted in ``dropped_rows`` rather than erred: they vanish
    for any realistic number of bootstraps.
    """
    seed = check_seed(seed)
    n = data.n_rows
    B = int(n_bootstraps)
    if B < 1:
        raise InvalidHyperparameter("n_bootstraps must be at least 1")
    if mode not in MODES:
        raise InvalidHyperparameter(f"unknown mode {mode!r}")
    models = []
    train_sets = []
    oob_scores = [[] for _ in range(n)]
    oob_models = [[] for _ in range(n)]
    for b in range(B):
        draw_rng = make_rng(split_seed(seed, 1 + 2 * b))
        idx = draw_rng.integers(0, n, size=n)
        inbag = np.zeros(n, dtype=bool)
        inbag[idx] = True
        model = detectors.fit(spec, DataMatrix(data.values[idx]),
                              split_seed(seed, 2 + 2 * b))
        models.append(model)
        train_sets.append(tuple(sorted(int(i) for i in idx)))
        oob_idx = np.nonzero(~inbag)[0]
        if oob_idx.size:
            sc = detectors.score(model, DataMatrix(data.values[oob_idx])).scores
            for i, s in zip(oob_idx, sc):
                oob_scores[i].append(float(s))
                oob_models[i].append(b)
    kept = [i for i in range(n) if oob_models[i]]
    if not kept:
        raise NoOutOfBagRows(
            f"every row was in-bag in all {B} bootstraps; increase n_bootstraps")
    entries = np.array([_aggregate(np.asarray(oob_scores[i]), aggregation)
                        for i in kept])
    strategy = StrategySpec(kind="jackknife_bootstrap", n_bootstraps=B,
                            mode=mode, aggregation=aggregation)
    dropped = n - len(kept)
    if mode == "single_model":
        final = detectors.fit(spec, data, split_seed(seed, 0))
        return CalibrationModel(
            entry_scores=entries,
            entry_models=tuple((0,) for _ in kept),
            models=(final,),
            mode="single_model",
            strategy=strategy,
            cal_rows=data.values[kept],
            model_train_indices=(tuple(range(n)),),
            dropped_rows=dropped,
        )
    return CalibrationModel(
        entry_scores=entries,
        entry_models=tuple(tuple(oob_models[i]) for i in kept),
        models=tuple(models),
        mode="plus",
        strategy=strategy,
        cal_rows=data.values[kept],
        model_train_indices=tuple(train_sets),
        dropped_rows=dropped,
    )


@dataclass(frozen=True)
class TestScores:
    """Per-test-point scores produced against a CalibrationModel.

    ``values`` is (n_test,) in single_model mode and (n_test, n_models) in
    plus mode, one column per retained model.
    """

    mode: str
    n_entries: int
    values: np.ndarray
    aggregation: str = "median"

    def __post_init__(self):
        object.__setattr__(self, "values",
                           _readonly(np.asarray(self.values, dtype=np.float64)))

    @property
    def n_test(self):
        return self.values.shape[0]


def test_score_matrix(cm, X):
    """Score test points under every model retained by the calibration.

    single_model: one score per test point. plus: a (n_test, n_models) table
    so estimation can compare each entry against the test score produced by
    the entry's own fold or out-of-bag models.
    """
    if cm.mode == "single_model":
        vals = detectors.score(cm.models[0], X).scores
    else:
        cols = [detectors.score(m, X).scores for m in cm.models]
        vals = np.column_stack(cols)
    return TestScores(mode=cm.mode, n_entries=cm.n_entries, values=vals,
                      aggregation=cm.strategy.aggregation)


def _check_pairing(cm, ts):
    if ts.n_entries != cm.n_entries or ts.mode != cm.mode:
        raise DimensionMismatch(
            "test scores were not produced from this calibration model")
    if cm.mode == "plus" and ts.values.shape[1] != len(cm.models):
        raise DimensionMismatch(
            "test score table has the wrong number of model columns")


def paired_rank_counts(cm, ts):
    """Count calibration entries at least as large as each test point's
    paired score.

    Returns (ge, gt, eq) int arrays of length n_test, where the comparison
    for an entry uses the test score under that entry's bound model in plus
    mode (aggregated over the entry's out-of-bag set) and the single test
    score otherwise.
    """
    _check_pairing(cm, ts)
    n_test = ts.n_test
    if cm.mode == "single_model":
        entries = np.sort(cm.entry_scores)
        t = ts.values
        ge = cm.n_entries - np.searchsorted(entries, t, side="left")
        gt = cm.n_entries - np.searchsorted(entries, t, side="right")
        return ge.astype(np.int64), gt.astype(np.int64), (ge - gt).astype(np.int64)
    ge = np.zeros(n_test, dtype=np.int64)
    gt = np.zeros(n_test, dtype=np.int64)
    groups = {}
    for i, mset in enumerate(cm.entry_models):
        groups.setdefault(mset, []).append(i)
    for mset, entry_idx in groups.items():
        cols = ts.values[:, list(mset)]
        paired_t = _aggregate(cols, cm.strategy.aggregation, axis=1)
        group_scores = np.sort(cm.entry_scores[entry_idx])
        ge += len(entry_idx) - np.searchsorted(group_scores, paired_t, side="left")
        gt += len(entry_idx) - np.searchsorted(group_scores, paired_t, side="right")
    return ge, gt, ge - gt


def aggregate_test_scores(cm, ts):
    """One polarity-normalized score per test point (plus-mode scores are
    pooled over all models with the strategy's aggregation)."""
    _check_pairing(cm, ts)
    if cm.mode == "single_model":
        return ts.values.copy()
    return _aggregate(ts.values, cm.strategy.aggregation, axis=1)
