"""The facade: detector + strategy + estimation + weighting, composed.

A PipelineConfig names what to do; ``fit`` turns it plus training data
into an immutable FittedPipeline; ``compute_p_values`` and ``select``
run test batches through it.  The facade adds no statistics of its own,
it only wires the modules together and rejects combinations whose
guarantees are undefined.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import decisions, detectors, estimation, resampling, weighting
from .core import (
    DataMatrix,
    InvalidAlpha,
    InvalidSpec,
    PValueVector,
    check_seed,
    make_rng,
    split_seed,
)
from .detectors import ScorerSpec
from .estimation import AdjustmentTable, EstimationSpec
from .resampling import CalibrationModel, StrategySpec
from .weighting import WEIGHT_KINDS

# Reserved seed streams, far above anything the strategies consume
# (cross-validation uses streams 0..k+1, bootstrapping 0..2B+2).
_TABLE_STREAM = 2**32
_SMOOTH_STREAM = 2**32 + 1


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to fit and run a detector, validated fail-closed.

    Combinations the theory does not cover are rejected here rather than
    producing numbers with silently weakened guarantees: weighting cannot
    be combined with conditional or probabilistic estimation, with
    smoothing, or with plus-mode strategies (the weighted formula needs
    one scalar score per calibration entry and per test point).
    """

    scorer: ScorerSpec
    strategy: StrategySpec
    seed: int
    estimation: EstimationSpec = EstimationSpec()
    weighting: str | None = None
    ratio_function: Callable | None = None

    def __post_init__(self):
        if not isinstance(self.scorer, ScorerSpec):
            raise InvalidSpec("scorer must be a ScorerSpec")
        if not isinstance(self.strategy, StrategySpec):
            raise InvalidSpec("strategy must be a StrategySpec")
        if not isinstance(self.estimation, EstimationSpec):
            raise InvalidSpec("estimation must be an EstimationSpec")
        object.__setattr__(self, "seed", check_seed(self.seed))
        if self.weighting is not None and self.weighting not in WEIGHT_KINDS:
            raise InvalidSpec(f"unknown weighting kind {self.weighting!r}")
        if self.ratio_function is not None and self.weighting != "oracle":
            raise InvalidSpec("ratio_function applies only to oracle weighting")
        if self.weighting == "oracle" and self.ratio_function is None:
            raise InvalidSpec("oracle weighting requires a ratio_function")
        if self.weighting is not None:
            if self.estimation.regime == "conditional_empirical":
                raise InvalidSpec(
                    "weighted p-values with calibration-conditional guarantees "
                    "are not defined; drop weighting or use marginal estimation")
            if self.estimation.regime == "probabilistic":
                raise InvalidSpec(
                    "weighting requires rank-based p-values; probabilistic "
                    "estimation is not rank-based")
            if self.estimation.smoothed:
                raise InvalidSpec("weighted p-values do not support smoothing")
            if self.strategy.mode == "plus":
                raise InvalidSpec(
                    "weighting requires one score per calibration entry; use "
                    "split or a single_model strategy instead of plus mode")


@dataclass(frozen=True)
class FittedPipeline:
    """Immutable result of ``fit``; shareable across threads and batches."""

    config: PipelineConfig
    calibration: CalibrationModel
    table: AdjustmentTable | None = None

    @property
    def n_entries(self) -> int:
        return self.calibration.n_entries


def _as_matrix(data) -> DataMatrix:
    return data if isinstance(data, DataMatrix) else DataMatrix(data)


def _calibrate(config: PipelineConfig, train: DataMatrix) -> CalibrationModel:
    strategy = config.strategy
    if strategy.kind == "split":
        return resampling.calibrate_split(config.scorer, train,
                                          strategy.n_calib, config.seed)
    if strategy.kind == "cross_validation":
        return resampling.calibrate_cv(config.scorer, train, strategy.k,
                                       strategy.mode, config.seed,
                                       strategy.aggregation)
    if strategy.kind == "jackknife":
        return resampling.calibrate_jackknife(config.scorer, train,
                                              strategy.mode, config.seed,
                                              strategy.aggregation)
    return resampling.calibrate_bootstrap(config.scorer, train,
                                          strategy.n_bootstraps, strategy.mode,
                                          config.seed, strategy.aggregation)


def _attach_table(config: PipelineConfig, cm: CalibrationModel) -> AdjustmentTable | None:
    est = config.estimation
    if est.regime != "conditional_empirical":
        return None
    return estimation.build_adjustment(cm.n_entries, est.delta, est.method,
                                       seed=split_seed(config.seed, _TABLE_STREAM))


def fit(config: PipelineConfig, train) -> FittedPipeline:
    """Run the configured strategy on training data and freeze the result."""
    if not isinstance(config, PipelineConfig):
        raise InvalidSpec("config must be a PipelineConfig")
    train = _as_matrix(train)
    cm = _calibrate(config, train)
    return FittedPipeline(config=config, calibration=cm,
                          table=_attach_table(config, cm))


def fit_detached(score_function, calib, polarity, seed,
                 estimation_spec: EstimationSpec = EstimationSpec(),
                 weighting_kind: str | None = None,
                 ratio_function: Callable | None = None) -> FittedPipeline:
    """Calibrate an already-trained external scorer on held-out inliers.

    The scorer must never have seen the calibration rows; nothing here can
    check that, so the exchangeability of its scores is the caller's
    responsibility.  Only split-style calibration is possible: refitting
    strategies would need to retrain the model, which is exactly what a
    detached scorer cannot do.
    """
    scorer = detectors.wrap_detached(score_function, polarity)
    calib = _as_matrix(calib)
    cm = resampling.calibrate_detached(scorer, calib)
    config = PipelineConfig(
        scorer=ScorerSpec(kind="external", polarity=polarity),
        strategy=cm.strategy,
        seed=seed,
        estimation=estimation_spec,
        weighting=weighting_kind,
        ratio_function=ratio_function,
    )
    return FittedPipeline(config=config, calibration=cm,
                          table=_attach_table(config, cm))


def _weighted_p_values(fp: FittedPipeline, X: DataMatrix,
                       ts: resampling.TestScores) -> PValueVector:
    cm = fp.calibration
    model = weighting.fit_weight_estimator(cm.cal_rows, X.values,
                                           kind=fp.config.weighting,
                                           ratio_function=fp.config.ratio_function)
    cal_w = weighting.weights(model, cm.cal_rows)
    test_w = weighting.weights(model, X.values)
    test_scores = resampling.aggregate_test_scores(cm, ts)
    values = weighting.weighted_p_values(cm.entry_scores, cal_w,
                                         test_scores, test_w)
    notes = () if model.converged else (
        "weight model gradient ascent hit its iteration cap",)
    return PValueVector(values, estimation="empirical", smoothed=False,
                        calibration_size=cm.n_entries,
                        weighting=fp.config.weighting, notes=notes)


def compute_p_values(fp: FittedPipeline, X, seed=None) -> PValueVector:
    """P-values for a test batch under the fitted pipeline.

    ``seed`` feeds only the smoothing draws (when the estimation spec asks
    for smoothing); left as None it is derived from the pipeline seed, so
    repeated calls on the same batch are identical.  The weight model, when
    configured, is refit on (calibration covariates, this batch): the
    target distribution is whatever the batch is.
    """
    if not isinstance(fp, FittedPipeline):
        raise InvalidSpec("fp must be a FittedPipeline")
    X = _as_matrix(X)
    cm = fp.calibration
    ts = resampling.test_score_matrix(cm, X)
    if fp.config.weighting is not None:
        return _weighted_p_values(fp, X, ts)
    est = fp.config.estimation
    if est.regime == "empirical":
        if est.smoothed:
            smooth_seed = (split_seed(fp.config.seed, _SMOOTH_STREAM)
                           if seed is None else check_seed(seed))
            return estimation.empirical_p_value(cm, ts, smoothed=True,
                                                seed=smooth_seed)
        return estimation.empirical_p_value(cm, ts, smoothed=False)
    if est.regime == "conditional_empirical":
        return estimation.conditional_p_value(cm, ts, fp.table)
    return estimation.probabilistic_p_value(cm, ts, bandwidth=est.bandwidth)


def stream_p_values(fp: FittedPipeline, X, seed=None) -> PValueVector:
    """One p-value per stream step, smoothing seeded per step.

    Equivalent to calling ``compute_p_values`` on each row alone with the
    step-indexed child seed ``split_seed(seed, t)``, so a stream processed
    incrementally and a stream processed in one batch agree exactly.  Only
    empirical estimation is smoothed; conditional and probabilistic regimes
    pass through unchanged.  Weighted pipelines are refused: a density
    ratio against a one-point target batch is not meaningful.
    """
    if fp.config.weighting is not None:
        raise InvalidSpec("stream monitoring does not support weighting")
    X = _as_matrix(X)
    est = fp.config.estimation
    if est.regime != "empirical":
        return compute_p_values(fp, X)
    cm = fp.calibration
    ts = resampling.test_score_matrix(cm, X)
    _, gt, eq = resampling.paired_rank_counts(cm, ts)
    base = (split_seed(fp.config.seed, _SMOOTH_STREAM)
            if seed is None else check_seed(seed))
    u = np.array([1.0 - make_rng(split_seed(base, t)).random()
                  for t in range(X.n_rows)])
    n = cm.n_entries
    return PValueVector((gt + u * (eq + 1)) / (n + 1), estimation="empirical",
                        smoothed=True, calibration_size=n)


def select(fp: FittedPipeline, X, alpha, seed=None) -> decisions.DecisionSet:
    """Flag anomalies in a batch with FDR control at ``alpha``."""
    try:
        alpha = float(alpha)
    except (TypeError, ValueError):
        raise InvalidAlpha(f"alpha must be a real number, got {alpha!r}") from None
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must be in (0, 1), got {alpha}")
    pvals = compute_p_values(fp, X, seed=seed)
    if fp.config.weighting is not None:
        return decisions.weighted_false_discovery_control(pvals, alpha)
    return decisions.benjamini_hochberg(pvals, alpha)


def score_samples(fp: FittedPipeline, X) -> detectors.ScoreVector:
    """Aggregated polarity-normalized anomaly scores, one per test point."""
    if not isinstance(fp, FittedPipeline):
        raise InvalidSpec("fp must be a FittedPipeline")
    X = _as_matrix(X)
    cm = fp.calibration
    ts = resampling.test_score_matrix(cm, X)
    return detectors.ScoreVector(resampling.aggregate_test_scores(cm, ts),
                                 polarity_normalized=True)
