"""P-value estimation: exact empirical (conformal), calibration-conditional
empirical, and probabilistic (KDE, non-conformal).

The empirical regime implements the rank-count p-value

    p = (#{i : S_i >= s_test} + 1) / (n + 1)

which is super-uniform under exchangeability; the smoothed variant breaks
ties with a uniform draw and is exactly Uniform(0, 1). The conditional regime
replaces the raw rank with a simultaneous upper-confidence-band adjustment so
super-uniformity holds with probability at least 1 - delta over the draw of
the calibration set itself. The probabilistic regime replaces rank counting
with a Gaussian KDE tail mass; it produces arbitrarily small, off-grid
p-values and is flagged non-conformal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .core import (
    EmptyCalibration,
    InvalidDelta,
    InvalidHyperparameter,
    PValueVector,
    ShapeMismatch,
    TableMismatch,
    _readonly,
    make_rng,
)
from .resampling import aggregate_test_scores, paired_rank_counts

REGIMES = ("empirical", "conditional_empirical", "probabilistic")
CONDITIONAL_METHODS = ("simes", "mc", "asymptotic")

PROBABILISTIC_FLOOR = 1e-12
_MC_DRAWS = 10_000
_MC_CHUNK = 500


@dataclass(frozen=True)
class EstimationSpec:
    """Configuration of the p-value regime.

    method/delta apply to conditional_empirical, smoothed to empirical,
    bandwidth (a positive number or 'silverman') to probabilistic.
    """

    regime: str = "empirical"
    method: str | None = None
    delta: float | None = None
    smoothed: bool = False
    bandwidth: float | str | None = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise InvalidHyperparameter(f"unknown estimation regime {self.regime!r}")
        if self.regime == "conditional_empirical":
            if self.method not in CONDITIONAL_METHODS:
                raise InvalidHyperparameter(
                    f"conditional estimation requires method in {CONDITIONAL_METHODS}")
            if self.delta is None or not 0.0 < float(self.delta) < 1.0:
                raise InvalidDelta("conditional estimation requires delta in (0, 1)")
            if self.smoothed:
                raise InvalidHyperparameter("smoothing applies to the empirical regime only")
        else:
            if self.method is not None or self.delta is not None:
                raise InvalidHyperparameter(
                    "method/delta apply to the conditional_empirical regime only")
        if self.regime == "probabilistic":
            if self.smoothed:
                raise InvalidHyperparameter("smoothing applies to the empirical regime only")
            bw = self.bandwidth if self.bandwidth is not None else "silverman"
            if bw != "silverman":
                if not isinstance(bw, (int, float)) or isinstance(bw, bool) or bw <= 0:
                    raise InvalidHyperparameter(
                        "bandwidth must be positive or 'silverman'")
            object.__setattr__(self, "bandwidth", bw)
        elif self.bandwidth is not None:
            raise InvalidHyperparameter("bandwidth applies to the probabilistic regime only")


def conformal_p_values(cal_scores, test_scores, smoothed=False, seed=None):
    """Rank-count conformal p-values of test scores against calibration scores.

    The detector-free core primitive: both inputs are plain score arrays
    under the higher-is-anomalous convention.

    Parameters
    ----------
    cal_scores : array of shape (n,)
    test_scores : array of shape (m,)
    smoothed : bool
        When true, ties are broken with per-test-point uniform draws and the
        result is exactly uniform under exchangeability; requires ``seed``.
    seed : int, optional

    Returns
    -------
    PValueVector
    """
    cal = np.asarray(cal_scores, dtype=np.float64).reshape(-1)
    t = np.asarray(test_scores, dtype=np.float64).reshape(-1)
    n = cal.shape[0]
    if n == 0:
        raise EmptyCalibration("no calibration scores")
    cal_sorted = np.sort(cal)
    ge = n - np.searchsorted(cal_sorted, t, side="left")
    if not smoothed:
        return PValueVector((ge + 1) / (n + 1), estimation="empirical",
                            smoothed=False, calibration_size=n)
    if seed is None:
        raise InvalidHyperparameter("smoothed p-values require a seed")
    gt = n - np.searchsorted(cal_sorted, t, side="right")
    eq = ge - gt
    # 1 - U lies in (0, 1], keeping the p-value strictly positive
    u = 1.0 - make_rng(seed).random(t.shape[0])
    return PValueVector((gt + u * (eq + 1)) / (n + 1), estimation="empirical",
                        smoothed=True, calibration_size=n)


def empirical_p_value(cm, ts, smoothed=False, seed=None):
    """Empirical conformal p-values for test scores paired to a calibration
    model (plus-mode entries compare against the test score under the entry's
    own models)."""
    n = cm.n_entries
    ge, gt, eq = paired_rank_counts(cm, ts)
    if not smoothed:
        return PValueVector((ge + 1) / (n + 1), estimation="empirical",
                            smoothed=False, calibration_size=n)
    if seed is None:
        raise InvalidHyperparameter("smoothed p-values require a seed")
    u = 1.0 - make_rng(seed).random(ts.n_test)
    return PValueVector((gt + u * (eq + 1)) / (n + 1), estimation="empirical",
                        smoothed=True, calibration_size=n)


@dataclass(frozen=True)
class AdjustmentTable:
    """Rank-to-adjusted-p-value map for calibration-conditional estimation.

    ``adjusted[r-1]`` is the p-value assigned to raw rank r in 1..n+1; it is
    nondecreasing, at least the marginal grid value r/(n+1), and ends at 1.
    """

    n: int
    delta: float
    method: str
    adjusted: np.ndarray

    def __post_init__(self):
        adj = _readonly(np.asarray(self.adjusted, dtype=np.float64))
        if adj.shape != (self.n + 1,):
            raise ShapeMismatch("adjusted must have length n + 1")
        r = np.arange(1, self.n + 2)
        if (np.diff(adj) < 0).any():
            raise InvalidHyperparameter("adjusted values must be nondecreasing")
        if (adj < r / (self.n + 1) - 1e-12).any():
            raise InvalidHyperparameter("adjusted values must dominate the grid")
        if adj[-1] != 1.0:
            raise InvalidHyperparameter("rank n + 1 must map to 1")
        object.__setattr__(self, "adjusted", adj)


def _band_asymptotic(n, delta):
    r = np.arange(1, n + 1)
    return r / n + np.sqrt(np.log(1.0 / delta) / (2.0 * n))


def _band_simes(n, delta):
    # rank-proportional spending: per-rank tail budget delta * r / sum(r),
    # simultaneous by the union bound
    r = np.arange(1, n + 1)
    gamma = delta * r * (2.0 / (n * (n + 1.0)))
    return stats.beta.isf(gamma, r, n - r + 1)


def _band_mc(n, delta, seed):
    if seed is None:
        raise InvalidHyperparameter("the mc adjustment requires a seed")
    rng = make_rng(seed)
    r = np.arange(1, n + 1)
    mins = np.empty(_MC_DRAWS)
    for lo in range(0, _MC_DRAWS, _MC_CHUNK):
        hi = min(lo + _MC_CHUNK, _MC_DRAWS)
        u = np.sort(rng.random((hi - lo, n)), axis=1)
        # Beta(r, n-r+1) survival at U_(r); the calibrated level is the
        # largest gamma with at most delta * draws of min-SF below it
        sf = special.betainc(n - r + 1, r, 1.0 - u)
        mins[lo:hi] = sf.min(axis=1)
    order = np.sort(mins)
    gamma = order[int(np.floor(delta * _MC_DRAWS))]
    return stats.beta.isf(gamma, r, n - r + 1)


def build_adjustment(n, delta, method, seed=None):
    """Build the simultaneous upper-band adjustment for n calibration entries.

    All three methods produce an upper confidence band b_1 <= ... <= b_n for
    the order statistics of n uniforms at joint level 1 - delta; the adjusted
    p-value for raw rank r is b_r (clamped to the marginal grid from below),
    and rank n + 1 maps to 1.

    Methods: 'asymptotic' is the one-sided Dvoretzky-Kiefer-Wolfowitz band;
    'mc' calibrates per-rank Beta quantiles to the simulated distribution of
    the worst rank; 'simes' spends the delta budget across ranks
    proportionally to the rank via a union bound.
    """
    n = int(n)
    if n < 1:
        raise InvalidHyperparameter("n must be at least 1")
    if not isinstance(delta, (int, float)) or isinstance(delta, bool) or not 0.0 < delta < 1.0:
        raise InvalidDelta(f"delta must be in (0, 1), got {delta!r}")
    if method == "asymptotic":
        band = _band_asymptotic(n, delta)
    elif method == "simes":
        band = _band_simes(n, delta)
    elif method == "mc":
        band = _band_mc(n, delta, seed)
    else:
        raise InvalidHyperparameter(f"unknown adjustment method {method!r}")
    r = np.arange(1, n + 1)
    band = np.maximum.accumulate(np.minimum(np.maximum(band, r / (n + 1.0)), 1.0))
    adjusted = np.append(band, 1.0)
    return AdjustmentTable(n=n, delta=float(delta), method=method, adjusted=adjusted)


def conditional_p_value(cm, ts, table):
    """Map raw empirical ranks through an AdjustmentTable, yielding p-values
    that stay super-uniform conditionally on the realized calibration set
    with probability at least 1 - delta."""
    if table.n != cm.n_entries:
        raise TableMismatch(
            f"table built for n={table.n}, calibration has {cm.n_entries} entries")
    ge, _, _ = paired_rank_counts(cm, ts)
    ranks = ge + 1
    return PValueVector(table.adjusted[ranks - 1], estimation="conditional_empirical",
                        smoothed=False, calibration_size=cm.n_entries)


def silverman_bandwidth(scores):
    """Silverman's reference rule, h = 0.9 min(sd, IQR/1.34) n^(-1/5)."""
    s = np.asarray(scores, dtype=np.float64)
    n = s.shape[0]
    sd = float(np.std(s, ddof=1))
    q75, q25 = np.percentile(s, [75.0, 25.0])
    iqr = float(q75 - q25)
    return 0.9 * min(sd, iqr / 1.34) * n ** (-0.2)


def probabilistic_p_value(cm, ts, bandwidth="silverman"):
    """KDE tail-mass p-values: p = mean_i SF_normal((s_test - S_i) / h).

    Values are continuous, can fall below the conformal floor, and carry no
    finite-sample guarantee; the result is flagged non-conformal. Degenerate
    calibration scores (zero spread) fall back to the empirical regime with a
    note instead of erroring.
    """
    n = cm.n_entries
    if n < 2:
        raise EmptyCalibration("probabilistic estimation needs at least 2 entries")
    if bandwidth == "silverman":
        h = silverman_bandwidth(cm.entry_scores)
    else:
        if not isinstance(bandwidth, (int, float)) or isinstance(bandwidth, bool) or bandwidth <= 0:
            raise InvalidHyperparameter("bandwidth must be positive or 'silverman'")
        h = float(bandwidth)
    if not np.isfinite(h) or h <= 0.0:
        fallback = empirical_p_value(cm, ts, smoothed=False)
        return PValueVector(fallback.values, estimation="empirical", smoothed=False,
                            calibration_size=n,
                            notes=("degenerate calibration scores: probabilistic "
                                   "estimation fell back to empirical",))
    t = aggregate_test_scores(cm, ts)
    entries = cm.entry_scores
    out = np.empty(t.shape[0], dtype=np.float64)
    chunk = max(1, int(2_000_000 // max(n, 1)))
    for lo in range(0, t.shape[0], chunk):
        hi = min(lo + chunk, t.shape[0])
        z = (entries[None, :] - t[lo:hi, None]) / h
        out[lo:hi] = special.ndtr(z).mean(axis=1)
    out = np.clip(out, PROBABILISTIC_FLOOR, 1.0)
    return PValueVector(out, estimation="probabilistic", smoothed=False,
                        calibration_size=n, conformal=False)


def conditional_validity_oracle(table, n_reps=1000, seed=1):
    """Fraction of fresh calibration draws on which the table's conditional
    guarantee would fail.

    Conditionally on a realized calibration set of uniforms, the adjusted
    p-value of a uniform test point fails super-uniformity exactly when some
    order statistic of n fresh uniforms exceeds the band, so the failure
    frequency over draws estimates the band's joint violation probability
    and must stay near or below delta.
    """
    rng = make_rng(seed)
    band = table.adjusted[: table.n]
    failures = 0
    chunk = max(1, int(2_000_000 // max(table.n, 1)))
    done = 0
    while done < n_reps:
        m = min(chunk, n_reps - done)
        u = np.sort(rng.random((m, table.n)), axis=1)
        failures += int((u > band[None, :]).any(axis=1).sum())
        done += m
    return failures / n_reps
