"""Sequential evidence processes over streams of conformal p-values.

A nonnegative martingale started at 1 is a betting capital against the
hypothesis that the stream's p-values are i.i.d. uniform.  Ville's
inequality bounds the probability that the capital ever reaches a level
lambda by 1/lambda, so crossing a threshold is anytime-valid evidence
that exchangeability has broken, without any correction for how long the
stream has been watched.

Three betting strategies are provided:

* ``power``: multiplies by epsilon * p ** (epsilon - 1) each step.
* ``simple_mixture``: integrates the power martingale over epsilon in
  (0, 1], removing the need to pick epsilon in advance.
* ``simple_jumper``: a small portfolio of linear bets 1 + s * (p - 1/2)
  over states s, with capital slowly re-mixed between states.

All arithmetic is in log space; martingale values routinely exceed the
float range on long anomalous streams.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .core import InvalidSpec, _readonly

MARTINGALE_KINDS = ("power", "simple_mixture", "simple_jumper")
ALARM_KINDS = ("ville", "restarted_ville", "cusum", "sr")

# Conformal p-values are at least 1/(n+1), but probabilistic estimation
# can emit arbitrarily small values; flooring keeps the log domain sane.
P_FLOOR = 1e-12

_DEFAULT_GRID_SIZE = 1000
_DEFAULT_JUMPER_STATES = (-1.0, 0.0, 1.0)
_DEFAULT_JUMP_RATE = 0.01

TRAJECTORY_COLUMNS = (
    "step",
    "martingale",
    "restarted_martingale",
    "cusum",
    "sr",
    "alarms",
    "ville_threshold",
    "restarted_ville_threshold",
)


@dataclass(frozen=True)
class MartingaleSpec:
    """Betting strategy selector; parameters are accepted only by the kind that uses them."""

    kind: str
    epsilon: float | None = None
    grid_size: int | None = None
    jumper_states: tuple[float, ...] | None = None
    jump_rate: float | None = None

    def __post_init__(self):
        if self.kind not in MARTINGALE_KINDS:
            raise InvalidSpec(f"unknown martingale kind {self.kind!r}")
        if self.kind == "power":
            if self.epsilon is None:
                raise InvalidSpec("power requires epsilon")
            eps = float(self.epsilon)
            if not 0.0 < eps <= 1.0:
                raise InvalidSpec(f"epsilon must be in (0, 1], got {self.epsilon}")
            object.__setattr__(self, "epsilon", eps)
            self._reject("power", grid_size=self.grid_size,
                         jumper_states=self.jumper_states, jump_rate=self.jump_rate)
        elif self.kind == "simple_mixture":
            grid = _DEFAULT_GRID_SIZE if self.grid_size is None else self.grid_size
            if not isinstance(grid, (int, np.integer)) or isinstance(grid, bool):
                raise InvalidSpec("grid_size must be an integer")
            grid = int(grid)
            # composite Simpson quadrature needs an even interval count
            if grid < 2 or grid % 2:
                raise InvalidSpec(f"grid_size must be a positive even integer, got {grid}")
            object.__setattr__(self, "grid_size", grid)
            self._reject("simple_mixture", epsilon=self.epsilon,
                         jumper_states=self.jumper_states, jump_rate=self.jump_rate)
        else:
            states = _DEFAULT_JUMPER_STATES if self.jumper_states is None else self.jumper_states
            states = tuple(float(s) for s in states)
            if not states:
                raise InvalidSpec("jumper_states must be non-empty")
            if any(not -1.0 <= s <= 1.0 for s in states):
                raise InvalidSpec("jumper_states must lie in [-1, 1]")
            if any(b <= a for a, b in zip(states, states[1:])):
                raise InvalidSpec("jumper_states must be strictly increasing")
            rate = _DEFAULT_JUMP_RATE if self.jump_rate is None else float(self.jump_rate)
            if not 0.0 < rate < 1.0:
                raise InvalidSpec(f"jump_rate must be in (0, 1), got {self.jump_rate}")
            object.__setattr__(self, "jumper_states", states)
            object.__setattr__(self, "jump_rate", rate)
            self._reject("simple_jumper", epsilon=self.epsilon, grid_size=self.grid_size)

    def _reject(self, kind, **foreign):
        for name, value in foreign.items():
            if value is not None:
                raise InvalidSpec(f"{name} does not apply to kind {kind!r}")


def power(epsilon) -> MartingaleSpec:
    return MartingaleSpec(kind="power", epsilon=epsilon)


def simple_mixture(grid_size=_DEFAULT_GRID_SIZE) -> MartingaleSpec:
    return MartingaleSpec(kind="simple_mixture", grid_size=grid_size)


def simple_jumper(jumper_states=_DEFAULT_JUMPER_STATES,
                  jump_rate=_DEFAULT_JUMP_RATE) -> MartingaleSpec:
    return MartingaleSpec(kind="simple_jumper", jumper_states=jumper_states,
                          jump_rate=jump_rate)


@dataclass(frozen=True)
class AlarmConfig:
    """Alarm thresholds; an absent threshold disables that statistic's alarm."""

    ville_threshold: float | None = None
    restarted_ville_threshold: float | None = None
    cusum_threshold: float | None = None
    sr_threshold: float | None = None

    def __post_init__(self):
        for name in ("ville_threshold", "restarted_ville_threshold", "cusum_threshold"):
            value = getattr(self, name)
            if value is not None:
                value = float(value)
                if not value > 1.0:
                    raise InvalidSpec(f"{name} must exceed 1, got {value}")
                object.__setattr__(self, name, value)
        if self.sr_threshold is not None:
            value = float(self.sr_threshold)
            if not value > 0.0:
                raise InvalidSpec(f"sr_threshold must be positive, got {value}")
            object.__setattr__(self, "sr_threshold", value)
        if all(getattr(self, n) is None for n in
               ("ville_threshold", "restarted_ville_threshold",
                "cusum_threshold", "sr_threshold")):
            raise InvalidSpec("at least one alarm threshold must be set")


@dataclass(frozen=True)
class MartingaleState:
    """Everything a strictly sequential stream needs to continue.

    ``log_m`` is the log martingale value (0 at start).  ``sum_log_p``
    carries the running sum of log p-values so the mixture integral can
    be re-evaluated without replaying the stream.  ``jumper_capitals``
    is kept normalized to sum 1; the unnormalized total is exactly the
    martingale value, which lives in ``log_m`` instead so the capitals
    never overflow.
    """

    step: int
    log_m: float
    log_m_restarted: float
    log_min_m: float
    log_sr: float
    sum_log_p: float
    jumper_capitals: np.ndarray | None
    triggered_alarms: frozenset[str]
    alarm_history: tuple[tuple[int, str], ...]
    floored_count: int

    def __post_init__(self):
        if self.jumper_capitals is not None:
            caps = np.asarray(self.jumper_capitals, dtype=np.float64)
            object.__setattr__(self, "jumper_capitals", _readonly(caps))

    @property
    def martingale(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_m))

    @property
    def restarted_martingale(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_m_restarted))

    @property
    def cusum(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_m - self.log_min_m))

    @property
    def sr(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_sr))


@dataclass(frozen=True)
class TrajectoryPoint:
    """One step of a stream run: log statistics plus the alarms it raised."""

    step: int
    log_m: float
    log_m_restarted: float
    log_min_m: float
    log_sr: float
    triggered: frozenset[str]
    new_alarms: tuple[str, ...]

    @property
    def martingale(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_m))

    @property
    def restarted_martingale(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_m_restarted))

    @property
    def cusum(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_m - self.log_min_m))

    @property
    def sr(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_sr))


def init(spec: MartingaleSpec, alarms: AlarmConfig) -> MartingaleState:
    """Fresh state: every process starts with capital exactly 1."""
    if not isinstance(spec, MartingaleSpec):
        raise InvalidSpec("spec must be a MartingaleSpec")
    if not isinstance(alarms, AlarmConfig):
        raise InvalidSpec("alarms must be an AlarmConfig")
    capitals = None
    if spec.kind == "simple_jumper":
        k = len(spec.jumper_states)
        capitals = np.full(k, 1.0 / k)
    return MartingaleState(
        step=0,
        log_m=0.0,
        log_m_restarted=0.0,
        log_min_m=0.0,
        log_sr=float("-inf"),
        sum_log_p=0.0,
        jumper_capitals=capitals,
        triggered_alarms=frozenset(),
        alarm_history=(),
        floored_count=0,
    )


def _floor_p(p):
    p = float(p)
    if p < P_FLOOR:
        return P_FLOOR, True
    return min(p, 1.0), False


@lru_cache(maxsize=8)
def _mixture_grid(grid_size):
    eps = np.linspace(0.0, 1.0, grid_size + 1)
    weights = np.ones(grid_size + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    with np.errstate(divide="ignore"):
        log_eps = np.log(eps)
    log_weights = np.log(weights / (3.0 * grid_size))
    eps.setflags(write=False)
    log_eps.setflags(write=False)
    log_weights.setflags(write=False)
    return eps, log_eps, log_weights


def _log_mixture_integral(n, sum_log_p, grid_size):
    """log of I_n = integral over (0,1] of eps**n * exp((eps-1) * L_n) d eps.

    Composite Simpson in log space; the eps=0 endpoint contributes its
    limit 0 for n >= 1 (the -inf log kills it inside logsumexp).
    """
    eps, log_eps, log_weights = _mixture_grid(grid_size)
    log_integrand = n * log_eps + (eps - 1.0) * sum_log_p
    return float(logsumexp(log_integrand + log_weights))


def _jumper_step(spec, capitals, p):
    states = np.asarray(spec.jumper_states)
    rate = spec.jump_rate
    mixed = (1.0 - rate) * capitals + rate * capitals.sum() / states.shape[0]
    bet = mixed * (1.0 + states * (p - 0.5))
    total = float(bet.sum())
    return math.log(total / float(mixed.sum())), bet / total


def _log_step(spec, state, p):
    """Log betting factor for observing p in this state, plus new jumper capitals."""
    if spec.kind == "power":
        return math.log(spec.epsilon) + (spec.epsilon - 1.0) * math.log(p), None
    if spec.kind == "simple_mixture":
        new_sum = state.sum_log_p + math.log(p)
        log_integral = _log_mixture_integral(state.step + 1, new_sum, spec.grid_size)
        return log_integral - state.log_m, None
    return _jumper_step(spec, state.jumper_capitals, p)


def step_factor(spec: MartingaleSpec, state: MartingaleState, p) -> float:
    """Multiplicative betting factor f for the next observation, without advancing."""
    p, _ = _floor_p(p)
    log_f, _ = _log_step(spec, state, p)
    return math.exp(log_f)


def _log_or_none(threshold):
    return None if threshold is None else math.log(threshold)


def update(spec: MartingaleSpec, state: MartingaleState, p,
           alarms: AlarmConfig) -> MartingaleState:
    """Advance one observation and re-evaluate every configured alarm."""
    p, floored = _floor_p(p)
    log_f, new_capitals = _log_step(spec, state, p)
    step = state.step + 1

    log_m = state.log_m + log_f
    log_min_m = min(state.log_min_m, log_m)
    log_sr = float(np.logaddexp(state.log_sr, 0.0)) + log_f

    restart_level = _log_or_none(alarms.restarted_ville_threshold)
    log_restarted = state.log_m_restarted + log_f
    restart_crossed = restart_level is not None and log_restarted >= restart_level

    triggered = set()
    ville_level = _log_or_none(alarms.ville_threshold)
    if ville_level is not None and log_m >= ville_level:
        triggered.add("ville")
    if restart_crossed:
        triggered.add("restarted_ville")
    cusum_level = _log_or_none(alarms.cusum_threshold)
    if cusum_level is not None and log_m - log_min_m >= cusum_level:
        triggered.add("cusum")
    sr_level = _log_or_none(alarms.sr_threshold)
    if sr_level is not None and log_sr >= sr_level:
        triggered.add("sr")

    # History keeps rising edges; the restarted process logs every
    # crossing since it resets to capital 1 the moment it fires.
    events = []
    for kind in ALARM_KINDS:
        if kind == "restarted_ville":
            if restart_crossed:
                events.append((step, kind))
        elif kind in triggered and kind not in state.triggered_alarms:
            events.append((step, kind))
    if restart_crossed:
        log_restarted = 0.0

    return MartingaleState(
        step=step,
        log_m=log_m,
        log_m_restarted=log_restarted,
        log_min_m=log_min_m,
        log_sr=log_sr,
        sum_log_p=state.sum_log_p + math.log(p),
        jumper_capitals=new_capitals,
        triggered_alarms=frozenset(triggered),
        alarm_history=state.alarm_history + tuple(events),
        floored_count=state.floored_count + int(floored),
    )


def run_stream(spec: MartingaleSpec, alarms: AlarmConfig, p_stream):
    """Fold ``update`` over a p-value stream.

    Returns the final state and one TrajectoryPoint per observation.
    """
    state = init(spec, alarms)
    trajectory = []
    for p in p_stream:
        seen = len(state.alarm_history)
        state = update(spec, state, p, alarms)
        trajectory.append(TrajectoryPoint(
            step=state.step,
            log_m=state.log_m,
            log_m_restarted=state.log_m_restarted,
            log_min_m=state.log_min_m,
            log_sr=state.log_sr,
            triggered=state.triggered_alarms,
            new_alarms=tuple(kind for _, kind in state.alarm_history[seen:]),
        ))
    return state, tuple(trajectory)


def _fmt(value) -> str:
    return repr(float(value))


def trajectory_rows(trajectory, alarms: AlarmConfig):
    """Plot-ready rows matching TRAJECTORY_COLUMNS, thresholds as constant columns."""
    ville = "" if alarms.ville_threshold is None else _fmt(alarms.ville_threshold)
    restarted = ("" if alarms.restarted_ville_threshold is None
                 else _fmt(alarms.restarted_ville_threshold))
    rows = []
    for point in trajectory:
        rows.append((
            str(point.step),
            _fmt(point.martingale),
            _fmt(point.restarted_martingale),
            _fmt(point.cusum),
            _fmt(point.sr),
            ";".join(point.new_alarms),
            ville,
            restarted,
        ))
    return rows


def write_trajectory_csv(path, trajectory, alarms: AlarmConfig):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRAJECTORY_COLUMNS)
        writer.writerows(trajectory_rows(trajectory, alarms))
