"""Adaptive difficulty scheduling and Thompson-sampling IRT calibration.

A difficulty scheduler nudges an integer difficulty by +/-1 based on group
pass rates. The calibrator maintains a weighted pool of logistic
(mu, s) curve candidates, Thompson-samples difficulties at the target pass
rate, performs Bayesian posterior updates on observed group outcomes, and
resamples the pool when its effective sample size collapses. A synthetic
logistic environment validates the loop end to end.

The module does not implement environments; it accepts any
(difficulty -> pass-rate) oracle, with SyntheticEnv as the test oracle.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, gammaln, log_expit, logsumexp

from .errors import ConfigError, InvalidPool

DEFAULT_POOL_SIZE = 64
DEFAULT_MU_LOC = 50.0
DEFAULT_MU_SCALE = 40.0
DEFAULT_S_LOC = 6.0
DEFAULT_S_SCALE = 2.0
DEFAULT_S_FLOOR = 1.0
DEFAULT_RECENCY = 0.9
DEFAULT_EXPLORE_PROB = 0.1
DEFAULT_EXPLORE_HALFWIDTH = 0.25


def verify_reward(y: float, y_hat: float, eps: float) -> int:
    """Binary verification reward: 1 iff |y_hat - y| < eps (strict)."""
    if eps < 0:
        raise ConfigError("eps must be >= 0")
    return 1 if abs(y_hat - y) < eps else 0


@dataclass
class SchedulerState:
    """Integer difficulty state for one environment."""

    difficulty: int
    last_group_difficulty: int
    env_id: str = ""
    sample_count: int = 0


def difficulty_update(rbar: float, d: int, d_group: int) -> Tuple[int, int]:
    """One scheduler step; returns (delta, new difficulty).

    Increases difficulty only when the pass rate is high and the observed
    group was generated at the current difficulty (stale groups cannot
    trigger an increase); decreases on a zero pass rate regardless.
    """
    if not 0.0 <= rbar <= 1.0:
        raise ConfigError("rbar must lie in [0, 1]")
    if rbar > 0.7 and d_group == d:
        delta = 1
    elif rbar == 0.0:
        delta = -1
    else:
        delta = 0
    return delta, d + delta


@dataclass
class CalibratorState:
    """Thompson-sampling pool of logistic (mu, s) candidates.

    Posterior weights are kept in log space and always normalized.
    History holds raw (d, k, G) observations since the last resample;
    resampling folds them into recency-weighted success/failure aggregates.
    """

    mus: np.ndarray
    ss: np.ndarray
    log_weights: np.ndarray
    p_target: float = 0.5
    explore_prob: float = DEFAULT_EXPLORE_PROB
    explore_halfwidth: float = DEFAULT_EXPLORE_HALFWIDTH
    recency: float = DEFAULT_RECENCY
    ess_threshold: float = DEFAULT_POOL_SIZE / 2
    history: List[Tuple[int, int, int]] = field(default_factory=list)
    weighted_successes: float = 0.0
    weighted_failures: float = 0.0

    @property
    def pool_size(self) -> int:
        return int(self.mus.size)

    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


def init_calibrator(
    rng: np.random.Generator,
    pool_size: int = DEFAULT_POOL_SIZE,
    mu_loc: float = DEFAULT_MU_LOC,
    mu_scale: float = DEFAULT_MU_SCALE,
    s_loc: float = DEFAULT_S_LOC,
    s_scale: float = DEFAULT_S_SCALE,
    s_floor: float = DEFAULT_S_FLOOR,
    p_target: float = 0.5,
    ess_threshold: Optional[float] = None,
) -> CalibratorState:
    """Draw the candidate pool from the Gaussian prior on (mu, s).

    s draws are reflected to positive and floored at s_floor so every
    candidate curve has a positive, grid-meaningful scale. The default ESS
    threshold is half the pool size.
    """
    if pool_size < 1:
        raise ConfigError("pool_size must be >= 1")
    if not 0.0 < p_target < 1.0:
        raise ConfigError("p_target must lie in (0, 1)")
    if s_floor <= 0:
        raise ConfigError("s_floor must be > 0")
    mus = rng.normal(mu_loc, mu_scale, size=pool_size)
    ss = np.maximum(np.abs(rng.normal(s_loc, s_scale, size=pool_size)), s_floor)
    log_weights = np.full(pool_size, -np.log(pool_size))
    return CalibratorState(
        mus=mus,
        ss=ss,
        log_weights=log_weights,
        p_target=p_target,
        ess_threshold=float(ess_threshold) if ess_threshold is not None else pool_size / 2,
    )


def effective_sample_size(weights: np.ndarray) -> float:
    """ESS = 1 / sum(w^2) of a normalized weight vector."""
    return float(1.0 / np.sum(np.square(weights)))


def thompson_sample_difficulty(
    calibrator: CalibratorState, rng: np.random.Generator
) -> Tuple[int, int, float]:
    """Draw a candidate by posterior weight and convert it to a difficulty.

    Returns (difficulty, candidate index, effective target pass rate). With
    probability explore_prob the target is drawn uniformly from
    p_target +/- explore_halfwidth. The real-valued difficulty
    mu_j + s_j * ln((1 - p)/p) is rounded half-to-even onto the integer
    grid. At the default p_target = 0.5 the pre-rounding value is exactly
    mu_j, the maximum-information point of the logistic curve.
    """
    if calibrator.pool_size == 0:
        raise InvalidPool("empty candidate pool")
    norm = logsumexp(calibrator.log_weights)
    if not np.isfinite(norm):
        raise InvalidPool("all candidate weights are zero")
    w = np.exp(calibrator.log_weights - norm)
    j = int(rng.choice(calibrator.pool_size, p=w / w.sum()))
    target = calibrator.p_target
    if calibrator.explore_prob > 0 and rng.random() < calibrator.explore_prob:
        target = float(
            rng.uniform(
                calibrator.p_target - calibrator.explore_halfwidth,
                calibrator.p_target + calibrator.explore_halfwidth,
            )
        )
    d_real = calibrator.mus[j] + calibrator.ss[j] * np.log((1.0 - target) / target)
    return int(round(float(d_real))), j, target


def log_binomial_pmf(k, G, mu, s, d):
    """log Binomial(k; G, sigma(-(d - mu)/s)), broadcasting over all inputs.

    Computed with gammaln and log_expit so extreme curves stay finite.
    """
    k = np.asarray(k, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    z = -(np.asarray(d, dtype=np.float64) - mu) / s
    return (
        gammaln(G + 1.0)
        - gammaln(k + 1.0)
        - gammaln(G - k + 1.0)
        + k * log_expit(z)
        + (G - k) * log_expit(-z)
    )


def posterior_update(calibrator: CalibratorState, d: int, k: int, G: int) -> np.ndarray:
    """Multiply weights by the observation likelihood and renormalize.

    Runs in log space; returns the new normalized weights. The raw
    observation is appended to the calibrator's history.
    """
    if not 0 <= k <= G:
        raise ConfigError(f"need 0 <= k <= G, got k={k} G={G}")
    calibrator.log_weights = calibrator.log_weights + log_binomial_pmf(
        k, G, calibrator.mus, calibrator.ss, d
    )
    calibrator.log_weights -= logsumexp(calibrator.log_weights)
    calibrator.history.append((int(d), int(k), int(G)))
    return calibrator.weights()


def systematic_resample_indices(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Low-variance systematic resampling: counts have expectation M * w."""
    m = weights.size
    positions = (rng.random() + np.arange(m)) / m
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


def ess_resample(calibrator: CalibratorState, rng: np.random.Generator) -> bool:
    """Resample the pool when ESS falls below the threshold.

    Resamples M candidates with replacement proportionally to the weights
    (systematic scheme), folds the observation history into the
    recency-weighted success/failure aggregates, and resets the weights to
    uniform. Returns True when a resample happened.
    """
    w = calibrator.weights()
    if effective_sample_size(w) >= calibrator.ess_threshold:
        return False
    idx = systematic_resample_indices(w, rng)
    calibrator.mus = calibrator.mus[idx]
    calibrator.ss = calibrator.ss[idx]
    calibrator.log_weights = np.full(calibrator.pool_size, -np.log(calibrator.pool_size))
    n = len(calibrator.history)
    decay = calibrator.recency
    successes = sum(decay ** (n - 1 - i) * k for i, (_, k, _) in enumerate(calibrator.history))
    failures = sum(decay ** (n - 1 - i) * (g - k) for i, (_, k, g) in enumerate(calibrator.history))
    calibrator.weighted_successes = successes + decay**n * calibrator.weighted_successes
    calibrator.weighted_failures = failures + decay**n * calibrator.weighted_failures
    calibrator.history = []
    return True


def weighted_env_sampler(sample_counts: Dict[str, int], rng: np.random.Generator) -> str:
    """Pick an environment with probability proportional to 1/(1 + count).

    Least-sampled environments get the highest weight; selection
    probability is strictly decreasing in the sample count.
    """
    if not sample_counts:
        raise ConfigError("need at least one environment")
    ids = sorted(sample_counts)
    weights = np.array([1.0 / (1.0 + sample_counts[e]) for e in ids])
    weights /= weights.sum()
    return ids[int(rng.choice(len(ids), p=weights))]


@dataclass
class SyntheticEnv:
    """Logistic solve-rate oracle with its own seeded rng.

    The true pass rate at difficulty d is sigma(-(d - mu_star)/s_star).
    tolerance is the numeric verification tolerance the environment would
    hand to verify_reward.
    """

    mu_star: float
    s_star: float
    rng: np.random.Generator
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.s_star <= 0:
            raise ConfigError("s_star must be > 0")

    def solve_rate(self, d: float) -> float:
        return float(expit(-(d - self.mu_star) / self.s_star))

    def rollout_group(self, d: int, G: int) -> int:
        """Number of solved rollouts in a size-G group at difficulty d."""
        return int(self.rng.binomial(G, self.solve_rate(d)))


@dataclass(frozen=True)
class TrajectoryRow:
    iteration: int
    difficulty: int
    candidate: int
    effective_target: float
    successes: int
    group_size: int
    pass_rate: float
    ess: float
    resampled: bool


def simulate_calibration(
    env: SyntheticEnv,
    calibrator: CalibratorState,
    iterations: int,
    G: int,
    rng: np.random.Generator,
) -> List[TrajectoryRow]:
    """Closed-loop calibration against a synthetic environment.

    Each iteration Thompson-samples a difficulty, draws a group outcome
    from the environment, updates the posterior, and resamples on low ESS.
    The Thompson rng and the environment rng are independent streams.
    """
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    rows: List[TrajectoryRow] = []
    for it in range(iterations):
        d, j, target = thompson_sample_difficulty(calibrator, rng)
        k = env.rollout_group(d, G)
        weights = posterior_update(calibrator, d, k, G)
        ess = effective_sample_size(weights)
        resampled = ess_resample(calibrator, rng)
        rows.append(
            TrajectoryRow(
                iteration=it,
                difficulty=d,
                candidate=j,
                effective_target=target,
                successes=k,
                group_size=G,
                pass_rate=k / G,
                ess=ess,
                resampled=resampled,
            )
        )
    return rows
