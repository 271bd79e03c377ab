"""Pure numeric kernels of the RL algorithmic spine.

Group-relative advantage estimators, the difficulty-scaled length reward,
sequence-mean-over-token-sum loss aggregation, the binary trust-region
mask, signed-log-ratio length-bias diagnostics, the router load-balance
bias gradient, and token-budget microbatch packing with rank balancing.

All functions are pure and operate on plain sequences or numpy arrays.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DegenerateGroup, InvalidDistribution, OversizedRollout

MICROBATCH_TOKEN_BUDGET = 131072
DEFAULT_GROUP_SIZE = 16
DEFAULT_MAX_RESPONSE_TOKENS = 81920


@dataclass
class RolloutGroup:
    """One prompt's group of G rollouts with optional per-token streams."""

    prompt_id: str
    rewards: List[float]
    lengths: List[int]
    token_losses: Optional[List[List[float]]] = None
    divergences: Optional[List[List[float]]] = None
    logratios: Optional[List[List[float]]] = None
    chunk_lags: Optional[List[List[int]]] = None

    def validate(self) -> "RolloutGroup":
        if len(self.rewards) < 2:
            raise ConfigError("a rollout group needs G >= 2 rollouts")
        if len(self.lengths) != len(self.rewards):
            raise ConfigError("rewards and lengths must have equal length")
        if any(l < 1 for l in self.lengths):
            raise ConfigError("rollout lengths must be >= 1")
        return self


def maxrl_advantage(rewards: Sequence[float]) -> Tuple[np.ndarray, bool]:
    """Mean-normalized advantage: (r_i - rbar) / rbar.

    Returns (advantages, informative). A group with all rewards equal and
    nonzero yields zero advantages and informative=False; a group with
    rbar = 0 raises DegenerateGroup (dynamic sampling drops it upstream).
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ConfigError("need G >= 2 rewards")
    rbar = float(r.mean())
    if rbar == 0.0:
        raise DegenerateGroup("group mean reward is zero")
    adv = (r - rbar) / rbar
    informative = bool(np.any(r != r[0]))
    return adv, informative


def grpo_advantage(rewards: Sequence[float]) -> np.ndarray:
    """Std-normalized advantage: (r_i - rbar) / population std."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ConfigError("need G >= 2 rewards")
    std = float(r.std())
    if std == 0.0:
        raise DegenerateGroup("group reward standard deviation is zero")
    return (r - r.mean()) / std


@dataclass
class LengthRewardParams:
    """Settings for the group-relative, difficulty-scaled length reward."""

    l_max: int = DEFAULT_MAX_RESPONSE_TOKENS
    tol_tokens: int = 256
    tol_acc: float = 0.1
    p_star: float = 0.0
    c: float = 1.0

    def validate(self) -> "LengthRewardParams":
        if self.l_max <= 0:
            raise ConfigError("l_max must be > 0")
        if not 0.0 <= self.tol_acc <= 1.0:
            raise ConfigError("tol_acc must lie in [0, 1]")
        if self.c < 0:
            raise ConfigError("c must be >= 0")
        if self.tol_tokens < 0:
            raise ConfigError("tol_tokens must be >= 0")
        return self


def length_reward(
    rewards: Sequence[float],
    lengths: Sequence[int],
    params: LengthRewardParams = LengthRewardParams(),
) -> np.ndarray:
    """Additive length bonus Delta r per rollout.

    lambda_i = 1/2 - clamp((l_i - l_min)/(l_max - l_min), 0, 1) with l_min
    the shortest correct response length; rollouts within tol_tokens of
    l_min keep the full 1/2 bonus. The gate requires the group solve rate p
    to exceed both p* - tol_acc and 1/G (at least two correct responses for
    binary rewards), and applies only to correct rollouts. The bonus is
    scaled by c * p, attenuating the penalty on hard problems.
    """
    params.validate()
    r = np.asarray(rewards, dtype=np.float64)
    l = np.asarray(lengths, dtype=np.float64)
    if r.size < 2 or r.shape != l.shape:
        raise ConfigError("need G >= 2 rewards with matching lengths")
    G = r.size
    p = float(r.mean())
    correct = r == 1.0
    if not np.any(correct):
        return np.zeros(G)
    l_min = float(l[correct].min())
    if params.l_max > l_min:
        frac = (l - l_min) / (params.l_max - l_min)
    else:
        frac = np.where(l <= l_min, 0.0, 1.0)
    lam = 0.5 - np.clip(frac, 0.0, 1.0)
    lam_tilde = np.where(l <= l_min + params.tol_tokens, 0.5, lam)
    gate = (p > params.p_star - params.tol_acc) and (p > 1.0 / G)
    m = correct.astype(np.float64) * (1.0 if gate else 0.0)
    return params.c * p * m * lam_tilde


def combined_advantage(rewards: Sequence[float], delta_r: Sequence[float]) -> np.ndarray:
    """Advantage with the length bonus in the numerator only.

    The denominator rbar is computed from the unmodified task rewards so
    the bonus cannot rescale the whole group.
    """
    r = np.asarray(rewards, dtype=np.float64)
    d = np.asarray(delta_r, dtype=np.float64)
    if r.size < 2 or r.shape != d.shape:
        raise ConfigError("need G >= 2 rewards with matching bonuses")
    rbar = float(r.mean())
    if rbar == 0.0:
        raise DegenerateGroup("group mean reward is zero")
    return (r + d - rbar) / rbar


def smtsn_loss(token_losses: Sequence[Sequence[float]]) -> float:
    """Sequence-mean over token-sum-norm: mean over rollouts of token-loss sums.

    An empty rollout contributes a zero sum. Contrast with the naive
    per-token mean, which weights rollouts by their length.
    """
    if len(token_losses) == 0:
        raise ConfigError("need at least one rollout")
    sums = [math.fsum(t) for t in token_losses]
    return float(np.mean(sums))


def binary_tv_mask(divergences: Sequence[float], delta: float = 0.1) -> np.ndarray:
    """Per-token keep mask: keep while the policy-divergence estimate <= delta.

    The boundary is kept ("exceeds" is strict). The divergence estimator is
    caller-supplied; see tv_divergence_proxy for a single-sample stand-in.
    """
    d = np.asarray(divergences, dtype=np.float64)
    if d.size and float(d.min()) < 0:
        raise ConfigError("divergence estimates must be >= 0")
    return d <= delta


def tv_divergence_proxy(ratios: Sequence[float]) -> np.ndarray:
    """Single-sample divergence proxy 0.5 * |ratio - 1|.

    A proxy only: the true per-token total-variation estimate depends on
    full next-token distributions, which callers must supply when available.
    """
    r = np.asarray(ratios, dtype=np.float64)
    return 0.5 * np.abs(r - 1.0)


def k1_sequence_adjustment(logratios: Sequence[float], reward: float, beta_kl: float) -> float:
    """Sequence-level reward adjustment A = r - beta_kl * sum(l_t).

    Diagnostic for the length-bias mechanism: negative signed log-ratios on
    stale tokens create a positive reward offset that grows with length.
    """
    s_seq = math.fsum(logratios)
    return float(reward) - beta_kl * s_seq


def chunk_local_adjustment(
    chunk_logratios: Sequence[Sequence[float]],
    lags: Sequence[int],
    a_reward: float,
    beta_kl: float,
    rescale: bool = True,
) -> List[float]:
    """Chunk-local signed-log-ratio isolation with optional staleness rescale.

    Each chunk c gets A_c = a_reward - beta_kl * S_c, with S_c the chunk's
    signed-log-ratio sum. With rescale on, the chunk term is divided by
    max(1, lag_c) so stale chunks cannot dominate the sequence adjustment.
    """
    if len(chunk_logratios) != len(lags):
        raise ConfigError("one lag per chunk required")
    out = []
    for chunk, lag in zip(chunk_logratios, lags):
        s_c = math.fsum(chunk)
        term = beta_kl * s_c
        if rescale:
            term /= max(1, int(lag))
        out.append(a_reward - term)
    return out


def router_bias_gradient(load_fractions: Sequence[float]) -> np.ndarray:
    """Gradient p_e - 1/E of the load-balance bias update; sums to zero."""
    p = np.asarray(load_fractions, dtype=np.float64)
    if p.size < 1:
        raise InvalidDistribution("empty load distribution")
    if np.any(p < 0):
        raise InvalidDistribution("negative load fraction")
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise InvalidDistribution(f"load fractions sum to {p.sum()}, not 1")
    return p - 1.0 / p.size


def pack_microbatches(
    lengths: Sequence[int],
    budget: int = MICROBATCH_TOKEN_BUDGET,
    ranks: int = 1,
) -> List[List[List[int]]]:
    """Assign rollouts to ranks and split each rank's share into microbatches.

    Rollouts are taken in descending length order; each goes to the
    currently least-loaded rank (ties to the lowest rank index), then
    first-fit into that rank's microbatches under the token budget. On
    equal lengths the least-loaded rule reduces to round-robin rotation.

    Returns, per rank, a list of microbatches of original rollout indices.
    Deterministic for a fixed input order.
    """
    if ranks < 1:
        raise ConfigError("ranks must be >= 1")
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    for i, length in enumerate(lengths):
        if length < 1:
            raise ConfigError(f"rollout {i} has non-positive length")
        if length > budget:
            raise OversizedRollout(f"rollout {i} has {length} tokens, budget is {budget}")
    order = sorted(range(len(lengths)), key=lambda i: (-lengths[i], i))
    rank_totals = [0] * ranks
    microbatches: List[List[List[int]]] = [[] for _ in range(ranks)]
    micro_loads: List[List[int]] = [[] for _ in range(ranks)]
    for i in order:
        r = min(range(ranks), key=lambda x: (rank_totals[x], x))
        placed = False
        for m, load in enumerate(micro_loads[r]):
            if load + lengths[i] <= budget:
                microbatches[r][m].append(i)
                micro_loads[r][m] += lengths[i]
                placed = True
                break
        if not placed:
            microbatches[r].append([i])
            micro_loads[r].append(lengths[i])
        rank_totals[r] += lengths[i]
    return microbatches


def rank_token_totals(assignment: List[List[List[int]]], lengths: Sequence[int]) -> List[int]:
    """Total tokens per rank for a pack_microbatches assignment."""
    return [sum(lengths[i] for mb in rank for i in mb) for rank in assignment]


class RunningMax:
    """Running maximum tracker for per-source solve rates p*."""

    def __init__(self, initial: float = 0.0):
        self.value = float(initial)

    def update(self, observation: float) -> float:
        self.value = max(self.value, float(observation))
        return self.value
