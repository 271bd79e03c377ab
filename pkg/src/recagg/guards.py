"""Rollout-quality monitors and reward gates.

Implements the streaming compressibility canary (repetition detector), the
rare-token fraction monitor, the gibberish token mask, min-p filtering with
a replay hook, normalized load entropy, and the reward gate that zeroes
flagged rollouts.

Guards return data only; they never adjust optimizer or sampler settings.
"""

import functools
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, InvalidDistribution, InvalidToken, Unsupported

DEFAULT_VOCAB_SIZE = 262272
DEFAULT_RARE_CUTOFFS = (0.10, 0.05, 0.02, 0.01)


@dataclass(frozen=True)
class GuardConfig:
    """Settings for the rollout monitors.

    window_bits is the raw-deflate window exponent (10 means a 1024-byte
    LZ77 window); chunk_size is in tokens and defaults to 256, which at 4
    bytes per token id matches the window size.
    """

    chunk_size: int = 256
    window_bits: int = 10
    deflate_level: int = 1
    tau_repeat: float = 0.05
    rare_cutoffs: Tuple[float, ...] = DEFAULT_RARE_CUTOFFS
    vocab_size: int = DEFAULT_VOCAB_SIZE

    def validate(self) -> "GuardConfig":
        if self.chunk_size < 2:
            raise ConfigError("chunk_size must be >= 2")
        if not 0.0 < self.tau_repeat < 1.0:
            raise ConfigError("tau_repeat must lie in (0, 1)")
        if any(not 0.0 < c < 1.0 for c in self.rare_cutoffs):
            raise ConfigError("rare cutoffs must lie in (0, 1)")
        if not 9 <= self.window_bits <= 15:
            raise ConfigError("window_bits must lie in [9, 15]")
        if not 1 <= self.deflate_level <= 9:
            raise ConfigError("deflate_level must lie in [1, 9]")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        return self


@dataclass
class GuardReport:
    """Outcome of the monitors for one rollout."""

    chunk_ratios: List[float]
    flagged: bool
    rare_fractions: Dict[float, float] = field(default_factory=dict)
    gibberish_flags: Tuple[bool, ...] = ()
    gate_zeroed: bool = False


def encode_token_bytes(token_ids: Sequence[int]) -> bytes:
    """Fixed 4-byte little-endian encoding of token ids."""
    return struct.pack(f"<{len(token_ids)}I", *token_ids)


@functools.lru_cache(maxsize=None)
def flush_overhead(deflate_level: int, window_bits: int) -> int:
    """Byte cost of one sync flush on an empty chunk, measured once.

    A sync flush emits an empty stored block; its length is constant for a
    given compressor parameterization, so it is measured on an identically
    configured stream and subtracted from every chunk's compressed size.
    """
    comp = zlib.compressobj(deflate_level, zlib.DEFLATED, -window_bits)
    return len(comp.compress(b"") + comp.flush(zlib.Z_SYNC_FLUSH))


def chunk_spans(n_tokens: int, chunk_size: int) -> List[Tuple[int, int]]:
    """Token index spans of each chunk; a final short chunk is merged into
    its predecessor."""
    if n_tokens <= 0:
        return []
    spans = []
    start = 0
    while start < n_tokens:
        end = min(start + chunk_size, n_tokens)
        spans.append((start, end))
        start = end
    if len(spans) > 1 and spans[-1][1] - spans[-1][0] < chunk_size:
        last = spans.pop()
        prev = spans.pop()
        spans.append((prev[0], last[1]))
    return spans


def compress_scan(token_ids: Sequence[int], config: GuardConfig = GuardConfig()) -> GuardReport:
    """Streaming compressibility canary.

    The id stream is encoded as 4-byte little-endian words and fed through a
    single stateful raw-deflate compressor in chunks of chunk_size tokens
    (final short chunk merged into its predecessor), with a sync flush after
    each chunk. Each chunk's ratio is (compressed bytes - flush overhead) /
    raw bytes; the rollout is flagged when any chunk ratio falls below
    tau_repeat. Because the compressor state persists across chunks, a chunk
    that verbatim-repeats recent content compresses to almost nothing while
    earlier, novel chunks do not.

    Sequences shorter than 2 tokens yield a single-chunk degenerate report
    that is never flagged.
    """
    config.validate()
    ids = list(token_ids)
    if not ids:
        raise ConfigError("token sequence must be non-empty")
    overhead = flush_overhead(config.deflate_level, config.window_bits)
    comp = zlib.compressobj(config.deflate_level, zlib.DEFLATED, -config.window_bits)
    ratios: List[float] = []
    for start, end in chunk_spans(len(ids), config.chunk_size):
        raw = encode_token_bytes(ids[start:end])
        compressed = comp.compress(raw) + comp.flush(zlib.Z_SYNC_FLUSH)
        ratios.append((len(compressed) - overhead) / len(raw))
    if len(ids) < 2:
        return GuardReport(chunk_ratios=ratios, flagged=False)
    flagged = any(r < config.tau_repeat for r in ratios)
    return GuardReport(chunk_ratios=ratios, flagged=flagged)


def rare_token_fraction(
    token_ids: Sequence[int],
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    cutoffs: Sequence[float] = DEFAULT_RARE_CUTOFFS,
) -> Dict[float, float]:
    """Fraction of ids in the top x of the id range, for each cutoff x.

    An id counts toward cutoff x when id >= ceil((1 - x) * vocab_size).
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size == 0:
        raise ConfigError("token sequence must be non-empty")
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise InvalidToken(f"token ids must lie in [0, {vocab_size})")
    out: Dict[float, float] = {}
    for x in cutoffs:
        threshold = int(np.ceil((1.0 - x) * vocab_size))
        out[float(x)] = float(np.mean(ids >= threshold))
    return out


def gibberish_mask(
    logprobs: Sequence[float],
    token_ids: Sequence[int],
    vocab_size: int = DEFAULT_VOCAB_SIZE,
) -> Tuple[bool, ...]:
    """Per-token gibberish flags.

    A token is flagged when its sampled logprob is more than 2 nats below
    the uniform distribution's log(1/V) and its id falls in the top-10%
    region of the id range.
    """
    if logprobs is None:
        raise Unsupported("backend did not supply per-token logprobs")
    lp = np.asarray(logprobs, dtype=np.float64)
    ids = np.asarray(token_ids, dtype=np.int64)
    if lp.shape != ids.shape:
        raise ConfigError("logprobs and token_ids must have equal length")
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise InvalidToken(f"token ids must lie in [0, {vocab_size})")
    threshold = np.log(1.0 / vocab_size) - 2.0
    top_region = int(np.ceil(0.90 * vocab_size))
    flags = (lp < threshold) & (ids >= top_region)
    return tuple(bool(f) for f in flags)


def minp_filter(probabilities: Sequence[float], min_p: float) -> Tuple[Tuple[int, ...], np.ndarray]:
    """Min-p sampling filter: keep entries with p >= min_p * max(p), renormalize.

    Returns (kept index tuple, renormalized probabilities over the kept
    set). The kept set is recorded so serving-side min-p decisions can be
    replayed and compared.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    if p.size == 0:
        raise InvalidDistribution("empty distribution")
    if np.any(p < 0):
        raise InvalidDistribution("negative probability entry")
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise InvalidDistribution(f"probabilities sum to {p.sum()}, not 1")
    if min_p < 0:
        raise ConfigError("min_p must be >= 0")
    threshold = min_p * float(p.max())
    kept = np.flatnonzero(p >= threshold)
    renormalized = p[kept] / p[kept].sum()
    return tuple(int(i) for i in kept), renormalized


def normalized_entropy(load_fractions: Sequence[float]) -> float:
    """Entropy of a load distribution over E bins, normalized by ln E.

    Zero entries contribute zero (0 * ln 0 = 0). Result lies in [0, 1].
    """
    p = np.asarray(load_fractions, dtype=np.float64)
    if p.size < 2:
        raise InvalidDistribution("need at least 2 bins")
    if np.any(p < 0):
        raise InvalidDistribution("negative load fraction")
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise InvalidDistribution(f"load fractions sum to {p.sum()}, not 1")
    nonzero = p[p > 0]
    entropy = -float(np.sum(nonzero * np.log(nonzero)))
    return entropy / float(np.log(p.size))


def reward_gate(report: GuardReport, task_reward: float) -> float:
    """Zero the task reward of a flagged rollout, regardless of verifier outcome."""
    if report.flagged:
        report.gate_zeroed = True
        return 0.0
    return float(task_reward)
