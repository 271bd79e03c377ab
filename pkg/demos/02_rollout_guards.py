"""Rollout-quality guards: catching degenerate generations before they train.

Reinforcement-learning rollouts sometimes collapse into repeated phrases or
high-id gibberish. Rewarding those samples poisons the policy, so every
rollout passes three cheap monitors first:

  1. a streaming deflate canary that flags chunks compressing far too well,
  2. rare-token fraction tracking over the top slices of the id range,
  3. a per-token gibberish mask from sampled logprobs.
"""

import numpy as np

from recagg.guards import (
    GuardConfig,
    compress_scan,
    gibberish_mask,
    rare_token_fraction,
    reward_gate,
)

config = GuardConfig()  # chunk_size=256 tokens, tau_repeat=0.05
rng = np.random.default_rng(0)
vocab = config.vocab_size

# A healthy rollout: uniform-random ids are incompressible, so every chunk
# ratio sits near 1.0 and nothing is flagged.
healthy = rng.integers(0, vocab, size=2048).tolist()
report = compress_scan(healthy, config)
print("== healthy rollout ==")
print(f"chunk ratios: {[round(r, 3) for r in report.chunk_ratios]}")
print(f"flagged: {report.flagged}")

# A degenerate rollout: after 512 sane tokens the model falls into a
# four-token loop. The compressor state persists across chunks, so the
# looping region compresses to almost nothing while the sane prefix does
# not; only the degenerate chunks dip under tau_repeat.
phrase = rng.integers(0, vocab, size=4).tolist()
looping = healthy[:512] + phrase * 384
report = compress_scan(looping, config)
print("\n== rollout that collapses into a loop ==")
print(f"chunk ratios: {[round(r, 3) for r in report.chunk_ratios]}")
print(f"flagged: {report.flagged}")

# The reward gate zeroes the scalar reward of a flagged rollout so the
# optimizer never reinforces the loop.
print(f"reward 1.0 gates to {reward_gate(report, 1.0)}")

# Rare-token fractions: the top x of the id range should stay quiet. A
# burst of very-high ids is a classic gibberish signature.
gibberish = rng.integers(int(0.98 * vocab), vocab, size=2048).tolist()
print("\n== rare-token fractions ==")
print(f"healthy:   {rare_token_fraction(healthy, vocab)}")
print(f"gibberish: {rare_token_fraction(gibberish, vocab)}")

# Per-token gibberish mask: a token is suspect when its sampled logprob is
# far below the uniform floor log(1/V) AND its id lives in the top decile.
ids = [int(0.95 * vocab), 17, int(0.99 * vocab), 203]
logprobs = [-20.0, -20.0, -1.0, -0.5]
mask = gibberish_mask(logprobs, ids, vocab)
print("\n== gibberish mask ==")
for token, lp, bit in zip(ids, logprobs, mask):
    print(f"id {token:>6}  logprob {lp:>6.1f}  gibberish={bool(bit)}")
