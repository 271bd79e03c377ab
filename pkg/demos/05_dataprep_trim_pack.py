"""Answer-preserving trimming and best-fit-decreasing sequence packing.

Supervised traces carry long reasoning sections wrapped in think
delimiters. When a trace must fit a smaller context window, answers are
sacred and reasoning is expendable, in a fixed order: trim the LAST think
section to a word prefix first, drop OLDER think sections whole only if
that is not enough, and drop the sample only when the answers alone
overflow. Trimmed traces are then packed into fixed-size training windows.
"""

from recagg.core import THINK_CLOSE, THINK_OPEN
from recagg.dataprep import Conversation, Turn, ap_trim, bfd_pack, retrim_stage

conversation = Conversation(turns=[
    Turn("user", "Prove that 17 is prime."),
    Turn("assistant",
         f"{THINK_OPEN}check divisors two three five up to the square root "
         f"none divide seventeen{THINK_CLOSE}17 has no divisor below its "
         f"square root, so it is prime."),
    Turn("user", "Now 19."),
    Turn("assistant",
         f"{THINK_OPEN}same sieve idea two three five none divide nineteen "
         f"so it holds{THINK_CLOSE}19 is prime by the same argument."),
])

print("== one conversation, shrinking budgets ==")
for budget in (200, 40, 30, 24, 10):
    outcome = ap_trim(conversation, budget)
    print(f"budget {budget:>3}: {outcome.variant:<18} "
          f"tokens {outcome.token_count if outcome.conversation else '-'}")

# TailTrimmed keeps a maximal word prefix of the most recent think section;
# the answer text survives byte for byte.
trimmed = ap_trim(conversation, 30)
last = trimmed.conversation.turns[-1].content
print(f"\nlast turn at budget 30:\n  {last}")

# A whole stage of samples re-trimmed for several budgets at once. Parse
# failures (unbalanced delimiters) are collected per sample, never fatal.
broken = Conversation(turns=[Turn("assistant", f"{THINK_CLOSE}backwards{THINK_OPEN}")])
result = retrim_stage([conversation, broken], budgets=[24, 200])
print("\n== retrim_stage over two budgets ==")
for budget, outcomes in result.per_budget.items():
    variants = [o.variant if o else "ParseError" for o in outcomes]
    print(f"budget {budget:>3}: {variants}")
print(f"errors: {[(b, i, msg[:40]) for b, i, msg in result.errors]}")

# Packing: best-fit decreasing fills training windows tightly. Each bin is
# a list of sample indices whose lengths sum to at most the window.
lengths = [1700, 900, 2100, 350, 1200, 640, 2048, 512, 1024, 96]
bins = bfd_pack(lengths, window=4096)
print("\n== best-fit decreasing packing into 4096-token windows ==")
for index, contents in enumerate(bins):
    used = sum(lengths[i] for i in contents)
    print(f"bin {index}: samples {contents}, {used}/4096 tokens")
