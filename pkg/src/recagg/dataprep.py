"""Answer-preserving trimming of long-reasoning conversations and
token-window packing of training examples.

Trimming never touches answer sections: it first truncates the tail of the
last reasoning block (keeping a maximal prefix that fits the budget), then
drops earlier reasoning blocks oldest-first, and finally drops the sample
when the answers alone exceed the budget.

Token counting is injected; the default counts whitespace words. The
think delimiters are structural and are never passed to the counter.
"""

import json
import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .core import THINK_CLOSE, THINK_OPEN, whitespace_count
from .errors import ConfigError, Oversized, ParseError

VARIANTS = ("Unchanged", "TailTrimmed", "PriorThinkDropped", "Dropped")


@dataclass(frozen=True)
class Turn:
    role: str
    content: str


@dataclass(frozen=True)
class Conversation:
    turns: Tuple[Turn, ...]

    @classmethod
    def from_dict(cls, obj: Dict) -> "Conversation":
        return cls(turns=tuple(Turn(role=t["role"], content=t["content"]) for t in obj["turns"]))

    def to_dict(self) -> Dict:
        return {"turns": [{"role": t.role, "content": t.content} for t in self.turns]}


@dataclass(frozen=True)
class TrimOutcome:
    """Result of ap_trim: variant, trimmed conversation (absent when
    Dropped), and the token count of the result (for Dropped, the count of
    the answers alone that failed to fit)."""

    variant: str
    conversation: Optional[Conversation]
    token_count: int


@dataclass(frozen=True)
class _TurnPieces:
    """One turn split around its think block, preserving raw segments."""

    role: str
    head: str
    think: Optional[str]
    tail: str

    def render(self, think_text: Optional[str], keep_delims: bool) -> str:
        if think_text is None:
            if self.think is None:
                return self.head + self.tail
            if keep_delims:
                return self.head + THINK_OPEN + THINK_CLOSE + self.tail
            return self.head + self.tail
        return self.head + THINK_OPEN + think_text + THINK_CLOSE + self.tail


def _split_turn(turn: Turn) -> _TurnPieces:
    content = turn.content
    opens = content.count(THINK_OPEN)
    closes = content.count(THINK_CLOSE)
    if opens == 0 and closes == 0:
        return _TurnPieces(role=turn.role, head=content, think=None, tail="")
    if opens != 1 or closes != 1:
        raise ParseError(f"turn has {opens} open and {closes} close think delimiters; expected one balanced block")
    open_at = content.index(THINK_OPEN)
    close_at = content.index(THINK_CLOSE)
    if close_at < open_at:
        raise ParseError("think close delimiter precedes the open delimiter")
    return _TurnPieces(
        role=turn.role,
        head=content[:open_at],
        think=content[open_at + len(THINK_OPEN):close_at],
        tail=content[close_at + len(THINK_CLOSE):],
    )


_WORD_RE = re.compile(r"\S+")


def _word_prefix(text: str, k: int) -> str:
    """The character prefix of text ending after its k-th word (k=0 -> '')."""
    if k <= 0:
        return ""
    end = 0
    for i, match in enumerate(_WORD_RE.finditer(text)):
        end = match.end()
        if i + 1 == k:
            break
    return text[:end]


def ap_trim(
    conversation: Conversation,
    budget: int,
    counter: Callable[[str], int] = whitespace_count,
) -> TrimOutcome:
    """Answer-preserving trim of one conversation to a token budget.

    Steps, in order: keep unchanged when it already fits; trim the tail of
    the last reasoning block to the maximal retained prefix that fits; drop
    earlier reasoning blocks oldest-first (keeping their answers) and
    re-trim; drop the sample when the answers alone exceed the budget.

    The counter sees content pieces only (never the think delimiters), so
    chat framing can be charged by the injected counter itself.
    """
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    pieces = [_split_turn(t) for t in conversation.turns]
    think_indices = [i for i, p in enumerate(pieces) if p.think is not None]

    def total(drop_before: int, last_think_text: Optional[str]) -> int:
        """Token count with the oldest drop_before think blocks removed and
        the last think block replaced by last_think_text."""
        n = 0
        for i, piece in enumerate(pieces):
            n += counter(piece.head) + counter(piece.tail)
            if piece.think is None:
                continue
            rank = think_indices.index(i)
            if think_indices and i == think_indices[-1]:
                if last_think_text is not None:
                    n += counter(last_think_text)
            elif rank >= drop_before:
                n += counter(piece.think)
        return n

    full = total(0, pieces[think_indices[-1]].think if think_indices else None)
    if full <= budget:
        return TrimOutcome(variant="Unchanged", conversation=conversation, token_count=full)
    if not think_indices:
        return TrimOutcome(variant="Dropped", conversation=None, token_count=full)

    answers_only = total(len(think_indices), "")
    if answers_only > budget:
        return TrimOutcome(variant="Dropped", conversation=None, token_count=answers_only)

    last_i = think_indices[-1]
    last_think = pieces[last_i].think
    words = len(_WORD_RE.findall(last_think))
    prior_count = len(think_indices) - 1
    for drop in range(prior_count + 1):
        if total(drop, "") > budget:
            continue
        lo, hi = 0, words
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if total(drop, _word_prefix(last_think, mid)) <= budget:
                lo = mid
            else:
                hi = mid - 1
        retained = _word_prefix(last_think, lo)
        rebuilt = []
        for i, piece in enumerate(pieces):
            if piece.think is None:
                rebuilt.append(Turn(piece.role, piece.render(None, keep_delims=False)))
            elif i == last_i:
                rebuilt.append(Turn(piece.role, piece.render(retained, keep_delims=True)))
            elif think_indices.index(i) < drop:
                rebuilt.append(Turn(piece.role, piece.render(None, keep_delims=False)))
            else:
                rebuilt.append(Turn(piece.role, piece.render(piece.think, keep_delims=True)))
        variant = "PriorThinkDropped" if drop > 0 else "TailTrimmed"
        out = Conversation(turns=tuple(rebuilt))
        return TrimOutcome(variant=variant, conversation=out, token_count=total(drop, retained))
    return TrimOutcome(variant="Dropped", conversation=None, token_count=answers_only)


@dataclass
class RetrimResult:
    """Per-budget outcomes plus collected per-sample errors."""

    per_budget: Dict[int, List[Optional[TrimOutcome]]]
    errors: List[Tuple[int, int, str]]  # (budget, sample index, message)


def retrim_stage(
    dataset: Sequence[Conversation],
    budgets: Sequence[int],
    counter: Callable[[str], int] = whitespace_count,
) -> RetrimResult:
    """Independently trim every sample at every budget.

    Budgets must be ascending. Per-sample parse failures are collected in
    the result rather than aborting the sweep.
    """
    if not budgets:
        raise ConfigError("need at least one budget")
    if list(budgets) != sorted(budgets):
        raise ConfigError("budgets must be ascending")
    per_budget: Dict[int, List[Optional[TrimOutcome]]] = {int(b): [] for b in budgets}
    errors: List[Tuple[int, int, str]] = []
    for b in budgets:
        for idx, conv in enumerate(dataset):
            try:
                per_budget[int(b)].append(ap_trim(conv, int(b), counter))
            except ParseError as exc:
                per_budget[int(b)].append(None)
                errors.append((int(b), idx, str(exc)))
    return RetrimResult(per_budget=per_budget, errors=errors)


def bfd_pack(lengths: Sequence[int], window: int) -> List[List[int]]:
    """Best-fit-decreasing bin packing of whole examples into token windows.

    Examples are sorted by descending length and each is placed into the
    fullest bin that still fits (ties to the lowest bin index), else a new
    bin. No example is split. Returns bins of original indices.
    """
    if window < 1:
        raise ConfigError("window must be >= 1")
    for i, length in enumerate(lengths):
        if length < 0:
            raise ConfigError(f"example {i} has negative length")
        if length > window:
            raise Oversized(f"example {i} has {length} tokens, window is {window}")
    order = sorted(range(len(lengths)), key=lambda i: (-lengths[i], i))
    bins: List[List[int]] = []
    loads: List[int] = []
    for i in order:
        best = -1
        best_load = -1
        for b, load in enumerate(loads):
            if load + lengths[i] <= window and load > best_load:
                best = b
                best_load = load
        if best < 0:
            bins.append([i])
            loads.append(lengths[i])
        else:
            bins[best].append(i)
            loads[best] += lengths[i]
    return bins


def load_conversations_jsonl(path: str) -> List[Conversation]:
    """Read conversations from JSONL: {"turns": [{"role", "content"}, ...]}."""
    out: List[Conversation] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(Conversation.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: invalid conversation record: {exc}") from exc
    return out
