"""Domain types and pure population/tail/prompt mechanics of the
recursive self-aggregation engine.

Everything here is backend-independent: traces are split into reasoning
and answer sections, bounded tails are extracted and carried between
rounds, and aggregation prompts are assembled under an explicit
candidate-state token bound.

Tokens at this layer are whitespace words produced by an injectable
tokenizer; integer ids returned by a backend are stored on the trace for
the guards module but never drive prompt construction.
"""

import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, EmptyTrace, ParseError, PromptOverflow

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"

COMPACTION_MODES = ("tail", "pacore-hybrid")
EARLY_STOP_MODES = ("off", "round-consensus")


def whitespace_split(text: str) -> List[str]:
    """Default tokenizer: one token per whitespace-separated word."""
    return text.split()


def whitespace_count(text: str) -> int:
    """Default token counter paired with whitespace_split."""
    return len(text.split())


@dataclass(frozen=True)
class Problem:
    """One evaluation problem."""

    id: str
    prompt: str
    gold_answer: Optional[str] = None
    verifier_kind: str = "exact-match-normalized"

    def __post_init__(self):
        if not self.prompt:
            raise ConfigError(f"problem {self.id!r}: prompt must be non-empty")


@dataclass
class RsaConfig:
    """The (N, C, T, beta, tau) aggregation plan plus sampling settings.

    N: population size; C: candidates per aggregation prompt; T: number of
    aggregation rounds (T=0 reduces to plain parallel sampling); beta:
    per-rollout decode budget in tokens; tau: carried tail length in tokens;
    final_budget: decode budget of the final round.
    """

    N: int = 16
    C: int = 4
    T: int = 2
    beta: int = 16384
    tau: int = 4096
    final_budget: int = 40960
    compaction: str = "pacore-hybrid"
    seed: int = 0
    max_aggregation_prompt: int = 20480
    early_stop: str = "off"

    def validate(self) -> "RsaConfig":
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if not 1 <= self.C <= self.N:
            raise ConfigError(f"C must satisfy 1 <= C <= N, got C={self.C} N={self.N}")
        if self.T < 0:
            raise ConfigError("T must be >= 0")
        if self.beta < 1:
            raise ConfigError("beta must be >= 1")
        if not 1 <= self.tau <= self.beta:
            raise ConfigError(f"tau must satisfy 1 <= tau <= beta, got tau={self.tau} beta={self.beta}")
        if self.final_budget < 1:
            raise ConfigError("final_budget must be >= 1")
        if self.max_aggregation_prompt < 1:
            raise ConfigError("max_aggregation_prompt must be >= 1")
        if self.compaction not in COMPACTION_MODES:
            raise ConfigError(f"compaction must be one of {COMPACTION_MODES}")
        if self.early_stop not in EARLY_STOP_MODES:
            raise ConfigError(f"early_stop must be one of {EARLY_STOP_MODES}")
        return self

    @classmethod
    def preset(cls, name: str) -> "RsaConfig":
        """Named deployment presets: 'deploy' (16K/4K) and 'capability' (40K/4K)."""
        if name == "deploy":
            return cls(beta=16384, tau=4096)
        if name == "capability":
            return cls(beta=40960, tau=4096)
        raise ConfigError(f"unknown preset {name!r}; expected 'deploy' or 'capability'")


@dataclass(frozen=True)
class CandidateTrace:
    """One generated rollout, split into reasoning and answer sections.

    tokens holds the whitespace tokens of the reasoning followed by the
    answer section; the think delimiters themselves are structural and do
    not appear in tokens. reasoning_span/answer_span index into tokens.
    """

    round: int
    worker: int
    text: str
    tokens: Tuple[str, ...]
    reasoning_span: Tuple[int, int]
    answer_span: Optional[Tuple[int, int]]
    generated_tokens: int
    finish_reason: str
    token_ids: Optional[Tuple[int, ...]] = None
    logprobs: Optional[Tuple[float, ...]] = None
    error: Optional[str] = None

    def reasoning_tokens(self) -> Tuple[str, ...]:
        a, b = self.reasoning_span
        return self.tokens[a:b]

    def answer_tokens(self) -> Tuple[str, ...]:
        if self.answer_span is None:
            return ()
        a, b = self.answer_span
        return self.tokens[a:b]

    def answer_text(self) -> Optional[str]:
        if self.answer_span is None:
            return None
        return " ".join(self.answer_tokens())


def split_reasoning_answer(
    text: str,
    think_open: str = THINK_OPEN,
    think_close: str = THINK_CLOSE,
) -> Tuple[str, Optional[str]]:
    """Split generated text into (reasoning text, answer text or None).

    The answer section exists only when a close delimiter is present and
    non-empty text follows it. Text without any delimiters is treated as
    reasoning in full.
    """
    close_at = text.rfind(think_close)
    if close_at < 0:
        reasoning = text.replace(think_open, " ")
        return reasoning, None
    answer = text[close_at + len(think_close):].strip()
    reasoning = text[:close_at].replace(think_open, " ").replace(think_close, " ")
    return reasoning, (answer if answer else None)


def make_trace(
    round_index: int,
    worker: int,
    text: str,
    generated_tokens: int,
    finish_reason: str,
    split: Callable[[str], List[str]] = whitespace_split,
    token_ids: Optional[Sequence[int]] = None,
    logprobs: Optional[Sequence[float]] = None,
    error: Optional[str] = None,
) -> CandidateTrace:
    """Build a CandidateTrace from raw generated text."""
    reasoning_text, answer_text = split_reasoning_answer(text)
    reasoning = split(reasoning_text)
    answer = split(answer_text) if answer_text is not None else []
    tokens = tuple(reasoning) + tuple(answer)
    nr = len(reasoning)
    answer_span = (nr, nr + len(answer)) if answer else None
    return CandidateTrace(
        round=round_index,
        worker=worker,
        text=text,
        tokens=tokens,
        reasoning_span=(0, nr),
        answer_span=answer_span,
        generated_tokens=generated_tokens,
        finish_reason=finish_reason,
        token_ids=tuple(token_ids) if token_ids is not None else None,
        logprobs=tuple(logprobs) if logprobs is not None else None,
        error=error,
    )


@dataclass(frozen=True)
class Tail:
    """The final tau tokens of a candidate's reasoning trace."""

    tokens: Tuple[str, ...]
    source: Tuple[int, int]  # (round, worker) lineage
    kind: str = "tail"  # "tail" | "answer" | "empty"

    def is_empty(self) -> bool:
        return len(self.tokens) == 0

    def text(self) -> str:
        return " ".join(self.tokens)


CarryState = Tail  # a carry-state is a tail or a compact answer, same shape


def empty_carry(source: Tuple[int, int]) -> Tail:
    """Placeholder carry-state for a failed candidate; keeps |members| = N."""
    return Tail(tokens=(), source=source, kind="empty")


@dataclass(frozen=True)
class Population:
    """The fixed-size set of N carry-states maintained per round."""

    round: int
    members: Tuple[Tail, ...]

    def __post_init__(self):
        if len(self.members) == 0:
            raise ConfigError("population must have at least one member")


def tail_extract(trace: CandidateTrace, tau: int) -> Tail:
    """Return the last min(tau, reasoning length) reasoning tokens."""
    if tau < 1:
        raise ConfigError("tau must be >= 1")
    reasoning = trace.reasoning_tokens()
    if len(reasoning) == 0:
        raise EmptyTrace(f"trace (round {trace.round}, worker {trace.worker}) has no reasoning tokens")
    return Tail(tokens=reasoning[-tau:], source=(trace.round, trace.worker))


def compact_carry(trace: CandidateTrace, config: RsaConfig) -> Tail:
    """Extract the carry-state for one trace under the configured compaction.

    tail mode always carries the bounded reasoning tail. pacore-hybrid
    carries the post-think answer when one exists (clamped to tau tokens so
    the C*tau candidate-state bound holds even for pathological answers) and
    falls back to the tail for unfinished traces.
    """
    if config.compaction == "tail":
        return tail_extract(trace, config.tau)
    if config.compaction == "pacore-hybrid":
        if trace.answer_span is not None:
            answer = trace.answer_tokens()[: config.tau]
            return Tail(tokens=answer, source=(trace.round, trace.worker), kind="answer")
        return tail_extract(trace, config.tau)
    raise ConfigError(f"unknown compaction mode {config.compaction!r}")


def sample_candidates(population: Population, C: int, rng: np.random.Generator) -> List[Tail]:
    """Sample C distinct members uniformly without replacement, order randomized."""
    n = len(population.members)
    if C > n:
        raise ConfigError(f"C={C} exceeds population size {n}")
    picks = rng.permutation(n)[:C]
    return [population.members[int(i)] for i in picks]


@dataclass(frozen=True)
class AggregationPrompt:
    """A rendered aggregation prompt with its token accounting."""

    text: str
    total_tokens: int
    candidate_tokens: int
    overhead_tokens: int


_HEADER = (
    "Aggregation round {t}.\n"
    "You have {c} candidate working notes for this problem, written by prior "
    "attempts. Read them, reconcile any disagreements, and produce one "
    "improved solution of your own. Do not assume any note is correct."
)
_FOOTER = "Work through the problem, then state the final answer."


def build_aggregation_prompt(
    problem: Problem,
    carries: Sequence[Tail],
    config: RsaConfig,
    round_index: int = 1,
    counter: Callable[[str], int] = whitespace_count,
) -> AggregationPrompt:
    """Assemble the aggregation prompt for one new candidate.

    The candidate-state portion is the carried tokens only and is bounded by
    C * tau; headers and framing count toward a fixed overhead term.
    """
    if len(carries) != config.C:
        raise ConfigError(f"expected C={config.C} carries, got {len(carries)}")
    header = _HEADER.format(t=round_index, c=len(carries))
    parts = [problem.prompt, "", header, ""]
    candidate_tokens = 0
    for i, carry in enumerate(carries, start=1):
        parts.append(f"Candidate {i}:")
        parts.append(carry.text() if not carry.is_empty() else "(no notes)")
        parts.append("")
        candidate_tokens += len(carry.tokens)
    parts.append(_FOOTER)
    text = "\n".join(parts)
    total = counter(text)
    overhead = total - counter(problem.prompt) - candidate_tokens
    if total > config.max_aggregation_prompt:
        raise PromptOverflow(
            f"aggregation prompt is {total} tokens, exceeds max_aggregation_prompt={config.max_aggregation_prompt}"
        )
    return AggregationPrompt(
        text=text,
        total_tokens=total,
        candidate_tokens=candidate_tokens,
        overhead_tokens=overhead,
    )


def round0_prompt(problem: Problem) -> str:
    """Round-0 prompts are the bare problem, identical to parallel sampling."""
    return problem.prompt


def last_boxed(text: str) -> Optional[str]:
    """Content of the last \\boxed{...} in text, with balanced braces."""
    marker = "\\boxed{"
    start = text.rfind(marker)
    if start < 0:
        return None
    depth = 1
    i = start + len(marker)
    out = []
    while i < len(text) and depth > 0:
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                break
        out.append(ch)
        i += 1
    if depth != 0:
        return None
    return "".join(out)


_TRAILING_PUNCT = ".,;:!?"


def normalize_answer(text: str) -> str:
    """Canonical answer form: trimmed, punctuation-stripped, numbers canonicalized."""
    s = " ".join(text.split())
    s = s.strip()
    while s and s[-1] in _TRAILING_PUNCT:
        s = s[:-1].rstrip()
    if s.startswith("$") and s.endswith("$") and len(s) > 1:
        s = s[1:-1].strip()
    numeric = s.replace(",", "")
    try:
        return str(int(numeric))
    except ValueError:
        pass
    try:
        f = float(numeric)
    except ValueError:
        return s.casefold()
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def extract_answer(trace: CandidateTrace) -> Optional[str]:
    """Extract the normalized answer from a trace.

    Prefers the last boxed expression in the answer section; falls back to
    the normalized answer section, then (for traces with no think structure)
    the normalized full text.
    """
    region = trace.answer_text()
    if region is None:
        region = trace.text
    boxed = last_boxed(region)
    if boxed is not None:
        return normalize_answer(boxed)
    region = region.strip()
    if not region:
        return None
    return normalize_answer(region)


def load_problems_jsonl(path: str) -> List[Problem]:
    """Read problems from JSONL: {"id", "prompt", "gold_answer"?} per line."""
    problems: List[Problem] = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "id" not in obj or "prompt" not in obj:
                raise ParseError(f"{path}:{lineno}: missing required key 'id' or 'prompt'")
            pid = str(obj["id"])
            if pid in seen:
                raise ParseError(f"{path}:{lineno}: duplicate problem id {pid!r}")
            seen.add(pid)
            problems.append(
                Problem(
                    id=pid,
                    prompt=obj["prompt"],
                    gold_answer=obj.get("gold_answer"),
                    verifier_kind=obj.get("verifier_kind", "exact-match-normalized"),
                )
            )
    return problems
