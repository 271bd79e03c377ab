"""Runs the T-round recursive self-aggregation loop against a backend.

Per problem: round 0 generates N independent rollouts from the bare
problem prompt; each later round samples C carry-states per new candidate,
builds an aggregation prompt, and decodes under the per-round budget; the
final round is scored as the mean correctness over all N candidates
(avg@N semantics, not best-of-N). A token ledger tracks exactly the newly
generated tokens: prompts, prefill, and copied tails are never counted.

Determinism: every request seed derives from (config seed, problem id,
round, worker, attempt), so reports are byte-identical across runs and
concurrency caps.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backends import Backend, GenerationRequest, digest_seed
from .core import (
    CandidateTrace,
    Population,
    Problem,
    RsaConfig,
    Tail,
    build_aggregation_prompt,
    compact_carry,
    empty_carry,
    extract_answer,
    make_trace,
    normalize_answer,
    round0_prompt,
    sample_candidates,
    whitespace_count,
    whitespace_split,
)
from .errors import (
    BackendError,
    EmptyTrace,
    LedgerError,
    PromptOverflow,
    RecaggError,
    StageError,
)

MAX_CANDIDATE_RETRIES = 2


@dataclass
class StageRecord:
    """Per-stage generated-token counts g_{s,j}, one entry per worker."""

    stage: str
    counts: List[int] = field(default_factory=list)
    closed: bool = False


class TokenLedger:
    """Exact accounting of newly generated tokens per stage."""

    def __init__(self):
        self.records: List[StageRecord] = []

    def add_stage(self, stage: str, counts: Sequence[int]) -> None:
        self.records.append(StageRecord(stage=stage, counts=list(counts), closed=True))

    def begin_stage(self, stage: str) -> StageRecord:
        record = StageRecord(stage=stage)
        self.records.append(record)
        return record

    def close_stage(self, record: StageRecord) -> None:
        record.closed = True


def ledger_total(ledger: TokenLedger) -> Tuple[int, Fraction]:
    """Total generated tokens, in both accounting forms.

    Returns (direct double sum, sum over stages of n_s * mean g_s). The
    second form is computed in exact rational arithmetic; the two are equal
    by construction and tests assert it.
    """
    for record in ledger.records:
        if not record.closed:
            raise LedgerError(f"stage {record.stage!r} is still open")
    direct = sum(sum(r.counts) for r in ledger.records)
    by_means = Fraction(0)
    for r in ledger.records:
        n = len(r.counts)
        if n:
            by_means += n * Fraction(sum(r.counts), n)
    return direct, by_means


class ExactMatchVerifier:
    """Compares normalized extracted answers against the problem's gold answer."""

    def verify(self, problem: Problem, answer: Optional[str]) -> bool:
        if answer is None or problem.gold_answer is None:
            return False
        return normalize_answer(problem.gold_answer) == answer


@dataclass
class ProblemResult:
    problem_id: str
    final_round: int
    answers: List[Optional[str]]
    correctness: List[int]
    verifier_flagged: List[int]
    score: float
    ledger: TokenLedger
    early_stopped: bool
    traces: Optional[List[List[CandidateTrace]]] = None


def _round_budget(config: RsaConfig, round_index: int) -> int:
    """Rounds before the last use beta; the final round uses final_budget.

    With T = 0, round 0 is the final round.
    """
    return config.final_budget if round_index >= config.T else config.beta


def _candidate_seed(config: RsaConfig, problem: Problem, round_index: int, worker: int, attempt: int) -> int:
    return digest_seed("gen", config.seed, problem.id, round_index, worker, attempt)


def _generate_candidate(
    backend: Backend,
    prompt: str,
    budget: int,
    config: RsaConfig,
    problem: Problem,
    round_index: int,
    worker: int,
    split: Callable[[str], List[str]],
) -> CandidateTrace:
    """Generate one candidate with bounded retries; on exhaustion returns an
    error trace instead of raising, so the population keeps its size."""
    last_error = None
    for attempt in range(MAX_CANDIDATE_RETRIES + 1):
        request = GenerationRequest(
            prompt=prompt,
            decode_budget=budget,
            seed=_candidate_seed(config, problem, round_index, worker, attempt),
        )
        try:
            result = backend.generate(request)
        except BackendError as exc:
            last_error = exc
            continue
        return make_trace(
            round_index,
            worker,
            result.text,
            result.generated_tokens,
            result.finish_reason,
            split=split,
            token_ids=result.token_ids,
            logprobs=result.logprobs,
        )
    return make_trace(
        round_index, worker, "", 0, "error", split=split, error=str(last_error)
    )


def _carry_for(trace: CandidateTrace, config: RsaConfig) -> Tail:
    if trace.finish_reason == "error":
        return empty_carry((trace.round, trace.worker))
    try:
        return compact_carry(trace, config)
    except EmptyTrace:
        return empty_carry((trace.round, trace.worker))


def _run_stage(
    jobs: List[Tuple[str, int]],
    backend: Backend,
    config: RsaConfig,
    problem: Problem,
    round_index: int,
    split: Callable[[str], List[str]],
    executor: Optional[ThreadPoolExecutor],
) -> List[CandidateTrace]:
    """Run one round's N generations, respecting the round barrier."""
    budget = _round_budget(config, round_index)

    def job(args) -> CandidateTrace:
        prompt, worker = args
        if prompt is None:  # prompt construction failed for this candidate
            return make_trace(round_index, worker, "", 0, "error", split=split, error="prompt overflow")
        return _generate_candidate(backend, prompt, budget, config, problem, round_index, worker, split)

    if executor is None:
        traces = [job(j) for j in jobs]
    else:
        traces = list(executor.map(job, jobs))
    if all(t.finish_reason == "error" for t in traces):
        raise StageError(
            f"problem {problem.id}: every candidate of round {round_index} failed",
            partial=traces,
        )
    return traces


def run_round0(
    problem: Problem,
    config: RsaConfig,
    backend: Backend,
    split: Callable[[str], List[str]] = whitespace_split,
    executor: Optional[ThreadPoolExecutor] = None,
) -> Tuple[Population, List[CandidateTrace], List[str]]:
    """Round 0: N independent rollouts directly from the problem prompt."""
    config.validate()
    prompt = round0_prompt(problem)
    jobs = [(prompt, j) for j in range(config.N)]
    traces = _run_stage(jobs, backend, config, problem, 0, split, executor)
    carries = tuple(_carry_for(t, config) for t in traces)
    return Population(round=0, members=carries), traces, [prompt] * config.N


def run_aggregation_round(
    problem: Problem,
    population: Population,
    config: RsaConfig,
    backend: Backend,
    round_index: int,
    split: Callable[[str], List[str]] = whitespace_split,
    counter: Callable[[str], int] = whitespace_count,
    executor: Optional[ThreadPoolExecutor] = None,
) -> Tuple[Population, List[CandidateTrace], List[str]]:
    """One aggregation round: N new candidates, each conditioned on C carries.

    In C=1 mode candidate i continues its own lineage i with no
    cross-candidate mixing; otherwise carries are sampled uniformly without
    replacement per candidate. A candidate whose prompt exceeds the
    configured maximum fails individually (the round continues).
    """
    if not 1 <= round_index <= config.T:
        raise RecaggError(f"round index {round_index} outside 1..T={config.T}")
    jobs: List[Tuple[Optional[str], int]] = []
    prompts: List[Optional[str]] = []
    for j in range(config.N):
        if config.C == 1:
            carries = [population.members[j]]
        else:
            rng = np.random.default_rng(digest_seed("sample", config.seed, problem.id, round_index, j))
            carries = sample_candidates(population, config.C, rng)
        try:
            prompt = build_aggregation_prompt(problem, carries, config, round_index, counter).text
        except PromptOverflow:
            prompt = None
        jobs.append((prompt, j))
        prompts.append(prompt)
    traces = _run_stage(jobs, backend, config, problem, round_index, split, executor)
    carries = tuple(_carry_for(t, config) for t in traces)
    return Population(round=round_index, members=carries), traces, prompts


def _consensus(traces: List[CandidateTrace]) -> bool:
    """True when every completed candidate extracts the same non-empty answer."""
    answers = [extract_answer(t) for t in traces if t.finish_reason != "error"]
    if not answers:
        return False
    return all(a is not None and a == answers[0] for a in answers)


def run_problem(
    problem: Problem,
    config: RsaConfig,
    backend: Backend,
    verifier: ExactMatchVerifier,
    split: Callable[[str], List[str]] = whitespace_split,
    counter: Callable[[str], int] = whitespace_count,
    executor: Optional[ThreadPoolExecutor] = None,
    keep_traces: bool = False,
) -> ProblemResult:
    """Full T-round run for one problem, scored as avg@N over the final round."""
    config.validate()
    ledger = TokenLedger()
    population, traces, _ = run_round0(problem, config, backend, split, executor)
    ledger.add_stage("round0", [t.generated_tokens for t in traces])
    all_traces = [traces]
    final_traces = traces
    final_round = 0
    early = False
    if config.early_stop == "round-consensus" and config.T > 0 and _consensus(traces):
        early = True
    if not early:
        for t in range(1, config.T + 1):
            population, traces, _ = run_aggregation_round(
                problem, population, config, backend, t, split, counter, executor
            )
            ledger.add_stage(f"round{t}", [tr.generated_tokens for tr in traces])
            all_traces.append(traces)
            final_traces = traces
            final_round = t
            if config.early_stop == "round-consensus" and t < config.T and _consensus(traces):
                early = True
                break
    answers: List[Optional[str]] = []
    correctness: List[int] = []
    flagged: List[int] = []
    for tr in final_traces:
        answer = extract_answer(tr) if tr.finish_reason != "error" else None
        answers.append(answer)
        try:
            ok = verifier.verify(problem, answer)
        except Exception:
            ok = False
            flagged.append(tr.worker)
        correctness.append(1 if ok else 0)
    score = sum(correctness) / len(correctness)
    return ProblemResult(
        problem_id=problem.id,
        final_round=final_round,
        answers=answers,
        correctness=correctness,
        verifier_flagged=flagged,
        score=score,
        ledger=ledger,
        early_stopped=early,
        traces=all_traces if keep_traces else None,
    )


@dataclass
class EvalReport:
    """Dataset-level evaluation summary; serializes deterministically."""

    config: Dict
    results: List[Dict]
    failures: List[Dict]
    dataset_mean_score: Optional[float]
    mean_generated_tokens: Optional[float]
    stage_token_averages: Dict[str, float]

    def to_dict(self) -> Dict:
        return {
            "config": self.config,
            "results": self.results,
            "failures": self.failures,
            "dataset_mean_score": self.dataset_mean_score,
            "mean_generated_tokens": self.mean_generated_tokens,
            "stage_token_averages": self.stage_token_averages,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _config_echo(config: RsaConfig) -> Dict:
    return {
        "N": config.N,
        "C": config.C,
        "T": config.T,
        "beta": config.beta,
        "tau": config.tau,
        "final_budget": config.final_budget,
        "compaction": config.compaction,
        "seed": config.seed,
        "max_aggregation_prompt": config.max_aggregation_prompt,
        "early_stop": config.early_stop,
    }


def _result_row(result: ProblemResult) -> Dict:
    direct, by_means = ledger_total(result.ledger)
    return {
        "id": result.problem_id,
        "final_round": result.final_round,
        "early_stopped": result.early_stopped,
        "score": result.score,
        "answers": result.answers,
        "correctness": result.correctness,
        "verifier_flagged": result.verifier_flagged,
        "ledger": {
            "stages": [{"stage": r.stage, "counts": r.counts} for r in result.ledger.records],
            "total_generated": direct,
            "total_by_stage_means": int(by_means) if by_means.denominator == 1 else str(by_means),
        },
    }


def run_eval(
    problems: Sequence[Problem],
    config: RsaConfig,
    backend: Backend,
    verifier: Optional[ExactMatchVerifier] = None,
    concurrency: int = 1,
    split: Callable[[str], List[str]] = whitespace_split,
    counter: Callable[[str], int] = whitespace_count,
) -> EvalReport:
    """Evaluate a problem set; per-problem failures are reported, not fatal.

    The concurrency cap bounds in-flight backend requests process-wide:
    problems are processed in order, and each round fans its N candidates
    across the shared pool (rounds are synchronization barriers). Reports
    contain no timestamps and serialize identically across runs and caps.
    """
    if not problems:
        raise RecaggError("problem set must be non-empty")
    if concurrency < 1:
        raise RecaggError("concurrency must be >= 1")
    verifier = verifier or ExactMatchVerifier()
    results: List[Dict] = []
    failures: List[Dict] = []
    scores: List[float] = []
    totals: List[int] = []
    stage_sums: Dict[str, List[int]] = {}
    executor = ThreadPoolExecutor(max_workers=concurrency) if concurrency > 1 else None
    try:
        for problem in problems:
            try:
                result = run_problem(
                    problem, config, backend, verifier, split, counter, executor
                )
            except RecaggError as exc:
                failures.append({"id": problem.id, "error": str(exc)})
                continue
            row = _result_row(result)
            results.append(row)
            scores.append(result.score)
            totals.append(row["ledger"]["total_generated"])
            for record in result.ledger.records:
                stage_sums.setdefault(record.stage, []).append(sum(record.counts))
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    return EvalReport(
        config=_config_echo(config),
        results=results,
        failures=failures,
        dataset_mean_score=(sum(scores) / len(scores)) if scores else None,
        mean_generated_tokens=(sum(totals) / len(totals)) if totals else None,
        stage_token_averages={
            stage: sum(v) / len(v) for stage, v in sorted(stage_sums.items())
        },
    )
