"""Bounded-context recursive self-aggregation toolkit.

Test-time compute orchestration (sampling, aggregation rounds, token
ledger), reinforcement-learning reward and advantage kernels, rollout
quality guards, a Thompson-sampling difficulty calibrator, dataset
trimming and packing utilities, and storage sizing arithmetic.
"""

from .backends import (
    ANSWER_KEY_MARKER,
    Backend,
    EchoBackend,
    EndpointConfig,
    GenerationRequest,
    GenerationResult,
    HttpBackend,
    InstrumentedBackend,
    OracleBackend,
    RecordingBackend,
    ReplayBackend,
    digest_seed,
    request_key,
)
from .core import (
    AggregationPrompt,
    CandidateTrace,
    Population,
    Problem,
    RsaConfig,
    Tail,
    build_aggregation_prompt,
    compact_carry,
    empty_carry,
    extract_answer,
    last_boxed,
    load_problems_jsonl,
    make_trace,
    normalize_answer,
    round0_prompt,
    sample_candidates,
    split_reasoning_answer,
    tail_extract,
    whitespace_count,
    whitespace_split,
)
from .curriculum import (
    CalibratorState,
    SchedulerState,
    SyntheticEnv,
    TrajectoryRow,
    difficulty_update,
    effective_sample_size,
    ess_resample,
    init_calibrator,
    log_binomial_pmf,
    posterior_update,
    simulate_calibration,
    systematic_resample_indices,
    thompson_sample_difficulty,
    verify_reward,
    weighted_env_sampler,
)
from .dataprep import (
    Conversation,
    RetrimResult,
    TrimOutcome,
    Turn,
    ap_trim,
    bfd_pack,
    load_conversations_jsonl,
    retrim_stage,
)
from .errors import (
    BackendError,
    ConfigError,
    DegenerateGroup,
    EmptyTrace,
    HttpStatusError,
    InvalidDistribution,
    InvalidPool,
    InvalidToken,
    LedgerError,
    MalformedResponse,
    Oversized,
    OversizedRollout,
    ParseError,
    PromptOverflow,
    RecaggError,
    ReplayMiss,
    StageError,
    TimeoutError_,
    TransportError,
    Unsupported,
)
from .guards import (
    GuardConfig,
    GuardReport,
    compress_scan,
    gibberish_mask,
    minp_filter,
    normalized_entropy,
    rare_token_fraction,
    reward_gate,
)
from .orchestrator import (
    EvalReport,
    ExactMatchVerifier,
    ProblemResult,
    StageRecord,
    TokenLedger,
    ledger_total,
    run_aggregation_round,
    run_eval,
    run_problem,
    run_round0,
)
from .rlspine import (
    MICROBATCH_TOKEN_BUDGET,
    LengthRewardParams,
    RolloutGroup,
    RunningMax,
    binary_tv_mask,
    chunk_local_adjustment,
    combined_advantage,
    grpo_advantage,
    k1_sequence_adjustment,
    length_reward,
    maxrl_advantage,
    pack_microbatches,
    rank_token_totals,
    router_bias_gradient,
    smtsn_loss,
    tv_divergence_proxy,
)
from .sizing import (
    IoWorkload,
    iops_needed,
    pages_per_iteration,
    scatter_estimate,
    sizing_report,
    t_break,
)

__version__ = "0.1.0"
