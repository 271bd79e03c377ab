"""Unified command-line entry point and configuration plumbing.

Subcommands: run, guard, advantage, schedule, trim, pack, iops, replay.
Configuration comes from a TOML file with fixed sections; environment
variables (RECAGG_ENDPOINT, RECAGG_API_TOKEN, RECAGG_MODEL) override the
file, and flags override both. Unknown sections or keys are rejected by
name. Exit codes: 0 success, 1 per-item partial failures (the report is
still written), 2 configuration errors.
"""

import argparse
import csv
import io
import json
import os
import sys
import struct
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple, get_args, get_origin

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .backends import (
    Backend,
    EchoBackend,
    EndpointConfig,
    HttpBackend,
    OracleBackend,
    RecordingBackend,
    ReplayBackend,
)
from .core import RsaConfig, load_problems_jsonl
from .curriculum import (
    DEFAULT_EXPLORE_HALFWIDTH,
    DEFAULT_EXPLORE_PROB,
    DEFAULT_MU_LOC,
    DEFAULT_MU_SCALE,
    DEFAULT_POOL_SIZE,
    DEFAULT_S_FLOOR,
    DEFAULT_S_LOC,
    DEFAULT_S_SCALE,
    SyntheticEnv,
    init_calibrator,
    simulate_calibration,
)
from .dataprep import load_conversations_jsonl, bfd_pack, retrim_stage
from .errors import ConfigError, ParseError, RecaggError
from .guards import (
    DEFAULT_RARE_CUTOFFS,
    DEFAULT_VOCAB_SIZE,
    GuardConfig,
    compress_scan,
    gibberish_mask,
    rare_token_fraction,
    reward_gate,
)
from .orchestrator import run_eval
from .rlspine import (
    MICROBATCH_TOKEN_BUDGET,
    LengthRewardParams,
    combined_advantage,
    grpo_advantage,
    length_reward,
    maxrl_advantage,
    pack_microbatches,
    rank_token_totals,
)
from .sizing import IoWorkload, sizing_report


@dataclass
class RunSettings:
    seed: int = 0
    concurrency: int = 1
    output: str = ""


@dataclass
class RsaSettings:
    N: int = 16
    C: int = 4
    T: int = 2
    beta: int = 16384
    tau: int = 4096
    final_budget: int = 40960
    compaction: str = "pacore-hybrid"
    max_aggregation_prompt: int = 20480
    early_stop: str = "off"


@dataclass
class BackendSettings:
    kind: str = "echo"
    endpoint: str = ""
    model: str = ""
    api_token: str = ""
    timeout: float = 120.0
    max_retries: int = 3
    backoff: float = 0.5
    request_logprobs: bool = False
    script_length: int = 64
    uplift: Tuple[float, ...] = (0.3, 0.6)
    replay_path: str = ""


@dataclass
class GuardSettings:
    chunk_size: int = 256
    window_bits: int = 10
    deflate_level: int = 1
    tau_repeat: float = 0.05
    rare_cutoffs: Tuple[float, ...] = DEFAULT_RARE_CUTOFFS
    vocab_size: int = DEFAULT_VOCAB_SIZE


@dataclass
class RlSettings:
    l_max: int = 81920
    tol_tokens: int = 256
    tol_acc: float = 0.1
    p_star: float = 0.0
    c: float = 1.0
    delta: float = 0.1
    beta_kl: float = 0.0


@dataclass
class CurriculumSettings:
    pool_size: int = DEFAULT_POOL_SIZE
    mu_loc: float = DEFAULT_MU_LOC
    mu_scale: float = DEFAULT_MU_SCALE
    s_loc: float = DEFAULT_S_LOC
    s_scale: float = DEFAULT_S_SCALE
    s_floor: float = DEFAULT_S_FLOOR
    p_target: float = 0.5
    explore_prob: float = DEFAULT_EXPLORE_PROB
    explore_halfwidth: float = DEFAULT_EXPLORE_HALFWIDTH
    iterations: int = 200
    group_size: int = 16
    mu_star: float = 37.0
    s_star: float = 4.0


@dataclass
class DataprepSettings:
    budgets: Tuple[int, ...] = (16384,)


@dataclass
class SizingSettings:
    G: int = 4096
    s: int = 4096
    b: float = 4.0
    P: int = 4096
    t: float = 2.5
    I_max: float = 70000.0
    sigma: float = 1.0
    m: float = 0.0


@dataclass
class RunConfig:
    """Full configuration tree; every field has a documented default."""

    run: RunSettings = field(default_factory=RunSettings)
    rsa: RsaSettings = field(default_factory=RsaSettings)
    backend: BackendSettings = field(default_factory=BackendSettings)
    guard: GuardSettings = field(default_factory=GuardSettings)
    rl: RlSettings = field(default_factory=RlSettings)
    curriculum: CurriculumSettings = field(default_factory=CurriculumSettings)
    dataprep: DataprepSettings = field(default_factory=DataprepSettings)
    sizing: SizingSettings = field(default_factory=SizingSettings)


_SECTION_ORDER = ("run", "rsa", "backend", "guard", "rl", "curriculum", "dataprep", "sizing")


def _coerce_scalar(value, target, where: str):
    if target is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected a boolean, got {value!r}")
    if target is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if target is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if target is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported config field type")


def _coerce(value, annotation, where: str):
    if get_origin(annotation) is tuple:
        elem = get_args(annotation)[0]
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected an array, got {value!r}")
        return tuple(_coerce_scalar(v, elem, where) for v in value)
    return _coerce_scalar(value, annotation, where)


def rsa_config(settings: RsaSettings, seed: int) -> RsaConfig:
    """Build and validate the aggregation plan from the [rsa] section."""
    return RsaConfig(
        N=settings.N,
        C=settings.C,
        T=settings.T,
        beta=settings.beta,
        tau=settings.tau,
        final_budget=settings.final_budget,
        compaction=settings.compaction,
        seed=seed,
        max_aggregation_prompt=settings.max_aggregation_prompt,
        early_stop=settings.early_stop,
    ).validate()


def guard_config(settings: GuardSettings) -> GuardConfig:
    return GuardConfig(
        chunk_size=settings.chunk_size,
        window_bits=settings.window_bits,
        deflate_level=settings.deflate_level,
        tau_repeat=settings.tau_repeat,
        rare_cutoffs=settings.rare_cutoffs,
        vocab_size=settings.vocab_size,
    ).validate()


def load_config(path: Optional[str] = None, environ: Optional[Dict[str, str]] = None) -> RunConfig:
    """Load a RunConfig: defaults, then file values, then env overrides.

    Unknown sections or keys are rejected with the offending name; values
    must match the documented field types (integers are accepted where
    floats are expected).
    """
    config = RunConfig()
    if path is not None:
        try:
            with open(path, "rb") as handle:
                data = tomllib.load(handle)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: not parseable as TOML: {exc}")
        for section_name, body in data.items():
            if section_name not in _SECTION_ORDER:
                raise ConfigError(f"unknown config section [{section_name}]")
            if not isinstance(body, dict):
                raise ConfigError(f"[{section_name}] must be a table")
            settings = getattr(config, section_name)
            known = {f.name: f.type for f in fields(settings)}
            for key, value in body.items():
                if key not in known:
                    raise ConfigError(f"unknown config key {section_name}.{key}")
                setattr(settings, key, _coerce(value, known[key], f"{section_name}.{key}"))
    environ = os.environ if environ is None else environ
    if environ.get("RECAGG_ENDPOINT"):
        config.backend.endpoint = environ["RECAGG_ENDPOINT"]
    if environ.get("RECAGG_API_TOKEN"):
        config.backend.api_token = environ["RECAGG_API_TOKEN"]
    if environ.get("RECAGG_MODEL"):
        config.backend.model = environ["RECAGG_MODEL"]
    rsa_config(config.rsa, config.run.seed)
    guard_config(config.guard)
    if config.run.concurrency < 1:
        raise ConfigError("run.concurrency must be >= 1")
    return config


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, tuple):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value {value!r}")


def dumps_config(config: RunConfig) -> str:
    """Serialize a RunConfig to TOML; reloading yields an identical config."""
    lines: List[str] = []
    for section_name in _SECTION_ORDER:
        settings = getattr(config, section_name)
        lines.append(f"[{section_name}]")
        for f in fields(settings):
            lines.append(f"{f.name} = {_toml_value(getattr(settings, f.name))}")
        lines.append("")
    return "\n".join(lines)


def _read_jsonl(path: str) -> List[Dict]:
    rows: List[Dict] = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{number}: invalid JSON: {exc}")
    return rows


def _write_output(path: str, text: str) -> None:
    if not path or path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text)


def _jsonl(rows: Sequence[Dict]) -> str:
    return "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)


def _build_backend(settings: BackendSettings) -> Backend:
    if settings.kind == "echo":
        return EchoBackend(script_length=settings.script_length)
    if settings.kind == "oracle":
        return OracleBackend(uplift=settings.uplift)
    if settings.kind == "replay":
        if not settings.replay_path:
            raise ConfigError("replay backend needs backend.replay_path (or --replay)")
        return ReplayBackend.from_jsonl(settings.replay_path)
    if settings.kind == "http":
        if not settings.endpoint:
            raise ConfigError(
                "http backend needs backend.endpoint (or RECAGG_ENDPOINT, or --endpoint)"
            )
        if not settings.model:
            raise ConfigError("http backend needs backend.model (or RECAGG_MODEL, or --model)")
        return HttpBackend(
            EndpointConfig(
                url=settings.endpoint,
                model=settings.model,
                api_token=settings.api_token or None,
                timeout=settings.timeout,
                max_retries=settings.max_retries,
                backoff=settings.backoff,
                request_logprobs=settings.request_logprobs,
            )
        )
    raise ConfigError(
        f"unknown backend kind {settings.kind!r}; expected echo, oracle, replay, or http"
    )


def _apply_run_flags(config: RunConfig, args: argparse.Namespace) -> None:
    if args.seed is not None:
        config.run.seed = args.seed
    if args.concurrency is not None:
        config.run.concurrency = args.concurrency
    if args.output is not None:
        config.run.output = args.output
    if getattr(args, "backend", None):
        config.backend.kind = args.backend
    if getattr(args, "endpoint", None):
        config.backend.endpoint = args.endpoint
    if getattr(args, "model", None):
        config.backend.model = args.model
    if getattr(args, "replay", None):
        config.backend.replay_path = args.replay
    if getattr(args, "preset", None):
        preset = RsaConfig.preset(args.preset)
        config.rsa.beta = preset.beta
        config.rsa.tau = preset.tau
        config.rsa.final_budget = preset.final_budget


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    _apply_run_flags(config, args)
    if args.replay_mode:
        config.backend.kind = "replay"
    rsa = rsa_config(config.rsa, config.run.seed)
    problems = load_problems_jsonl(args.problems)
    backend = _build_backend(config.backend)
    recorder: Optional[RecordingBackend] = None
    if getattr(args, "record", None):
        backend = recorder = RecordingBackend(backend)
    report = run_eval(problems, rsa, backend, concurrency=config.run.concurrency)
    _write_output(config.run.output, report.to_json())
    if recorder is not None:
        recorder.dump_jsonl(args.record)
    return 1 if report.failures else 0


def _cmd_guard(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.tau_repeat is not None:
        config.guard.tau_repeat = args.tau_repeat
    if args.chunk_size is not None:
        config.guard.chunk_size = args.chunk_size
    if args.vocab_size is not None:
        config.guard.vocab_size = args.vocab_size
    guard = guard_config(config.guard)
    rows = _read_jsonl(args.input)
    out: List[Dict] = []
    partial = False
    for index, row in enumerate(rows):
        ident = row.get("id", index)
        try:
            token_ids = row["token_ids"]
            report = compress_scan(token_ids, guard)
            entry: Dict = {
                "id": ident,
                "chunk_ratios": [round(r, 6) for r in report.chunk_ratios],
                "flagged": report.flagged,
                "rare_fractions": {
                    str(k): v
                    for k, v in rare_token_fraction(
                        token_ids, guard.vocab_size, guard.rare_cutoffs
                    ).items()
                },
            }
            if row.get("logprobs") is not None:
                mask = gibberish_mask(row["logprobs"], token_ids, guard.vocab_size)
                entry["gibberish_tokens"] = int(sum(mask))
            if row.get("reward") is not None:
                entry["gated_reward"] = reward_gate(report, float(row["reward"]))
            out.append(entry)
        except (KeyError, RecaggError, TypeError, ValueError, struct.error) as exc:
            out.append({"id": ident, "error": str(exc)})
            partial = True
    _write_output(args.output, _jsonl(out))
    return 1 if partial else 0


def _cmd_advantage(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    rows = _read_jsonl(args.input)
    out: List[Dict] = []
    partial = False
    for index, row in enumerate(rows):
        ident = row.get("id", index)
        try:
            rewards = row["rewards"]
            if args.kind == "maxrl":
                adv, informative = maxrl_advantage(rewards)
                entry = {"id": ident, "advantages": adv.tolist(), "informative": informative}
            elif args.kind == "grpo":
                adv = grpo_advantage(rewards)
                entry = {"id": ident, "advantages": adv.tolist()}
            else:
                params = LengthRewardParams(
                    l_max=config.rl.l_max,
                    tol_tokens=config.rl.tol_tokens,
                    tol_acc=config.rl.tol_acc,
                    p_star=config.rl.p_star,
                    c=config.rl.c,
                )
                delta_r = length_reward(rewards, row["lengths"], params)
                adv = combined_advantage(rewards, delta_r)
                entry = {
                    "id": ident,
                    "advantages": adv.tolist(),
                    "length_bonus": delta_r.tolist(),
                }
            out.append(entry)
        except (KeyError, RecaggError, TypeError, ValueError) as exc:
            out.append({"id": ident, "error": str(exc)})
            partial = True
    _write_output(args.output, _jsonl(out))
    return 1 if partial else 0


def _cmd_schedule(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    cur = config.curriculum
    if args.iterations is not None:
        cur.iterations = args.iterations
    if args.seed is not None:
        config.run.seed = args.seed
    if args.mu_star is not None:
        cur.mu_star = args.mu_star
    if args.s_star is not None:
        cur.s_star = args.s_star
    if args.group_size is not None:
        cur.group_size = args.group_size
    if args.p_target is not None:
        cur.p_target = args.p_target
    seed = config.run.seed
    calibrator = init_calibrator(
        np.random.default_rng(seed),
        pool_size=cur.pool_size,
        mu_loc=cur.mu_loc,
        mu_scale=cur.mu_scale,
        s_loc=cur.s_loc,
        s_scale=cur.s_scale,
        s_floor=cur.s_floor,
        p_target=cur.p_target,
    )
    calibrator.explore_prob = cur.explore_prob
    calibrator.explore_halfwidth = cur.explore_halfwidth
    env = SyntheticEnv(
        mu_star=cur.mu_star, s_star=cur.s_star, rng=np.random.default_rng(seed + 1)
    )
    rows = simulate_calibration(
        env, calibrator, cur.iterations, cur.group_size, np.random.default_rng(seed + 2)
    )
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    header = [
        "iteration", "difficulty", "candidate", "effective_target",
        "successes", "group_size", "pass_rate", "ess", "resampled",
    ]
    writer.writerow(header)
    for r in rows:
        writer.writerow([
            r.iteration, r.difficulty, r.candidate, repr(r.effective_target),
            r.successes, r.group_size, repr(r.pass_rate), repr(r.ess),
            int(r.resampled),
        ])
    _write_output(args.output if args.output is not None else config.run.output, buffer.getvalue())
    return 0


def _cmd_trim(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    raw = tuple(args.budgets) if args.budgets else config.dataprep.budgets
    budgets = sorted(set(int(b) for b in raw))
    conversations = load_conversations_jsonl(args.input)
    result = retrim_stage(conversations, budgets)
    out: List[Dict] = []
    for index in range(len(conversations)):
        entry: Dict = {"index": index, "results": {}}
        for budget in budgets:
            outcome = result.per_budget[budget][index]
            if outcome is None:
                entry["results"][str(budget)] = None
            else:
                entry["results"][str(budget)] = {
                    "variant": outcome.variant,
                    "token_count": outcome.token_count,
                    "conversation": outcome.conversation.to_dict()
                    if outcome.conversation is not None
                    else None,
                }
        out.append(entry)
    if result.errors:
        out.append({
            "errors": [
                {"budget": b, "index": i, "message": m} for b, i, m in result.errors
            ]
        })
    _write_output(args.output, _jsonl(out))
    return 1 if result.errors else 0


def _parse_lengths(args: argparse.Namespace) -> List[int]:
    if args.lengths:
        try:
            return [int(x) for x in args.lengths.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"--lengths must be comma-separated integers, got {args.lengths!r}")
    if args.input:
        lengths: List[int] = []
        for row in _read_jsonl(args.input):
            if isinstance(row, int):
                lengths.append(row)
            elif isinstance(row, dict) and "length" in row:
                lengths.append(int(row["length"]))
            else:
                raise ConfigError("pack input lines must be integers or objects with a 'length' key")
        return lengths
    raise ConfigError("pack needs --lengths or --input")


def _cmd_pack(args: argparse.Namespace) -> int:
    lengths = _parse_lengths(args)
    if args.ranks is not None:
        assignment = pack_microbatches(lengths, args.budget, args.ranks)
        totals = rank_token_totals(assignment, lengths)
        ratio = (max(totals) / min(totals)) if min(totals) > 0 else None
        payload = {
            "ranks": assignment,
            "rank_token_totals": totals,
            "max_min_ratio": ratio,
            "budget": args.budget,
        }
    else:
        bins = bfd_pack(lengths, args.capacity)
        payload = {
            "bins": bins,
            "bin_count": len(bins),
            "capacity": args.capacity,
        }
    _write_output(args.output, json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return 0


def _cmd_iops(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    s = config.sizing
    workload = IoWorkload(
        G=args.G if args.G is not None else s.G,
        s=args.s if args.s is not None else s.s,
        b=args.b if args.b is not None else s.b,
        P=args.P if args.P is not None else s.P,
        t=args.t if args.t is not None else s.t,
        I_max=args.Imax if args.Imax is not None else s.I_max,
        sigma=args.sigma if args.sigma is not None else s.sigma,
        m=args.m if args.m is not None else s.m,
    ).validate()
    _write_output(args.output, sizing_report(workload))
    return 0


def _cmd_config(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    _write_output(args.output, dumps_config(config))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recagg",
        description="Bounded-context recursive self-aggregation toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, output_default: Optional[str] = "") -> None:
        p.add_argument("--config", default=None, help="TOML config file")
        p.add_argument("--output", default=output_default, help="output path ('-' = stdout)")

    def run_like(name: str, help_text: str, replay_mode: bool) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="TOML config file")
        p.add_argument("--problems", required=True, help="problems JSONL file")
        p.add_argument("--output", default=None, help="report path ('-' = stdout)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--concurrency", type=int, default=None)
        p.add_argument("--preset", choices=("deploy", "capability"), default=None)
        if not replay_mode:
            p.add_argument(
                "--backend", choices=("echo", "oracle", "replay", "http"), default=None
            )
            p.add_argument("--endpoint", default=None, help="http backend URL")
            p.add_argument("--model", default=None, help="http backend model name")
            p.add_argument("--record", default=None, help="record traces to this JSONL path")
        p.add_argument("--replay", default=None, help="replay records JSONL path")
        p.set_defaults(func=_cmd_run, replay_mode=replay_mode)
        return p

    run_like("run", "evaluate a problem set with the aggregation loop", False)
    run_like("replay", "re-run an eval from recorded backend traces", True)

    p = sub.add_parser("guard", help="scan rollouts for degenerate text")
    common(p)
    p.add_argument("--input", required=True, help="rollouts JSONL (token_ids per line)")
    p.add_argument("--tau-repeat", type=float, default=None, dest="tau_repeat")
    p.add_argument("--chunk-size", type=int, default=None, dest="chunk_size")
    p.add_argument("--vocab-size", type=int, default=None, dest="vocab_size")
    p.set_defaults(func=_cmd_guard)

    p = sub.add_parser("advantage", help="compute group-relative advantages")
    common(p)
    p.add_argument("--input", required=True, help="groups JSONL (rewards per line)")
    p.add_argument("--kind", choices=("maxrl", "grpo", "combined"), default="maxrl")
    p.set_defaults(func=_cmd_advantage)

    p = sub.add_parser("schedule", help="run the difficulty calibrator on a synthetic env")
    common(p)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mu-star", type=float, default=None, dest="mu_star")
    p.add_argument("--s-star", type=float, default=None, dest="s_star")
    p.add_argument("--group-size", type=int, default=None, dest="group_size")
    p.add_argument("--p-target", type=float, default=None, dest="p_target")
    p.set_defaults(func=_cmd_schedule)

    p = sub.add_parser("trim", help="answer-preserving trim of conversations")
    common(p)
    p.add_argument("--input", required=True, help="conversations JSONL")
    p.add_argument("--budgets", type=int, nargs="+", default=None)
    p.set_defaults(func=_cmd_trim)

    p = sub.add_parser("pack", help="bin-pack sequence lengths")
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--output", default="", help="output path ('-' = stdout)")
    p.add_argument("--lengths", default=None, help="comma-separated lengths")
    p.add_argument("--input", default=None, help="lengths JSONL")
    p.add_argument("--capacity", type=int, default=MICROBATCH_TOKEN_BUDGET)
    p.add_argument("--budget", type=int, default=MICROBATCH_TOKEN_BUDGET)
    p.add_argument("--ranks", type=int, default=None, help="microbatch mode: rank count")
    p.set_defaults(func=_cmd_pack)

    p = sub.add_parser("iops", help="checkpoint-reload storage sizing report")
    common(p)
    p.add_argument("--G", type=int, default=None, help="global batch in sequences")
    p.add_argument("--s", type=int, default=None, help="sequence length in tokens")
    p.add_argument("--b", type=float, default=None, help="bytes per token")
    p.add_argument("--P", type=int, default=None, help="page size in bytes")
    p.add_argument("--t", type=float, default=None, help="iteration time in seconds")
    p.add_argument("--Imax", type=float, default=None, help="IOPS capacity")
    p.add_argument("--sigma", type=float, default=None, help="scatter factor >= 1")
    p.add_argument("--m", type=float, default=None, help="extra page faults per sample")
    p.set_defaults(func=_cmd_iops)

    p = sub.add_parser("config", help="print the resolved configuration as TOML")
    common(p)
    p.set_defaults(func=_cmd_config)

    return parser


def dispatch(argv: Sequence[str]) -> int:
    """Parse argv and run the selected subcommand; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RecaggError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
