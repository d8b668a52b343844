"""Experiment driver: strategy comparisons, sweeps, and report emission.

For every utterance and strategy the pipeline is annotate -> plan_chunks ->
schedule_playback, each schedule re-checked with validate_schedule.  Runs
are deterministic under a fixed seed: utterances are evaluated in
utterance-id order within each strategy, and every emitted number is
formatted with fixed precision so report files are byte-stable.

Outputs:

* ``report.csv`` — one aggregate row per (strategy, sweep point);
* ``per_utterance.jsonl`` — one record per (strategy, sweep point,
  utterance), from which the aggregates are recomputable;
* ``curve.csv`` — sweep curves (token rate or duration scale on the axis).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .dataprep import EOS_MARKER
from .emission import Utterance, WaitKConfig, load_trace, retime_constant_rate
from .errors import (
    ConfigurationError,
    EmptyInput,
    InternalInvariantError,
    MalformedInput,
)
from .lookahead import (
    GroundTruthLookahead,
    LookaheadStrategy,
    NoLookahead,
    PseudoLookahead,
    RandomLookahead,
    StochasticLookahead,
    ToyDecoder,
    annotate,
    lookahead_accuracy,
)
from .synthesis import (
    ChunkPlan,
    ComputeModel,
    ContextModifiers,
    DurationTable,
    Lexicon,
    plan_chunks,
    scale_plan,
)
from .timeline import schedule_playback, validate_schedule

logger = logging.getLogger(__name__)

INPUT_END_MODES = ("source", "last-token")

REPORT_COLUMNS = (
    "strategy",
    "token_rate",
    "alpha",
    "utterances",
    "mean_start_latency",
    "median_start_latency",
    "mean_final_latency",
    "median_final_latency",
    "mean_output_duration",
    "mean_lookahead_accuracy",
)

CURVE_COLUMNS = ("strategy", "axis", "value", "mean_final_latency", "mean_output_duration")


def parse_strategy(spec: str, default_seed: int = 0) -> LookaheadStrategy:
    """Parse a compact strategy spec such as ``pseudo:k=1,overhead=0.01``.

    Names: none, ground-truth (gt), pseudo, random, stochastic.  Keys:
    ``k`` (depth), ``overhead`` (pseudo per-step cost), ``p`` (stochastic
    accuracy), ``seed``.
    """
    name, _, arg_str = spec.strip().partition(":")
    name = name.strip().lower()
    args: dict[str, str] = {}
    if arg_str:
        for part in arg_str.split(","):
            key, eq, value = part.partition("=")
            if not eq:
                raise ConfigurationError(f"bad strategy argument {part!r} in {spec!r}")
            args[key.strip()] = value.strip()

    def pop_int(key: str, default: int) -> int:
        try:
            return int(args.pop(key, default))
        except ValueError:
            raise ConfigurationError(f"bad integer for {key!r} in {spec!r}") from None

    def pop_float(key: str, default: float) -> float:
        try:
            return float(args.pop(key, default))
        except ValueError:
            raise ConfigurationError(f"bad number for {key!r} in {spec!r}") from None

    strategy: LookaheadStrategy
    if name == "none":
        strategy = NoLookahead()
    elif name in ("ground-truth", "ground_truth", "gt"):
        strategy = GroundTruthLookahead(depth=pop_int("k", 1))
    elif name == "pseudo":
        strategy = PseudoLookahead(
            depth=pop_int("k", 1), per_step_overhead=pop_float("overhead", 0.01)
        )
    elif name == "random":
        strategy = RandomLookahead(depth=pop_int("k", 1), seed=pop_int("seed", default_seed))
    elif name == "stochastic":
        strategy = StochasticLookahead(
            accuracy=pop_float("p", 0.7),
            depth=pop_int("k", 1),
            seed=pop_int("seed", default_seed),
        )
    else:
        raise ConfigurationError(f"unknown strategy {name!r} in {spec!r}")
    if args:
        raise ConfigurationError(f"unknown strategy arguments {sorted(args)} in {spec!r}")
    return strategy


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; see README for the JSON schema."""

    traces: tuple[Path, ...]
    strategies: tuple[LookaheadStrategy, ...]
    waitk: WaitKConfig = WaitKConfig(k=1)
    modifiers: ContextModifiers = ContextModifiers()
    compute: ComputeModel = ComputeModel()
    token_rates: tuple[float, ...] = ()
    alphas: tuple[float, ...] = ()
    input_end_mode: str = "last-token"
    out_dir: Path = Path("out")
    seed: int = 0
    lexicon_path: Path | None = None
    duration_table_path: Path | None = None
    ngram_path: Path | None = None

    def __post_init__(self) -> None:
        if not self.strategies:
            raise ConfigurationError("config needs at least one strategy")
        if self.input_end_mode not in INPUT_END_MODES:
            raise ConfigurationError(
                f"input_end_mode must be one of {INPUT_END_MODES}, got {self.input_end_mode!r}"
            )

    @classmethod
    def from_file(cls, path: str | Path, **overrides: object) -> "ExperimentConfig":
        """Load a JSON config; relative paths resolve against the file's directory."""
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"{path}: not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise MalformedInput(f"{path}: config must be a JSON object")
        base = path.parent

        def resolve(value: object) -> Path:
            return base / str(value)

        known = {
            "traces", "strategies", "waitk", "modifiers", "compute", "token_rates",
            "alphas", "input_end", "out_dir", "seed", "lexicon", "durations", "ngram",
        }
        unknown = set(raw) - known
        if unknown:
            raise MalformedInput(f"{path}: unknown config keys {sorted(unknown)}")

        seed = int(raw.get("seed", 0))
        kwargs: dict[str, object] = {
            "traces": tuple(resolve(t) for t in raw.get("traces", ())),
            "strategies": tuple(
                parse_strategy(s, default_seed=seed) for s in raw.get("strategies", ())
            ),
            "token_rates": tuple(float(r) for r in raw.get("token_rates", ())),
            "alphas": tuple(float(a) for a in raw.get("alphas", ())),
            "input_end_mode": raw.get("input_end", "last-token"),
            "out_dir": base / str(raw.get("out_dir", "out")),
            "seed": seed,
        }
        if "waitk" in raw:
            kwargs["waitk"] = WaitKConfig(**raw["waitk"])
        if "modifiers" in raw:
            kwargs["modifiers"] = ContextModifiers(**raw["modifiers"])
        if "compute" in raw:
            kwargs["compute"] = ComputeModel(**raw["compute"])
        if raw.get("lexicon"):
            kwargs["lexicon_path"] = resolve(raw["lexicon"])
        if raw.get("durations"):
            kwargs["duration_table_path"] = resolve(raw["durations"])
        if raw.get("ngram"):
            kwargs["ngram_path"] = resolve(raw["ngram"])
        kwargs.update(overrides)
        try:
            return cls(**kwargs)  # type: ignore[arg-type]
        except TypeError as exc:
            raise MalformedInput(f"{path}: {exc}") from None


@dataclass(frozen=True)
class UtteranceRecord:
    """Per-utterance result for one strategy at one sweep point."""

    utterance_id: str
    strategy: str
    token_rate: float | None
    alpha: float
    n_tokens: int
    input_end: float
    start_latency: float
    final_latency: float
    output_end: float
    output_duration: float
    lookahead_accuracy: float | None
    output_before_input: bool

    def to_json_dict(self) -> dict[str, object]:
        return {
            "utterance_id": self.utterance_id,
            "strategy": self.strategy,
            "token_rate": self.token_rate,
            "alpha": self.alpha,
            "n_tokens": self.n_tokens,
            "input_end": self.input_end,
            "start_latency": self.start_latency,
            "final_latency": self.final_latency,
            "output_end": self.output_end,
            "output_duration": self.output_duration,
            "lookahead_accuracy": self.lookahead_accuracy,
            "output_before_input": self.output_before_input,
        }


@dataclass(frozen=True)
class AggregateRow:
    strategy: str
    token_rate: float | None
    alpha: float
    utterances: int
    mean_start_latency: float
    median_start_latency: float
    mean_final_latency: float
    median_final_latency: float
    mean_output_duration: float
    mean_lookahead_accuracy: float | None


@dataclass(frozen=True)
class AggregateReport:
    rows: tuple[AggregateRow, ...]
    records: tuple[UtteranceRecord, ...]


@dataclass
class _Workspace:
    """Loaded inputs shared by every evaluation in a run."""

    utterances: list[Utterance]
    lexicon: Lexicon
    table: DurationTable
    decoder: ToyDecoder
    vocabulary: tuple[str, ...] = field(default_factory=tuple)


def _load_workspace(config: ExperimentConfig) -> _Workspace:
    if not config.traces:
        raise ConfigurationError("no trace files given (config 'traces' or --trace)")
    utterances: list[Utterance] = []
    for trace in config.traces:
        utterances.extend(load_trace(trace))
    if not utterances:
        raise EmptyInput("traces contain no utterances")
    seen: set[str] = set()
    for utt in utterances:
        if utt.utterance_id in seen:
            raise MalformedInput(f"duplicate utterance id {utt.utterance_id!r} across traces")
        seen.add(utt.utterance_id)
    utterances.sort(key=lambda u: u.utterance_id)

    lexicon = Lexicon.from_file(config.lexicon_path) if config.lexicon_path else Lexicon({})
    table = (
        DurationTable.from_file(config.duration_table_path)
        if config.duration_table_path
        else DurationTable({})
    )
    if config.lexicon_path is None:
        logger.info("no lexicon given; using grapheme fallback for every word")

    if config.ngram_path is not None:
        decoder = ToyDecoder.from_counts_file(config.ngram_path)
    else:
        needs_decoder = any(
            isinstance(s, PseudoLookahead) for s in config.strategies
        )
        if needs_decoder:
            logger.warning(
                "no n-gram file given; training the toy decoder on the trace corpus "
                "itself (pseudo-lookahead accuracy will upper-bound realistic settings)"
            )
        decoder = ToyDecoder.train((u.words for u in utterances), order=2)

    vocabulary = tuple(sorted({w for u in utterances for w in u.words}))
    return _Workspace(utterances, lexicon, table, decoder, vocabulary)


def _input_end(utterance: Utterance, mode: str) -> float:
    if mode == "source":
        if utterance.source_duration is None:
            raise MalformedInput(
                f"utterance {utterance.utterance_id!r} has no @source_duration but "
                "input-end mode is 'source'"
            )
        return utterance.source_duration
    return utterance.last_emit_time


def evaluate_utterance(
    utterance: Utterance,
    strategy: LookaheadStrategy,
    ws: _Workspace,
    config: ExperimentConfig,
    *,
    token_rate: float | None = None,
    alpha: float | None = None,
) -> UtteranceRecord:
    """Run one utterance through annotate -> plan -> schedule and record it."""
    if token_rate is not None:
        utterance = retime_constant_rate(utterance, token_rate)
    decoder = None
    if isinstance(strategy, PseudoLookahead):
        decoder = ws.decoder
        decoder.reset()
    annotation = annotate(utterance, strategy, decoder=decoder, vocabulary=ws.vocabulary)
    plan = plan_chunks(
        utterance, annotation, ws.lexicon, ws.table, config.modifiers, config.compute
    )
    if alpha is not None and alpha != plan.modifiers.scale:
        plan = scale_plan(plan, alpha)
    if token_rate is not None:
        input_end = utterance.last_emit_time  # sweeps re-time; source end no longer applies
    else:
        input_end = _input_end(utterance, config.input_end_mode)
    schedule, report = schedule_playback(plan.chunks, input_end)
    check = validate_schedule(schedule, plan.chunks)
    if not check.ok:
        raise InternalInvariantError(
            f"schedule for {utterance.utterance_id!r} / {strategy.name} violates "
            f"{check.violation} at index {check.index}: {check.message}"
        )
    try:
        accuracy: float | None = lookahead_accuracy(annotation)
    except EmptyInput:
        accuracy = None
    return UtteranceRecord(
        utterance_id=utterance.utterance_id,
        strategy=strategy.name,
        token_rate=token_rate,
        alpha=plan.modifiers.scale,
        n_tokens=len(utterance.tokens),
        input_end=input_end,
        start_latency=report.start_latency,
        final_latency=report.final_latency,
        output_end=report.output_end,
        output_duration=plan.total_play_duration,
        lookahead_accuracy=accuracy,
        output_before_input=report.output_before_input,
    )


def _aggregate(
    records: Sequence[UtteranceRecord],
    strategy: str,
    token_rate: float | None,
    alpha: float,
) -> AggregateRow:
    starts = [r.start_latency for r in records]
    finals = [r.final_latency for r in records]
    accuracies = [r.lookahead_accuracy for r in records if r.lookahead_accuracy is not None]
    return AggregateRow(
        strategy=strategy,
        token_rate=token_rate,
        alpha=alpha,
        utterances=len(records),
        mean_start_latency=statistics.fmean(starts),
        median_start_latency=statistics.median(starts),
        mean_final_latency=statistics.fmean(finals),
        median_final_latency=statistics.median(finals),
        mean_output_duration=statistics.fmean(r.output_duration for r in records),
        mean_lookahead_accuracy=statistics.fmean(accuracies) if accuracies else None,
    )


def run_comparison(config: ExperimentConfig) -> AggregateReport:
    """Evaluate every strategy over the trace corpus at the configured timing."""
    ws = _load_workspace(config)
    rows: list[AggregateRow] = []
    records: list[UtteranceRecord] = []
    for strategy in config.strategies:
        strategy_records = [
            evaluate_utterance(utt, strategy, ws, config) for utt in ws.utterances
        ]
        records.extend(strategy_records)
        rows.append(
            _aggregate(strategy_records, strategy.name, None, config.modifiers.scale)
        )
    return AggregateReport(tuple(rows), tuple(records))


def rate_sweep(config: ExperimentConfig, token_rates: Sequence[float]) -> AggregateReport:
    """Re-time traces to constant token rates and measure latency at each.

    Content is held fixed while timing varies; input end is the last token
    emit time at the swept rate.
    """
    if not token_rates:
        raise ConfigurationError("rate sweep needs at least one token rate")
    for rate in token_rates:
        if rate <= 0 or not math.isfinite(rate):
            raise ConfigurationError(f"token rates must be positive, got {rate!r}")
    ws = _load_workspace(config)
    rows: list[AggregateRow] = []
    records: list[UtteranceRecord] = []
    for strategy in config.strategies:
        for rate in token_rates:
            point = [
                evaluate_utterance(utt, strategy, ws, config, token_rate=rate)
                for utt in ws.utterances
            ]
            records.extend(point)
            rows.append(_aggregate(point, strategy.name, rate, config.modifiers.scale))
    return AggregateReport(tuple(rows), tuple(records))


def scale_sweep(config: ExperimentConfig, alphas: Sequence[float]) -> AggregateReport:
    """Re-derive plans at each duration scale and measure latency.

    Plans are built once per utterance at the configured modifiers, then
    rescaled per sweep point, so only the duration lever moves.
    """
    if not alphas:
        raise ConfigurationError("scale sweep needs at least one alpha")
    for alpha in alphas:
        if not 0.0 < alpha <= 1.5:
            raise ConfigurationError(f"alphas must be in (0, 1.5], got {alpha!r}")
    ws = _load_workspace(config)
    rows: list[AggregateRow] = []
    records: list[UtteranceRecord] = []
    for strategy in config.strategies:
        for alpha in alphas:
            point = [
                evaluate_utterance(utt, strategy, ws, config, alpha=alpha)
                for utt in ws.utterances
            ]
            records.extend(point)
            rows.append(_aggregate(point, strategy.name, None, alpha))
    return AggregateReport(tuple(rows), tuple(records))


# --- Report emission --------------------------------------------------------


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def write_report_csv(rows: Iterable[AggregateRow], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.strategy,
                    _fmt(row.token_rate),
                    _fmt(row.alpha),
                    row.utterances,
                    _fmt(row.mean_start_latency),
                    _fmt(row.median_start_latency),
                    _fmt(row.mean_final_latency),
                    _fmt(row.median_final_latency),
                    _fmt(row.mean_output_duration),
                    _fmt(row.mean_lookahead_accuracy),
                ]
            )


def write_curve_csv(
    rows: Iterable[AggregateRow], path: str | Path, axis: str
) -> None:
    """Sweep curve: ``axis`` names the swept variable (token_rate or alpha)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for row in rows:
            value = row.token_rate if axis == "token_rate" else row.alpha
            writer.writerow(
                [
                    row.strategy,
                    axis,
                    _fmt(value),
                    _fmt(row.mean_final_latency),
                    _fmt(row.mean_output_duration),
                ]
            )


def write_records_jsonl(records: Iterable[UtteranceRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json_dict(), sort_keys=True) + "\n")


def format_table(rows: Sequence[AggregateRow]) -> str:
    """Human-readable strategy table for the compare command."""
    header = (
        "strategy",
        "n",
        "mean_start",
        "mean_final",
        "median_final",
        "mean_out_dur",
        "accuracy",
    )
    body = [
        (
            row.strategy,
            str(row.utterances),
            f"{row.mean_start_latency:.3f}",
            f"{row.mean_final_latency:.3f}",
            f"{row.median_final_latency:.3f}",
            f"{row.mean_output_duration:.3f}",
            "-" if row.mean_lookahead_accuracy is None else f"{row.mean_lookahead_accuracy:.3f}",
        )
        for row in rows
    ]
    widths = [max(len(header[i]), *(len(r[i]) for r in body)) for i in range(len(header))]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
    for r in body:
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)))
    return "\n".join(lines)
