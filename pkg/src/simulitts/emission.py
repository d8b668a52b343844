"""Token emission timing: wait-k schedules and timestamped trace files.

The upstream simultaneous translator is modeled by *when* each target token
becomes available to the synthesizer.  Two sources are supported: the
wait-k policy with a fixed pre-decision (the t-th token is emitted after
k + t - 1 source segments have been read), and externally timestamped
traces, e.g. derived from forced alignment.

Trace file format (UTF-8, tab-separated, one token per line)::

    utterance_id <TAB> index <TAB> token_text <TAB> emit_time_seconds <TAB> eos_flag(0|1)

Lines starting with ``#`` are comments; blank lines are ignored.  An
optional header line ``@source_duration <TAB> utterance_id <TAB> seconds``
declares the source length for one utterance.  Tokens of an utterance must
be contiguous, indexed 0..n-1, with strictly increasing emit times; only
the last token may carry the EOS flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyUtterance, MalformedInput
from .timeline import TimePoint, TimeSpan

# Minimum spacing generators enforce between emit times (1 microsecond).
EMIT_JITTER = 1e-6


@dataclass(frozen=True)
class WaitKConfig:
    """Wait-k emission parameters.

    One source segment is ``pre_decision_segments`` encoder states of
    ``segment`` seconds each, so the token period is their product; the
    defaults (7 x 40 ms) give one token every 0.28 s.
    ``st_compute_per_token`` adds translation compute to every emission;
    the default of 0 treats the token period as the full emission cadence
    with compute folded in (the alternative reading, cadence plus explicit
    compute, is expressed by setting it > 0).
    """

    k: int
    pre_decision_segments: int = 7
    segment: TimeSpan = 0.040
    st_compute_per_token: TimeSpan = 0.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise MalformedInput(f"wait-k parameter k must be >= 1, got {self.k}")
        if self.pre_decision_segments < 1:
            raise MalformedInput("pre_decision_segments must be >= 1")
        if self.segment <= 0 or not math.isfinite(self.segment):
            raise MalformedInput("segment length must be positive")
        if self.st_compute_per_token < 0:
            raise MalformedInput("st_compute_per_token must be >= 0")

    @property
    def token_period(self) -> TimeSpan:
        return self.pre_decision_segments * self.segment


@dataclass(frozen=True)
class TokenEvent:
    """One translation token delivered to the synthesizer."""

    index: int
    text: str
    emit_time: TimePoint
    is_eos: bool = False

    def __post_init__(self) -> None:
        if not self.text:
            raise MalformedInput(f"token text must be non-empty (index {self.index})")
        if self.emit_time < 0 or not math.isfinite(self.emit_time):
            raise MalformedInput(
                f"emit_time must be finite and >= 0, got {self.emit_time!r}"
            )


@dataclass(frozen=True)
class Utterance:
    """An ordered token trace for one utterance."""

    utterance_id: str
    tokens: tuple[TokenEvent, ...]
    source_duration: TimeSpan | None = None

    def __post_init__(self) -> None:
        if not self.tokens:
            raise EmptyUtterance(f"utterance {self.utterance_id!r} has no tokens")
        for prev, cur in zip(self.tokens, self.tokens[1:]):
            if cur.emit_time <= prev.emit_time:
                raise MalformedInput(
                    f"utterance {self.utterance_id!r}: emit_time not strictly "
                    f"increasing at token {cur.index}"
                )
        for token in self.tokens[:-1]:
            if token.is_eos:
                raise MalformedInput(
                    f"utterance {self.utterance_id!r}: EOS flag on non-final "
                    f"token {token.index}"
                )

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.tokens)

    @property
    def last_emit_time(self) -> TimePoint:
        return self.tokens[-1].emit_time


def waitk_emit_times(
    n_tokens: int, cfg: WaitKConfig, source_duration: TimeSpan
) -> list[TimePoint]:
    """Emit times for n tokens under wait-k with a fixed pre-decision.

    Token t (1-based) becomes available once k + t - 1 source segments are
    read, capped by the end of the source; emission is then serialized on
    the translator's per-token compute:

        availability(t) = min((k + t - 1) * token_period, source_duration)
        emit(t) = max(availability(t), emit(t - 1)) + st_compute_per_token

    After the source is exhausted, remaining tokens are bottlenecked only
    by ``st_compute_per_token`` (with compute 0 they tie at the cap; trace
    generators must jitter those ties, see :func:`utterance_from_words`).
    """
    if n_tokens < 1:
        raise EmptyUtterance("n_tokens must be >= 1")
    if source_duration < 0:
        raise MalformedInput("source_duration must be >= 0")
    period = cfg.token_period
    emits: list[float] = []
    prev = 0.0
    for t in range(1, n_tokens + 1):
        availability = min((cfg.k + t - 1) * period, source_duration)
        prev = max(availability, prev) + cfg.st_compute_per_token
        emits.append(prev)
    return emits


def utterance_from_words(
    utterance_id: str,
    words: Sequence[str],
    cfg: WaitKConfig,
    source_duration: TimeSpan,
    *,
    mark_eos: bool = True,
) -> Utterance:
    """Build a wait-k timed utterance, jittering tied emit times by 1 us."""
    emits = waitk_emit_times(len(words), cfg, source_duration)
    strict: list[float] = []
    for value in emits:
        if strict and value <= strict[-1]:
            value = strict[-1] + EMIT_JITTER
        strict.append(value)
    tokens = tuple(
        TokenEvent(
            index=i,
            text=word,
            emit_time=emit,
            is_eos=mark_eos and i == len(words) - 1,
        )
        for i, (word, emit) in enumerate(zip(words, strict))
    )
    return Utterance(utterance_id, tokens, source_duration=source_duration)


def retime_constant_rate(utterance: Utterance, rate: TimeSpan) -> Utterance:
    """Re-time a trace to constant inter-emit gaps, holding content fixed.

    Token t (1-based) is emitted at ``rate * t``; EOS flags and the source
    duration are preserved.  Used by rate sweeps so that only the timing
    variable changes.
    """
    if rate <= 0 or not math.isfinite(rate):
        raise MalformedInput(f"token rate must be positive, got {rate!r}")
    tokens = tuple(
        TokenEvent(index=t.index, text=t.text, emit_time=rate * (i + 1), is_eos=t.is_eos)
        for i, t in enumerate(utterance.tokens)
    )
    return Utterance(utterance.utterance_id, tokens, source_duration=utterance.source_duration)


def _parse_float(field: str, what: str, line_no: int) -> float:
    try:
        return float(field)
    except ValueError:
        raise MalformedInput(f"line {line_no}: {what} is not a number: {field!r}") from None


class _TraceBuilder:
    def __init__(self, utterance_id: str) -> None:
        self.utterance_id = utterance_id
        self.tokens: list[TokenEvent] = []
        self.source_duration: float | None = None

    def build(self) -> Utterance:
        return Utterance(
            self.utterance_id, tuple(self.tokens), source_duration=self.source_duration
        )


def load_trace(path: str | Path) -> list[Utterance]:
    """Parse a trace file; enforce all trace invariants.

    Raises :class:`MalformedInput` with the line number for format errors
    and with the utterance id and token index for invariant violations.
    An empty file yields an empty list.
    """
    path = Path(path)
    builders: dict[str, _TraceBuilder] = {}
    order: list[str] = []
    current_block: str | None = None  # uid of the open token block

    def builder_for(uid: str) -> _TraceBuilder:
        if uid not in builders:
            builders[uid] = _TraceBuilder(uid)
            order.append(uid)
        return builders[uid]

    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if fields[0].startswith("@"):
                if fields[0] != "@source_duration" or len(fields) != 3:
                    raise MalformedInput(f"line {line_no}: unknown header {fields[0]!r}")
                seconds = _parse_float(fields[2], "source duration", line_no)
                if seconds < 0:
                    raise MalformedInput(f"line {line_no}: source duration must be >= 0")
                builder_for(fields[1]).source_duration = seconds
                continue
            if len(fields) != 5:
                raise MalformedInput(
                    f"line {line_no}: expected 5 tab-separated fields, got {len(fields)}"
                )
            uid, index_s, text, emit_s, eos_s = fields
            try:
                index = int(index_s)
            except ValueError:
                raise MalformedInput(f"line {line_no}: bad token index {index_s!r}") from None
            emit_time = _parse_float(emit_s, "emit_time", line_no)
            if eos_s not in ("0", "1"):
                raise MalformedInput(f"line {line_no}: eos flag must be 0 or 1, got {eos_s!r}")
            if not text:
                raise MalformedInput(f"line {line_no}: empty token text")

            builder = builder_for(uid)
            if uid != current_block:
                if builder.tokens:
                    raise MalformedInput(
                        f"line {line_no}: tokens of utterance {uid!r} are not contiguous"
                    )
                current_block = uid
            expected = len(builder.tokens)
            if index != expected:
                raise MalformedInput(
                    f"utterance {uid!r}: token index {index} out of order "
                    f"(expected {expected}, line {line_no})"
                )
            if builder.tokens and emit_time <= builder.tokens[-1].emit_time:
                raise MalformedInput(
                    f"utterance {uid!r}: emit_time not increasing at token {index} "
                    f"(line {line_no})"
                )
            if builder.tokens and builder.tokens[-1].is_eos:
                raise MalformedInput(
                    f"utterance {uid!r}: EOS flag on non-final token {index - 1}"
                )
            builder.tokens.append(TokenEvent(index, text, emit_time, is_eos=eos_s == "1"))

    utterances = []
    for uid in order:
        builder = builders[uid]
        if not builder.tokens:
            raise MalformedInput(
                f"utterance {uid!r} declares a source duration but has no tokens"
            )
        utterances.append(builder.build())
    return utterances


def write_trace(utterances: Iterable[Utterance], path: str | Path) -> None:
    """Write utterances in the trace file format (round-trips via load_trace)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for utt in utterances:
            if utt.source_duration is not None:
                fh.write(f"@source_duration\t{utt.utterance_id}\t{utt.source_duration!r}\n")
            for token in utt.tokens:
                fh.write(
                    f"{utt.utterance_id}\t{token.index}\t{token.text}\t"
                    f"{token.emit_time!r}\t{1 if token.is_eos else 0}\n"
                )
