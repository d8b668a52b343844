"""Playback timeline: chunk scheduling under the non-overlap constraint.

An incremental synthesizer hands the playback device a sequence of audio
chunks.  A chunk cannot start playing before its inputs arrived and its
synthesis finished (causality), and no two chunks may play at once
(non-overlap).  Given those two constraints the earliest feasible schedule
is the recurrence

    play_start(i) = max(ready_time(i) + compute_time(i), play_end(i - 1))
    play_end(i)   = play_start(i) + play_duration(i)

with ``play_end(-1) = 0``.  Latency for an utterance is measured between
the end points of input and output on a shared time axis whose origin
(t = 0) is the start of the source utterance.

All times are double-precision seconds.  Comparisons use a 1 microsecond
tolerance, far below the ~11.6 ms synthesis frame hop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import EmptyUtterance, MalformedInput

# Type aliases: a TimePoint is an instant on the shared axis, a TimeSpan a
# non-negative length of time.  Both are seconds as Python floats.
TimePoint = float
TimeSpan = float

TIME_EPS = 1e-6


def _check_time(value: float, name: str, *, allow_negative: bool = False) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise MalformedInput(f"{name} must be finite, got {value!r}")
    if value < 0.0 and not allow_negative:
        raise MalformedInput(f"{name} must be >= 0, got {value!r}")
    return value


@dataclass(frozen=True)
class SynthesisChunk:
    """One audio segment emitted by the synthesizer.

    ``ready_time`` is the instant all inputs for the chunk (including any
    lookahead the strategy waited for or generated) were available;
    ``compute_time`` is the synthesis cost; ``play_duration`` is the length
    of the emitted audio, normally ``frame_count`` spectrogram frames.
    """

    chunk_index: int
    words: tuple[str, ...]
    ready_time: TimePoint
    compute_time: TimeSpan
    play_duration: TimeSpan
    frame_count: int = 0

    def __post_init__(self) -> None:
        if self.chunk_index < 0:
            raise MalformedInput(f"chunk_index must be >= 0, got {self.chunk_index}")
        if self.frame_count < 0:
            raise MalformedInput(f"frame_count must be >= 0, got {self.frame_count}")
        _check_time(self.ready_time, "ready_time")
        _check_time(self.compute_time, "compute_time")
        _check_time(self.play_duration, "play_duration")

    @property
    def earliest_start(self) -> TimePoint:
        return self.ready_time + self.compute_time


@dataclass(frozen=True)
class PlaybackEntry:
    chunk_index: int
    play_start: TimePoint
    play_end: TimePoint


@dataclass(frozen=True)
class PlaybackSchedule:
    """Non-overlapping play intervals, one per chunk, ordered by index."""

    entries: tuple[PlaybackEntry, ...]

    @property
    def output_end(self) -> TimePoint:
        return self.entries[-1].play_end


@dataclass(frozen=True)
class LatencyReport:
    """Latency numbers for one utterance.

    ``final_latency`` is signed: in degenerate traces the output may finish
    before the input does, in which case ``output_before_input`` is set
    rather than clamping the value.
    """

    input_end: TimePoint
    output_end: TimePoint
    start_latency: TimeSpan
    final_latency: float
    output_before_input: bool
    per_chunk_queue_wait: tuple[TimeSpan, ...]


@dataclass(frozen=True)
class ValidationResult:
    """Outcome of :func:`validate_schedule`; failures are results, not errors."""

    ok: bool
    violation: str | None = None  # "ordering" | "overlap" | "causality"
    index: int | None = None
    message: str | None = None


def schedule_playback(
    chunks: list[SynthesisChunk] | tuple[SynthesisChunk, ...],
    input_end: TimePoint,
) -> tuple[PlaybackSchedule, LatencyReport]:
    """Schedule chunks at the earliest times satisfying causality and non-overlap.

    Computation for chunk i may proceed while chunk i-1 is still playing:
    only the playback device is serialized, so ``play_start`` gates on
    ``ready_time + compute_time`` and the previous ``play_end`` independently.

    Returns the schedule together with a report measuring ``start_latency``
    (first play start, from the utterance time origin) and ``final_latency``
    (``output_end - input_end``).  ``input_end`` is caller-supplied: the
    source-speech end when evaluating a full pipeline, or the last token
    emit time when evaluating the synthesizer alone.
    """
    if not chunks:
        raise EmptyUtterance("cannot schedule an empty chunk list")
    input_end = _check_time(input_end, "input_end")
    for prev, cur in zip(chunks, chunks[1:]):
        if cur.chunk_index <= prev.chunk_index:
            raise MalformedInput(
                f"chunk indices must be strictly increasing: "
                f"{prev.chunk_index} then {cur.chunk_index}"
            )

    entries: list[PlaybackEntry] = []
    waits: list[float] = []
    prev_end = 0.0
    for chunk in chunks:
        earliest = chunk.earliest_start
        start = earliest if earliest > prev_end else prev_end
        end = start + chunk.play_duration
        entries.append(PlaybackEntry(chunk.chunk_index, start, end))
        waits.append(start - earliest)
        prev_end = end

    output_end = entries[-1].play_end
    final = output_end - input_end
    report = LatencyReport(
        input_end=input_end,
        output_end=output_end,
        start_latency=entries[0].play_start,
        final_latency=final,
        output_before_input=final < 0.0,
        per_chunk_queue_wait=tuple(waits),
    )
    return PlaybackSchedule(tuple(entries)), report


def validate_schedule(
    schedule: PlaybackSchedule,
    chunks: list[SynthesisChunk] | tuple[SynthesisChunk, ...],
) -> ValidationResult:
    """Check a schedule against its chunks; report the first violation.

    Checks, per entry and in index order: entry/chunk correspondence and
    interval sanity ("ordering"), overlap with the previous entry
    ("overlap"), and play before ready + compute ("causality").
    """
    if len(schedule.entries) != len(chunks):
        return ValidationResult(
            ok=False,
            violation="ordering",
            index=min(len(schedule.entries), len(chunks)),
            message=f"{len(schedule.entries)} entries for {len(chunks)} chunks",
        )
    prev_end = 0.0
    prev_index = -1
    for i, (entry, chunk) in enumerate(zip(schedule.entries, chunks)):
        if entry.chunk_index != chunk.chunk_index or entry.chunk_index <= prev_index:
            return ValidationResult(
                ok=False,
                violation="ordering",
                index=i,
                message=f"entry index {entry.chunk_index} does not match chunk order",
            )
        if entry.play_start > entry.play_end + TIME_EPS:
            return ValidationResult(
                ok=False,
                violation="ordering",
                index=i,
                message="play_start exceeds play_end",
            )
        if entry.play_start < prev_end - TIME_EPS:
            return ValidationResult(
                ok=False,
                violation="overlap",
                index=i,
                message=f"play_start {entry.play_start:.6f} < previous play_end {prev_end:.6f}",
            )
        if entry.play_start < chunk.earliest_start - TIME_EPS:
            return ValidationResult(
                ok=False,
                violation="causality",
                index=i,
                message=(
                    f"play_start {entry.play_start:.6f} < ready+compute "
                    f"{chunk.earliest_start:.6f}"
                ),
            )
        prev_end = entry.play_end
        prev_index = entry.chunk_index
    return ValidationResult(ok=True)
