"""Incremental synthesizer model: durations, chunk planning, scaling.

The synthesizer is non-autoregressive: per-phoneme frame counts come from
a duration table and directly determine both the audio length and the word
boundaries used to split output into chunks.  At each commit step it
synthesizes through the committed words plus any lookahead span, but emits
only the frames of the newly committed words; the lookahead frames are
tentative context and cost compute only.

Duration context modifiers compose multiplicatively per phoneme:

* ``scale`` stretches or compresses everything (the speaking-rate lever);
* ``eos_stretch`` applies to the final word's phonemes when the input is
  perceived as final, i.e. only when the incoming token carries the EOS
  flag (sentence-final prosody lengthens);
* ``no_lookahead_stretch`` applies to words synthesized with zero
  lookahead, the prolonged-duration behavior of context-starved synthesis.
  A complete final input never takes it: the full context is available.

Frame counts are ``max(1, round(product * base))`` per phoneme, rounded
before summation; ties round up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

from .emission import Utterance
from .errors import ConfigurationError, EmptyInput, MalformedInput
from .lookahead import END_MARKER, LookaheadAnnotation
from .timeline import TIME_EPS, SynthesisChunk, TimeSpan

DEFAULT_FRAME_HOP = 0.0116  # seconds per spectrogram frame


def _round_frames(value: float) -> int:
    # Half-up with a small guard: products of decimal modifiers such as
    # 1.15 * 10 land a few ulps off the exact half and must not truncate.
    return max(1, math.floor(value + 0.5 + 1e-9))


@dataclass(frozen=True)
class Lexicon:
    """Word-to-phoneme mapping with a grapheme fallback for OOV words.

    Lookups are case-folded.  Out-of-vocabulary words fall back to one
    pseudo-phoneme per character, so every non-empty word has a non-empty
    phoneme sequence.
    """

    entries: Mapping[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        for word, phonemes in self.entries.items():
            if not phonemes:
                raise MalformedInput(f"lexicon entry {word!r} has no phonemes")

    def phonemes(self, word: str) -> tuple[str, ...]:
        if not word:
            raise MalformedInput("cannot look up an empty word")
        folded = word.casefold()
        known = self.entries.get(folded)
        if known is not None:
            return known
        return tuple(folded)

    @classmethod
    def from_file(cls, path: str | Path) -> "Lexicon":
        """Load ``word <TAB> phoneme phoneme ...`` lines (UTF-8, # comments)."""
        entries: dict[str, tuple[str, ...]] = {}
        with Path(path).open("r", encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, 1):
                line = raw.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                fields = line.split("\t")
                if len(fields) != 2 or not fields[0]:
                    raise MalformedInput(
                        f"line {line_no}: expected 'word<TAB>phonemes', got {line!r}"
                    )
                phonemes = tuple(fields[1].split())
                if not phonemes:
                    raise MalformedInput(f"line {line_no}: no phonemes for {fields[0]!r}")
                entries[fields[0].casefold()] = phonemes
        return cls(entries)


@dataclass(frozen=True)
class DurationTable:
    """Per-phoneme base durations in frames, plus the frame hop.

    Phonemes absent from the table (e.g. grapheme-fallback pseudo-phonemes)
    use ``default_frames``.
    """

    base_frames: Mapping[str, int]
    frame_hop: TimeSpan = DEFAULT_FRAME_HOP
    default_frames: int = 5

    def __post_init__(self) -> None:
        if self.frame_hop <= 0 or not math.isfinite(self.frame_hop):
            raise ConfigurationError(f"frame_hop must be positive, got {self.frame_hop}")
        if self.default_frames < 1:
            raise ConfigurationError("default_frames must be >= 1 frame")
        for phoneme, frames in self.base_frames.items():
            if frames < 1:
                raise MalformedInput(
                    f"duration for phoneme {phoneme!r} must be >= 1 frame, got {frames}"
                )

    def frames(self, phoneme: str) -> int:
        return self.base_frames.get(phoneme, self.default_frames)

    @classmethod
    def from_file(
        cls,
        path: str | Path,
        frame_hop: TimeSpan = DEFAULT_FRAME_HOP,
        default_frames: int = 5,
    ) -> "DurationTable":
        """Load ``phoneme <TAB> base_frames`` lines (UTF-8, # comments)."""
        table: dict[str, int] = {}
        with Path(path).open("r", encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, 1):
                line = raw.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                fields = line.split("\t")
                if len(fields) != 2 or not fields[0]:
                    raise MalformedInput(
                        f"line {line_no}: expected 'phoneme<TAB>frames', got {line!r}"
                    )
                try:
                    table[fields[0]] = int(fields[1])
                except ValueError:
                    raise MalformedInput(
                        f"line {line_no}: bad frame count {fields[1]!r}"
                    ) from None
        return cls(table, frame_hop=frame_hop, default_frames=default_frames)


@dataclass(frozen=True)
class ContextModifiers:
    scale: float = 1.0  # global duration scale
    eos_stretch: float = 1.15  # final word of a final input
    no_lookahead_stretch: float = 1.30  # words synthesized without lookahead

    def __post_init__(self) -> None:
        if not 0.0 < self.scale <= 1.5:
            raise ConfigurationError(f"scale must be in (0, 1.5], got {self.scale}")
        if self.eos_stretch < 1.0:
            raise ConfigurationError(f"eos_stretch must be >= 1, got {self.eos_stretch}")
        if self.no_lookahead_stretch < 1.0:
            raise ConfigurationError(
                f"no_lookahead_stretch must be >= 1, got {self.no_lookahead_stretch}"
            )


@dataclass(frozen=True)
class ComputeModel:
    """Synthesis compute cost: fixed overhead plus a per-frame cost.

    Applies to frames synthesized (committed plus lookahead), not frames
    emitted.
    """

    fixed_overhead: TimeSpan = 0.02
    per_frame_cost: TimeSpan = 0.0005

    def __post_init__(self) -> None:
        if self.fixed_overhead < 0 or self.per_frame_cost < 0:
            raise ConfigurationError("compute model costs must be >= 0")

    def compute_time(self, frames_synthesized: int) -> TimeSpan:
        return self.fixed_overhead + self.per_frame_cost * frames_synthesized


def predict_durations(
    words: Sequence[str],
    lexicon: Lexicon,
    table: DurationTable,
    modifiers: ContextModifiers,
    *,
    is_final_input: bool,
    has_lookahead: bool,
) -> list[int]:
    """Per-word frame counts under the given synthesis context.

    ``is_final_input`` marks a word group ending in an EOS-flagged token:
    the last word takes the EOS stretch and the no-lookahead stretch is
    suppressed for the whole group (complete input, full context).
    Deterministic; OOV words use the lexicon's grapheme fallback.
    """
    if not words:
        raise EmptyInput("predict_durations needs at least one word")
    gamma = (
        modifiers.no_lookahead_stretch
        if not has_lookahead and not is_final_input
        else 1.0
    )
    counts: list[int] = []
    for wi, word in enumerate(words):
        beta = modifiers.eos_stretch if is_final_input and wi == len(words) - 1 else 1.0
        factor = modifiers.scale * beta * gamma
        counts.append(
            sum(_round_frames(table.frames(ph) * factor) for ph in lexicon.phonemes(word))
        )
    return counts


@dataclass(frozen=True)
class PlanStep:
    """Inputs of one commit step, kept so plans can be re-derived."""

    committed_words: tuple[str, ...]
    lookahead_words: tuple[str, ...]
    is_final_input: bool
    has_lookahead: bool
    ready_time: float


@dataclass(frozen=True)
class ChunkPlan:
    """A fully planned utterance: commit steps plus the chunks they yield.

    The construction inputs are retained so that :func:`scale_plan` can
    re-derive every frame count from scratch at a different scale.
    """

    utterance_id: str
    strategy_name: str
    steps: tuple[PlanStep, ...]
    chunks: tuple[SynthesisChunk, ...]
    frames_synthesized: tuple[int, ...]
    lexicon: Lexicon
    table: DurationTable
    modifiers: ContextModifiers
    compute: ComputeModel

    @property
    def frames_emitted(self) -> tuple[int, ...]:
        return tuple(chunk.frame_count for chunk in self.chunks)

    @property
    def total_emitted_frames(self) -> int:
        return sum(self.frames_emitted)

    @property
    def total_play_duration(self) -> float:
        return sum(chunk.play_duration for chunk in self.chunks)


def _build_chunks(
    steps: Sequence[PlanStep],
    lexicon: Lexicon,
    table: DurationTable,
    modifiers: ContextModifiers,
    compute: ComputeModel,
) -> tuple[tuple[SynthesisChunk, ...], tuple[int, ...]]:
    chunks: list[SynthesisChunk] = []
    synthesized: list[int] = []
    for index, step in enumerate(steps):
        committed = predict_durations(
            step.committed_words,
            lexicon,
            table,
            modifiers,
            is_final_input=step.is_final_input,
            has_lookahead=step.has_lookahead,
        )
        # Lookahead spans are tentative continuations: plain scaled bases,
        # no finality or starvation stretch.
        lookahead_frames = sum(
            _round_frames(table.frames(ph) * modifiers.scale)
            for word in step.lookahead_words
            for ph in lexicon.phonemes(word)
        )
        emitted = sum(committed)
        total = emitted + lookahead_frames
        chunks.append(
            SynthesisChunk(
                chunk_index=index,
                words=step.committed_words,
                ready_time=step.ready_time,
                compute_time=compute.compute_time(total),
                play_duration=emitted * table.frame_hop,
                frame_count=emitted,
            )
        )
        synthesized.append(total)
    return tuple(chunks), tuple(synthesized)


def plan_chunks(
    utterance: Utterance,
    annotation: LookaheadAnnotation,
    lexicon: Lexicon,
    table: DurationTable,
    modifiers: ContextModifiers,
    compute: ComputeModel,
) -> ChunkPlan:
    """Plan synthesis chunks for an annotated utterance.

    One chunk per commit step; consecutive token steps whose inputs become
    available at the same instant merge into a single chunk (several tokens
    arrived before synthesis could start).  Each chunk synthesizes its
    committed words plus the step's lookahead span but emits only the
    committed frames; ready times are the annotation's, made non-decreasing.
    """
    if annotation.utterance_id != utterance.utterance_id:
        raise MalformedInput(
            f"annotation is for {annotation.utterance_id!r}, "
            f"utterance is {utterance.utterance_id!r}"
        )
    if len(annotation.steps) != len(utterance.tokens):
        raise MalformedInput(
            f"annotation has {len(annotation.steps)} steps for "
            f"{len(utterance.tokens)} tokens"
        )

    # Ready times must be non-decreasing across commits: a later commit
    # cannot complete before an earlier one.
    readies: list[float] = []
    for step in annotation.steps:
        ready = step.ready_time
        if readies and ready < readies[-1]:
            ready = readies[-1]
        readies.append(ready)

    steps: list[PlanStep] = []
    group_words: list[str] = []
    group_eos = False
    group_lookahead: tuple[str, ...] = ()
    group_ready = 0.0

    def close_group() -> None:
        steps.append(
            PlanStep(
                committed_words=tuple(group_words),
                lookahead_words=group_lookahead,
                is_final_input=group_eos,
                has_lookahead=annotation.has_lookahead,
                ready_time=group_ready,
            )
        )

    for token, step, ready in zip(utterance.tokens, annotation.steps, readies):
        lookahead_words = tuple(w for w in step.predicted if w != END_MARKER)
        if group_words and ready - group_ready <= TIME_EPS:
            group_words.append(token.text)
            group_eos = group_eos or token.is_eos
            group_lookahead = lookahead_words
        else:
            if group_words:
                close_group()
            group_words = [token.text]
            group_eos = token.is_eos
            group_lookahead = lookahead_words
            group_ready = ready
    close_group()

    chunks, synthesized = _build_chunks(steps, lexicon, table, modifiers, compute)
    return ChunkPlan(
        utterance_id=utterance.utterance_id,
        strategy_name=annotation.strategy_name,
        steps=tuple(steps),
        chunks=chunks,
        frames_synthesized=synthesized,
        lexicon=lexicon,
        table=table,
        modifiers=modifiers,
        compute=compute,
    )


def scale_plan(plan: ChunkPlan, alpha: float) -> ChunkPlan:
    """Re-derive a plan at duration scale ``alpha``.

    Every frame count is recomputed from the per-phoneme bases (rounding
    happens per phoneme, not by scaling totals); ready times are unchanged
    and compute times are re-derived from the new synthesized frame counts.
    """
    if not 0.0 < alpha <= 1.5:
        raise ConfigurationError(f"scale must be in (0, 1.5], got {alpha}")
    modifiers = replace(plan.modifiers, scale=alpha)
    chunks, synthesized = _build_chunks(
        plan.steps, plan.lexicon, plan.table, modifiers, plan.compute
    )
    return replace(
        plan,
        modifiers=modifiers,
        chunks=chunks,
        frames_synthesized=synthesized,
    )
