"""Corpus tooling: training-manifest prefix augmentation and alignment import.

Prefix augmentation prepares manifests for synthesizers that must handle
partial inputs: every full sentence is kept (tagged with the EOS marker)
and one true prefix of a third or two thirds of its length is added,
untagged, so the corpus keeps a 1:1 prefix-to-full ratio.

Alignment import converts per-word alignment timestamps into the token
trace format consumed by the rest of the pipeline, using each word's end
time as its emission time.

File formats (UTF-8, # comments):

* alignment input: ``utterance_id <TAB> word <TAB> start_s <TAB> end_s``
* manifest: ``sentence_id <TAB> word word ... [<EOS>]``
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .emission import EMIT_JITTER, TokenEvent, Utterance, write_trace
from .errors import EmptyInput, MalformedInput

logger = logging.getLogger(__name__)

EOS_MARKER = "<EOS>"


@dataclass(frozen=True)
class ManifestEntry:
    """One training sentence; full sentences carry the EOS marker on disk."""

    sentence_id: str
    words: tuple[str, ...]
    is_full: bool

    def __post_init__(self) -> None:
        if not self.words:
            raise MalformedInput(f"manifest entry {self.sentence_id!r} has no words")
        if EOS_MARKER in self.words:
            raise MalformedInput(
                f"manifest entry {self.sentence_id!r}: {EOS_MARKER} belongs in the "
                "is_full flag, not in the word list"
            )


def augment_prefixes(
    manifest: Sequence[ManifestEntry], seed: int
) -> list[ManifestEntry]:
    """Add one untagged prefix per full sentence, keeping every full entry.

    The prefix length is ceil(L/3) or ceil(2L/3), chosen uniformly with the
    given seed; a draw equal to the full length is skipped, so the
    prefix-to-full ratio is at most 1 and exactly 1 when no sentence is
    short enough to skip.
    """
    if not manifest:
        raise EmptyInput("manifest is empty")
    rng = random.Random(seed)
    out: list[ManifestEntry] = []
    for entry in manifest:
        length = len(entry.words)
        out.append(ManifestEntry(entry.sentence_id, entry.words, is_full=True))
        pick = rng.choice((math.ceil(length / 3), math.ceil(2 * length / 3)))
        if pick < length:
            out.append(
                ManifestEntry(
                    f"{entry.sentence_id}-prefix{pick}",
                    entry.words[:pick],
                    is_full=False,
                )
            )
    return out


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0]:
                raise MalformedInput(
                    f"line {line_no}: expected 'sentence_id<TAB>words', got {line!r}"
                )
            words = fields[1].split()
            is_full = bool(words) and words[-1] == EOS_MARKER
            if is_full:
                words = words[:-1]
            if not words:
                raise MalformedInput(f"line {line_no}: sentence has no words")
            entries.append(ManifestEntry(fields[0], tuple(words), is_full))
    return entries


def write_manifest(entries: Iterable[ManifestEntry], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for entry in entries:
            words = " ".join(entry.words)
            suffix = f" {EOS_MARKER}" if entry.is_full else ""
            fh.write(f"{entry.sentence_id}\t{words}{suffix}\n")


def utterances_from_alignment(
    rows: Iterable[tuple[str, str, float, float]],
) -> list[Utterance]:
    """Token traces from per-word alignment rows (id, word, start, end).

    A word's emission time is its end timestamp: it is available to a
    downstream consumer only once fully spoken.  Tied end times are
    jittered forward by 1 us; the last word of each utterance is
    EOS-flagged and the utterance's source duration is its last end time.
    Utterances with no words are skipped with a warning.
    """
    grouped: dict[str, list[tuple[str, float, float]]] = {}
    order: list[str] = []
    for uid, word, start, end in rows:
        if uid not in grouped:
            grouped[uid] = []
            order.append(uid)
        if not word:
            logger.warning("utterance %r: skipping entry with empty word", uid)
            continue
        grouped[uid].append((word, start, end))

    utterances: list[Utterance] = []
    for uid in order:
        words = grouped[uid]
        if not words:
            logger.warning("utterance %r has no words; skipped", uid)
            continue
        tokens: list[TokenEvent] = []
        prev_end = -math.inf
        prev_emit = -math.inf
        for i, (word, _start, end) in enumerate(words):
            if end < prev_end:
                raise MalformedInput(
                    f"utterance {uid!r}: end timestamps decrease at word {i}"
                )
            prev_end = end
            emit = end if end > prev_emit else prev_emit + EMIT_JITTER
            prev_emit = emit
            tokens.append(
                TokenEvent(i, word, emit, is_eos=i == len(words) - 1)
            )
        utterances.append(
            Utterance(uid, tuple(tokens), source_duration=words[-1][2])
        )
    return utterances


def read_alignment(path: str | Path) -> list[tuple[str, str, float, float]]:
    rows: list[tuple[str, str, float, float]] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4 or not fields[0]:
                raise MalformedInput(
                    f"line {line_no}: expected 'utterance_id<TAB>word<TAB>start<TAB>end', "
                    f"got {line!r}"
                )
            try:
                start, end = float(fields[2]), float(fields[3])
            except ValueError:
                raise MalformedInput(f"line {line_no}: bad timestamp") from None
            if start < 0 or end < 0:
                raise MalformedInput(f"line {line_no}: timestamps must be >= 0")
            if end < start:
                raise MalformedInput(f"line {line_no}: end before start")
            rows.append((fields[0], fields[1], start, end))
    return rows


def alignment_to_trace(alignment_path: str | Path, trace_path: str | Path) -> int:
    """Convert an alignment file to a trace file; returns the utterance count."""
    utterances = utterances_from_alignment(read_alignment(alignment_path))
    write_trace(utterances, trace_path)
    return len(utterances)
