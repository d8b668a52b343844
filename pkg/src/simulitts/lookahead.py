"""Lookahead strategies for the incremental synthesizer.

The synthesizer produces better prosody when it can see a few tokens past
the words it is about to emit.  Ground-truth lookahead waits for the real
next tokens and pays their emission delay; pseudo lookahead instead asks
the upstream incremental decoder for a greedy continuation, caching and
restoring the decoder state so its real outputs are unchanged.  Random and
stochastic variants provide noise baselines and accuracy-calibrated
stand-ins for experiments.

Correctness of a prediction is string equality with the actual next trace
token after case folding; positions past the end of the trace compare
against :data:`END_MARKER`.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .emission import Utterance
from .errors import ConfigurationError, EmptyInput, MalformedInput
from .timeline import TimeSpan

END_MARKER = "</s>"


@dataclass(frozen=True)
class DecoderState:
    """Opaque snapshot of an incremental decoder's history window."""

    history: tuple[str, ...]


class IncrementalDecoder(Protocol):
    """Behavioral contract for decoders usable as pseudo-lookahead sources.

    ``restore(snapshot())`` must be a no-op with respect to all future
    outputs, and ``best_next`` must not advance the state.
    """

    @property
    def vocabulary(self) -> frozenset[str]: ...

    def step(self, token: str) -> None: ...

    def best_next(self) -> str: ...

    def snapshot(self) -> DecoderState: ...

    def restore(self, state: DecoderState) -> None: ...


class ToyDecoder:
    """Deterministic n-gram next-token model with snapshot/restore.

    A desk-scale stand-in for a real incremental decoder: the state is the
    last ``order - 1`` consumed tokens, and ``best_next`` returns the
    top-ranked successor of the longest known history suffix (counts
    descending, ties lexicographic), falling back to :data:`END_MARKER`.
    """

    def __init__(
        self,
        order: int,
        transitions: Mapping[tuple[str, ...], tuple[str, ...]],
        vocabulary: Iterable[str] = (),
    ) -> None:
        if not 1 <= order <= 3:
            raise ConfigurationError(f"n-gram order must be 1..3, got {order}")
        self.order = order
        self._transitions = dict(transitions)
        vocab = set(vocabulary) | {END_MARKER}
        for ranked in self._transitions.values():
            vocab.update(ranked)
        self._vocabulary = frozenset(vocab)
        self._history: tuple[str, ...] = ()

    @classmethod
    def train(cls, sentences: Iterable[Sequence[str]], order: int = 2) -> "ToyDecoder":
        """Count n-grams over sentences; each sentence ends in END_MARKER."""
        counts: dict[tuple[str, ...], dict[str, int]] = {}
        vocab: set[str] = set()
        for sentence in sentences:
            tokens = list(sentence) + [END_MARKER]
            vocab.update(tokens)
            for i, nxt in enumerate(tokens):
                history = tuple(tokens[max(0, i - (order - 1)) : i])
                counts.setdefault(history, {}).setdefault(nxt, 0)
                counts[history][nxt] += 1
        return cls(order, _rank(counts), vocab)

    @classmethod
    def from_counts_file(cls, path: str | Path, order: int | None = None) -> "ToyDecoder":
        """Load transitions from ``history_tokens <TAB> next_token <TAB> count`` lines."""
        counts: dict[tuple[str, ...], dict[str, int]] = {}
        max_history = 0
        with Path(path).open("r", encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, 1):
                line = raw.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                fields = line.split("\t")
                if len(fields) != 3:
                    raise MalformedInput(
                        f"line {line_no}: expected 3 tab-separated fields, got {len(fields)}"
                    )
                history = tuple(fields[0].split()) if fields[0].strip() else ()
                try:
                    count = int(fields[2])
                except ValueError:
                    raise MalformedInput(f"line {line_no}: bad count {fields[2]!r}") from None
                if count < 1:
                    raise MalformedInput(f"line {line_no}: count must be >= 1")
                max_history = max(max_history, len(history))
                counts.setdefault(history, {}).setdefault(fields[1], 0)
                counts[history][fields[1]] += count
        if order is None:
            order = max_history + 1
        return cls(order, _rank(counts))

    @property
    def vocabulary(self) -> frozenset[str]:
        return self._vocabulary

    def reset(self) -> None:
        self._history = ()

    def step(self, token: str) -> None:
        window = self.order - 1
        self._history = (self._history + (token,))[-window:] if window else ()

    def best_next(self) -> str:
        for start in range(len(self._history) + 1):
            ranked = self._transitions.get(self._history[start:])
            if ranked:
                return ranked[0]
        return END_MARKER

    def snapshot(self) -> DecoderState:
        return DecoderState(self._history)

    def restore(self, state: DecoderState) -> None:
        self._history = state.history


def _rank(counts: Mapping[tuple[str, ...], Mapping[str, int]]) -> dict[tuple[str, ...], tuple[str, ...]]:
    return {
        history: tuple(sorted(successors, key=lambda tok: (-successors[tok], tok)))
        for history, successors in counts.items()
    }


def generate_pseudo(decoder: IncrementalDecoder, k: int) -> list[str]:
    """Greedy continuation of length up to k, leaving the decoder unchanged.

    The decoder state is snapshotted before the extra decoding steps and
    restored afterwards, so real outputs are identical whether or not this
    was called.  Generation stops early once END_MARKER is produced (the
    marker is included in the result).
    """
    if k < 1:
        raise ConfigurationError(f"lookahead depth must be >= 1, got {k}")
    saved = decoder.snapshot()
    out: list[str] = []
    try:
        for _ in range(k):
            token = decoder.best_next()
            out.append(token)
            if token == END_MARKER:
                break
            decoder.step(token)
    finally:
        decoder.restore(saved)
    return out


# --- Strategies -----------------------------------------------------------


@dataclass(frozen=True)
class LookaheadStrategy:
    """Base policy object; concrete variants below."""

    @property
    def depth(self) -> int:
        return 0

    @property
    def name(self) -> str:
        raise NotImplementedError

    @property
    def provides_lookahead(self) -> bool:
        return self.depth > 0


@dataclass(frozen=True)
class NoLookahead(LookaheadStrategy):
    """Synthesize currently available words without waiting or predicting."""

    @property
    def name(self) -> str:
        return "none"


@dataclass(frozen=True)
class GroundTruthLookahead(LookaheadStrategy):
    """Wait for the next k real tokens before synthesizing each word."""

    depth: int = 1

    def __post_init__(self) -> None:
        _require_depth(self.depth)

    @property
    def name(self) -> str:
        return f"ground_truth_k{self.depth}"


@dataclass(frozen=True)
class PseudoLookahead(LookaheadStrategy):
    """Greedy continuation from the upstream decoder, no waiting.

    ``per_step_overhead`` is the cost of one extra decoding step; a step
    that generates m lookahead tokens is ready m overheads after its token
    was emitted.
    """

    depth: int = 1
    per_step_overhead: TimeSpan = 0.01

    def __post_init__(self) -> None:
        _require_depth(self.depth)
        if self.per_step_overhead < 0:
            raise ConfigurationError("per_step_overhead must be >= 0")

    @property
    def name(self) -> str:
        return f"pseudo_k{self.depth}"


@dataclass(frozen=True)
class RandomLookahead(LookaheadStrategy):
    """Noise baseline: uniform draws over the vocabulary minus the correct token.

    Correctness flags are therefore unambiguously false; equivalent to
    ``StochasticLookahead(accuracy=0)``.
    """

    depth: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        _require_depth(self.depth)

    @property
    def name(self) -> str:
        return f"random_k{self.depth}"


@dataclass(frozen=True)
class StochasticLookahead(LookaheadStrategy):
    """Accuracy-calibrated stand-in: each position is correct with probability p."""

    accuracy: float = 0.7
    depth: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        _require_depth(self.depth)
        if not 0.0 <= self.accuracy <= 1.0:
            raise ConfigurationError(f"accuracy must be in [0, 1], got {self.accuracy}")

    @property
    def name(self) -> str:
        return f"stochastic_p{self.accuracy:g}_k{self.depth}"


def _require_depth(depth: int) -> None:
    if depth < 1:
        raise ConfigurationError(f"lookahead depth must be >= 1, got {depth}")


# --- Annotation -----------------------------------------------------------


@dataclass(frozen=True)
class StepAnnotation:
    """Lookahead view at one token step.

    ``ready_time`` is when everything the synthesizer uses at this step
    (the token itself plus any lookahead) was available.
    """

    token_index: int
    predicted: tuple[str, ...]
    correct: tuple[bool, ...]
    ready_time: float


@dataclass(frozen=True)
class LookaheadAnnotation:
    utterance_id: str
    strategy_name: str
    depth: int
    has_lookahead: bool
    steps: tuple[StepAnnotation, ...] = field(default_factory=tuple)


def _actual_token(utterance: Utterance, position: int) -> str:
    """Token text at 0-based position, END_MARKER past the end."""
    if position < len(utterance.tokens):
        return utterance.tokens[position].text
    return END_MARKER


def _flags(utterance: Utterance, step: int, predicted: Sequence[str]) -> tuple[bool, ...]:
    return tuple(
        pred.casefold() == _actual_token(utterance, step + 1 + j).casefold()
        for j, pred in enumerate(predicted)
    )


def _resolve_vocabulary(
    utterance: Utterance,
    decoder: IncrementalDecoder | None,
    vocabulary: Sequence[str] | None,
) -> tuple[str, ...]:
    if vocabulary is not None:
        vocab = set(vocabulary) | {END_MARKER}
    elif decoder is not None:
        vocab = set(decoder.vocabulary) | {END_MARKER}
    else:
        vocab = {t.text for t in utterance.tokens} | {END_MARKER}
    return tuple(sorted(vocab))


def _draw_wrong(rng: random.Random, vocab: tuple[str, ...], correct: str) -> str:
    candidates = [tok for tok in vocab if tok != correct]
    if not candidates:
        raise ConfigurationError(
            "vocabulary must contain at least one token besides the correct one"
        )
    return rng.choice(candidates)


def annotate(
    utterance: Utterance,
    strategy: LookaheadStrategy,
    decoder: IncrementalDecoder | None = None,
    vocabulary: Sequence[str] | None = None,
) -> LookaheadAnnotation:
    """Per-step lookahead predictions and ready times for one utterance.

    Ready times by variant (t is the 1-based step, emit(t) its token's
    emission time, n the token count):

    * none / random / stochastic: emit(t) — nothing is waited for;
    * ground truth, depth k: emit(min(t + k, n)); steps past the last
      token predict END_MARKER and are ready at the last emit time;
    * pseudo: emit(t) plus one decoding overhead per generated token.
      A step whose token carries the EOS flag generates nothing (the
      input is complete) and is ready at emit(t).

    Pseudo requires a decoder positioned at its start state; the decoder's
    state is restored before returning.
    """
    steps: list[StepAnnotation] = []
    tokens = utterance.tokens
    n = len(tokens)

    if isinstance(strategy, NoLookahead):
        steps = [
            StepAnnotation(t.index, (), (), t.emit_time) for t in tokens
        ]
    elif isinstance(strategy, GroundTruthLookahead):
        k = strategy.depth
        for i, token in enumerate(tokens):
            predicted = [t.text for t in tokens[i + 1 : i + 1 + k]]
            if len(predicted) < k:
                predicted.append(END_MARKER)
            ready = tokens[min(i + k, n - 1)].emit_time
            steps.append(
                StepAnnotation(token.index, tuple(predicted), _flags(utterance, i, predicted), ready)
            )
    elif isinstance(strategy, PseudoLookahead):
        if decoder is None:
            raise ConfigurationError("pseudo lookahead requires a decoder")
        saved = decoder.snapshot()
        try:
            for i, token in enumerate(tokens):
                decoder.step(token.text)
                if token.is_eos:
                    predicted: list[str] = []
                else:
                    predicted = generate_pseudo(decoder, strategy.depth)
                ready = token.emit_time + len(predicted) * strategy.per_step_overhead
                steps.append(
                    StepAnnotation(
                        token.index, tuple(predicted), _flags(utterance, i, predicted), ready
                    )
                )
        finally:
            decoder.restore(saved)
    elif isinstance(strategy, (RandomLookahead, StochasticLookahead)):
        vocab = _resolve_vocabulary(utterance, decoder, vocabulary)
        rng = random.Random(f"{strategy.seed}:{strategy.name}:{utterance.utterance_id}")
        p = strategy.accuracy if isinstance(strategy, StochasticLookahead) else 0.0
        for i, token in enumerate(tokens):
            predicted = []
            for j in range(strategy.depth):
                actual = _actual_token(utterance, i + 1 + j)
                if p > 0.0 and rng.random() < p:
                    predicted.append(actual)
                else:
                    predicted.append(_draw_wrong(rng, vocab, actual))
            steps.append(
                StepAnnotation(token.index, tuple(predicted), _flags(utterance, i, predicted), token.emit_time)
            )
    else:
        raise ConfigurationError(f"unknown lookahead strategy {strategy!r}")

    return LookaheadAnnotation(
        utterance_id=utterance.utterance_id,
        strategy_name=strategy.name,
        depth=strategy.depth,
        has_lookahead=strategy.provides_lookahead,
        steps=tuple(steps),
    )


def lookahead_accuracy(annotation: LookaheadAnnotation) -> float:
    """Fraction of steps whose first predicted token matches the trace."""
    firsts = [step.correct[0] for step in annotation.steps if step.predicted]
    if not firsts:
        raise EmptyInput(
            f"annotation for {annotation.utterance_id!r} carries no predictions"
        )
    return sum(firsts) / len(firsts)
