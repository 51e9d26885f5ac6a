"""Domain types for multiple-choice QA: items, sampled answers, option frequencies.

Options are addressed by index; generations name them by letter (A, B, C, ...).
Parsing maps a raw generation string to an option index, or to ``None`` when
the text does not name an option.  Invalid generations keep their slot in the
sample, so in frequency mode the per-option probabilities may sum to less
than one -- this deliberately inflates non-conformity for noisy items instead
of hiding model confusion behind renormalization.

All types here are immutable after construction and all operations are pure,
so everything is safe to share across threads.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from enum import Enum

MAX_OPTIONS = 26
OPTION_LETTERS = string.ascii_uppercase

# Probabilities may legitimately sum to slightly more than 1 after float
# normalization; anything beyond this slack is a data error.
PROB_SUM_TOLERANCE = 1e-9

# A single option letter with nothing but punctuation/whitespace around it.
_LETTER_TOKEN = re.compile(r"[^a-z0-9]*([a-z])[^a-z0-9]*")


def option_letter(index: int) -> str:
    """Letter label for an option index (0 -> "A")."""
    if not 0 <= index < MAX_OPTIONS:
        raise ValueError(f"option index {index} outside the A-Z range")
    return OPTION_LETTERS[index]


def parse_generation(raw: str, num_options: int) -> int | None:
    """Map a raw generation to an option index, or ``None`` if unparseable.

    Accepts a single option letter, case-insensitively, optionally wrapped in
    punctuation ("B", " c) ", "(a)."). Anything else -- free text, several
    tokens, digits, letters past the last option -- is invalid.  Multi-token
    answer extraction is deliberately not attempted.
    """
    if num_options < 2:
        raise ValueError("num_options must be >= 2")
    match = _LETTER_TOKEN.fullmatch(raw.strip().casefold())
    if match is None:
        return None
    index = ord(match.group(1)) - ord("a")
    return index if index < num_options else None


@dataclass(frozen=True)
class McqaItem:
    """One multiple-choice question with its ground-truth option index."""

    id: str
    question: str
    options: tuple[str, ...]
    truth: int

    def __post_init__(self) -> None:
        if not isinstance(self.options, tuple):
            object.__setattr__(self, "options", tuple(self.options))
        if not self.id:
            raise ValueError("item id must be a non-empty string")
        if not 2 <= len(self.options) <= MAX_OPTIONS:
            raise ValueError(
                f"item {self.id!r}: expected 2..{MAX_OPTIONS} options, got {len(self.options)}"
            )
        if not 0 <= self.truth < len(self.options):
            raise ValueError(
                f"item {self.id!r}: truth index {self.truth} outside [0, {len(self.options)})"
            )

    @property
    def num_options(self) -> int:
        return len(self.options)


@dataclass(frozen=True)
class SampleRecord:
    """The raw sampled generations for one item, with their parse results.

    ``parsed[k]`` is the option index named by ``raw[k]``, or ``None`` for an
    invalid generation.  Always holds exactly ``m`` entries of each.
    """

    item_id: str
    raw: tuple[str, ...]
    parsed: tuple[int | None, ...]
    m: int

    def __post_init__(self) -> None:
        if not isinstance(self.raw, tuple):
            object.__setattr__(self, "raw", tuple(self.raw))
        if not isinstance(self.parsed, tuple):
            object.__setattr__(self, "parsed", tuple(self.parsed))
        if self.m < 1:
            raise ValueError(f"record {self.item_id!r}: needs at least one sample")
        if len(self.raw) != self.m or len(self.parsed) != self.m:
            raise ValueError(
                f"record {self.item_id!r}: raw/parsed lengths must both equal m={self.m}"
            )

    @classmethod
    def from_raw(cls, item_id: str, raw: "list[str] | tuple[str, ...]", num_options: int) -> "SampleRecord":
        """Parse raw generations against an item with ``num_options`` options."""
        raw_t = tuple(raw)
        parsed = tuple(parse_generation(text, num_options) for text in raw_t)
        return cls(item_id=item_id, raw=raw_t, parsed=parsed, m=len(raw_t))

    @property
    def num_invalid(self) -> int:
        return sum(1 for p in self.parsed if p is None)


class ScoreMode(Enum):
    """Where an item's per-option probabilities come from."""

    FREQUENCY = "frequency"  # counts over sampled generations
    LOGIT = "logit"          # externally supplied model probabilities


@dataclass(frozen=True)
class FrequencyTable:
    """Per-option probabilities for one item.

    In frequency mode ``probs[j] == counts[j] / m`` exactly and invalid
    samples keep the denominator, so the probabilities may sum to less than
    one.  In logit mode the probabilities are taken as given and ``counts``
    and ``m`` are absent.
    """

    item_id: str
    probs: tuple[float, ...]
    mode: ScoreMode
    counts: tuple[int, ...] | None = None
    m: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.probs, tuple):
            object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if self.counts is not None and not isinstance(self.counts, tuple):
            object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if not self.probs:
            raise ValueError(f"table {self.item_id!r}: needs at least one option")
        for j, p in enumerate(self.probs):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"table {self.item_id!r}: probs[{j}]={p} outside [0, 1]")
        if sum(self.probs) > 1.0 + PROB_SUM_TOLERANCE:
            raise ValueError(
                f"table {self.item_id!r}: probabilities sum to {sum(self.probs)} > 1"
            )
        if self.mode is ScoreMode.FREQUENCY:
            if self.counts is None or self.m is None:
                raise ValueError(f"table {self.item_id!r}: frequency mode needs counts and m")
            if self.m < 1:
                raise ValueError(f"table {self.item_id!r}: m must be >= 1")
            if len(self.counts) != len(self.probs):
                raise ValueError(f"table {self.item_id!r}: counts/probs length mismatch")
            if any(c < 0 for c in self.counts):
                raise ValueError(f"table {self.item_id!r}: negative count")
            if sum(self.counts) > self.m:
                raise ValueError(
                    f"table {self.item_id!r}: counts sum to {sum(self.counts)} > m={self.m}"
                )
            for j, (c, p) in enumerate(zip(self.counts, self.probs)):
                if p != c / self.m:
                    raise ValueError(
                        f"table {self.item_id!r}: probs[{j}] != counts[{j}]/m"
                    )
        else:
            if self.counts is not None or self.m is not None:
                raise ValueError(f"table {self.item_id!r}: logit mode carries no counts")

    @classmethod
    def from_counts(cls, item_id: str, counts, m: int) -> "FrequencyTable":
        counts_t = tuple(int(c) for c in counts)
        probs = tuple(c / m for c in counts_t)
        return cls(item_id=item_id, probs=probs, mode=ScoreMode.FREQUENCY, counts=counts_t, m=m)

    @classmethod
    def from_probs(cls, item_id: str, probs) -> "FrequencyTable":
        return cls(item_id=item_id, probs=tuple(float(p) for p in probs), mode=ScoreMode.LOGIT)

    @property
    def num_options(self) -> int:
        return len(self.probs)


def estimate_frequencies(record: SampleRecord, num_options: int) -> FrequencyTable:
    """Count option occurrences among the parsed samples of one record.

    Invalid entries are counted in neither the numerator nor any class; the
    denominator stays ``record.m``.  Deterministic and idempotent.
    """
    if num_options < 2:
        raise ValueError("num_options must be >= 2")
    counts = [0] * num_options
    for k, p in enumerate(record.parsed):
        if p is None:
            continue
        if not 0 <= p < num_options:
            raise ValueError(
                f"record {record.item_id!r}: parsed[{k}]={p} outside [0, {num_options})"
            )
        counts[p] += 1
    return FrequencyTable.from_counts(record.item_id, counts, record.m)


def point_prediction(table: FrequencyTable) -> int:
    """Index of the highest-probability option; ties break to the lowest index."""
    scores = table.counts if table.counts is not None else table.probs
    return max(range(len(scores)), key=scores.__getitem__)
