"""Core domain types shared by every stage of the matching engine.

Patients and trials are modeled as small bundles of typed attribute sets:
closed integer age intervals, a canonical gender token, phrase sets for
treatments/demographics/diseases, and ontology concept-id sets for
conditions and diagnoses. Everything here is immutable so profiles and
records can be cached, hashed, and shared across threads.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

# Sentinel upper bound for open-ended age intervals. Ages are modeled as
# closed integer intervals within [0, AGE_MAX].
AGE_MAX = 200


class EligibilityLabel(str, Enum):
    """Per-criterion eligibility verdict."""

    ELIGIBLE = "eligible"
    EXCLUDED = "excluded"
    NOT_ENOUGH_INFO = "not_enough_info"


class Polarity(str, Enum):
    """Whether a trial criterion admits (inclusion) or bars (exclusion)."""

    INCLUSION = "inclusion"
    EXCLUSION = "exclusion"


class AttributeCategory(str, Enum):
    """Attribute buckets a criterion can be tagged with."""

    TREATMENT = "treatment"
    DEMOGRAPHIC = "demographic"
    DISEASE = "disease"


# Phrase sets hold normalized free-text phrases; concept sets hold ontology
# concept ids. Plain frozensets keep them hashable and cheap.
PhraseSet = frozenset[str]
ConceptSet = frozenset[str]

_WHITESPACE_RE = re.compile(r"\s+")
_EDGE_CHARS = string.punctuation + string.whitespace


def normalize_phrase(s: str) -> str:
    """Canonicalize a free-text phrase.

    Lowercases, collapses internal whitespace runs to single spaces, and
    strips leading/trailing punctuation. Interior punctuation (hyphens,
    parentheses) is preserved. Idempotent; returns "" for phrases that are
    empty after cleanup, which callers treat as a drop marker.
    """
    s = _WHITESPACE_RE.sub(" ", s.lower())
    return s.strip(_EDGE_CHARS)


def phrase_set(phrases: Iterable[str]) -> PhraseSet:
    """Normalize phrases and drop the empties."""
    return frozenset(p for p in (normalize_phrase(x) for x in phrases) if p)


# ---------------------------------------------------------------------------
# Age intervals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgeSet:
    """A set of ages represented as sorted, disjoint closed integer intervals.

    Construction normalizes the intervals: they are sorted, overlapping or
    integer-adjacent intervals are merged ([18, 30] and [31, 40] become
    [18, 40]), and bounds are validated to be non-negative with lo <= hi.
    The empty AgeSet (no intervals) is valid and matches nothing.
    """

    intervals: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "intervals", _normalize_intervals(self.intervals))

    @classmethod
    def full(cls) -> "AgeSet":
        """The unconstrained age set, used when a record states no bounds."""
        return cls(((0, AGE_MAX),))

    @classmethod
    def single(cls, age: int) -> "AgeSet":
        return cls(((age, age),))

    @classmethod
    def span(cls, lo: int | None, hi: int | None) -> "AgeSet":
        """Build from possibly-open bounds; None means unconstrained."""
        return cls(((0 if lo is None else lo, AGE_MAX if hi is None else hi),))

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    def contains(self, age: int) -> bool:
        return any(lo <= age <= hi for lo, hi in self.intervals)

    def union(self, other: "AgeSet") -> "AgeSet":
        return AgeSet(self.intervals + other.intervals)

    def intersect(self, other: "AgeSet") -> "AgeSet":
        return age_intersect(self, other)

    def __bool__(self) -> bool:
        return not self.is_empty


def _normalize_intervals(
    intervals: Iterable[tuple[int, int]],
) -> tuple[tuple[int, int], ...]:
    pairs = []
    for lo, hi in intervals:
        lo, hi = int(lo), int(hi)
        if lo < 0 or hi < 0:
            raise ValueError(f"age bounds must be non-negative, got [{lo}, {hi}]")
        if hi < lo:
            raise ValueError(f"invalid age interval [{lo}, {hi}]")
        pairs.append((lo, hi))
    pairs.sort()
    merged: list[tuple[int, int]] = []
    for lo, hi in pairs:
        if merged and lo <= merged[-1][1] + 1:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return tuple(merged)


def age_intersect(a: AgeSet, b: AgeSet) -> AgeSet:
    """Intersect two age sets; the result is a subset of each operand."""
    out: list[tuple[int, int]] = []
    i = j = 0
    xs, ys = a.intervals, b.intervals
    while i < len(xs) and j < len(ys):
        lo = max(xs[i][0], ys[j][0])
        hi = min(xs[i][1], ys[j][1])
        if lo <= hi:
            out.append((lo, hi))
        if xs[i][1] < ys[j][1]:
            i += 1
        else:
            j += 1
    return AgeSet(tuple(out))


# ---------------------------------------------------------------------------
# Gender
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gender:
    """Canonical gender token.

    The canonical vocabulary is "Male", "Female", and "All"; any other
    token is preserved in normalized lowercase form. "All" (or "any", in
    any case variation) unifies with every gender.
    """

    token: str

    @classmethod
    def parse(cls, raw: str) -> "Gender":
        t = normalize_phrase(raw)
        if t in ("male", "m"):
            return cls("Male")
        if t in ("female", "f"):
            return cls("Female")
        if t in ("all", "any", ""):
            return cls("All")
        return cls(t)

    @property
    def is_all(self) -> bool:
        return self.token == "All"


GENDER_MALE = Gender("Male")
GENDER_FEMALE = Gender("Female")
GENDER_ALL = Gender("All")


def gender_match(patient: Gender, trial: Gender) -> bool:
    """True when the trial's gender requirement admits the patient.

    "All" on either side matches everything: trials open to all genders
    accept any patient, and a patient with unknown gender is never
    rejected on gender alone.
    """
    return patient.is_all or trial.is_all or patient.token == trial.token


# ---------------------------------------------------------------------------
# Criteria, trials, patients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Criterion:
    """One eligibility criterion of a trial.

    Polarity comes from the structure of the source record (which section
    the criterion was listed under). Categories are assigned by a labeler
    pass and may span several buckets; an empty category set means the
    criterion has not been categorized yet.
    """

    text: str
    polarity: Polarity
    categories: frozenset[AttributeCategory] = frozenset()


@dataclass(frozen=True)
class TrialRecord:
    """A clinical trial as the engine sees it."""

    trial_id: str
    age: AgeSet
    gender: Gender
    condition_raw: PhraseSet
    condition_norm: ConceptSet
    criteria: tuple[Criterion, ...] = ()
    text: str = ""

    def criteria_of(self, polarity: Polarity) -> tuple[Criterion, ...]:
        return tuple(c for c in self.criteria if c.polarity is polarity)


@dataclass(frozen=True)
class PatientProfile:
    """Typed attribute sets extracted from one patient note."""

    patient_id: str
    age: AgeSet
    gender: Gender
    treatment: PhraseSet = frozenset()
    demographics: PhraseSet = frozenset()
    disease: PhraseSet = frozenset()
    diagnosis_raw: PhraseSet = frozenset()
    diagnosis_norm: ConceptSet = frozenset()
    diagnosis_expanded: ConceptSet = frozenset()
    note_text: str = ""

    def attribute_phrases(self, category: AttributeCategory) -> PhraseSet:
        if category is AttributeCategory.TREATMENT:
            return self.treatment
        if category is AttributeCategory.DEMOGRAPHIC:
            return self.demographics
        return self.disease
