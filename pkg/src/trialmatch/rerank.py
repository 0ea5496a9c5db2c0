"""Deontically gated re-ranking of retrieved candidates.

A gate first decides whether a trial may be ranked at all: it must be
relevant on age, gender, and condition simultaneously; in strict mode any
exclusion evidence is disqualifying; and in both modes a trial with no
eligible evidence anywhere is rejected rather than ranked on ignorance.
Survivors are scored by one of a family of label-proportion functions and
reordered by score.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, NamedTuple

from .labeling.judgments import TrialJudgments
from .model import (
    AttributeCategory,
    EligibilityLabel,
    PatientProfile,
    Polarity,
    TrialRecord,
    age_intersect,
    gender_match,
)
from .retrieval import Provenance, RankedList


class GateMode(str, Enum):
    STRICT = "strict"
    LENIENT = "lenient"


class RejectReason(str, Enum):
    NOT_RELEVANT = "not_relevant"
    EXCLUSION_EVIDENCE = "exclusion_evidence"
    NO_ELIGIBLE_EVIDENCE = "no_eligible_evidence"


class MissingJudgmentsError(Exception):
    """A candidate lacks the labels the chosen scoring method requires."""


@dataclass(frozen=True)
class RelevanceSignal:
    """Non-emptiness of the three relevance intersections for one pair."""

    age_overlap: bool
    gender_ok: bool
    condition_overlap: bool

    @classmethod
    def from_pair(cls, patient: PatientProfile, trial: TrialRecord) -> "RelevanceSignal":
        return cls(
            age_overlap=bool(age_intersect(patient.age, trial.age)),
            gender_ok=gender_match(patient.gender, trial.gender),
            condition_overlap=bool(
                patient.diagnosis_expanded & trial.condition_norm
            ),
        )

    @property
    def relevant(self) -> bool:
        return self.age_overlap and self.gender_ok and self.condition_overlap


@dataclass(frozen=True)
class GateDecision:
    admitted: bool
    reason: RejectReason | None = None


def deontic_gate(
    signal: RelevanceSignal, judgments: TrialJudgments, mode: GateMode
) -> GateDecision:
    """Admit or reject one candidate.

    Checks run in a fixed order: relevance on all three attributes, then
    (strict mode only) absence of any exclusion evidence in fine or coarse
    labels, then presence of at least one piece of eligible evidence.
    A strict admit implies a lenient admit.
    """
    if not signal.relevant:
        return GateDecision(False, RejectReason.NOT_RELEVANT)
    if mode is GateMode.STRICT:
        if judgments.has_label(EligibilityLabel.EXCLUDED) or (
            judgments.coarse is EligibilityLabel.EXCLUDED
        ):
            return GateDecision(False, RejectReason.EXCLUSION_EVIDENCE)
    if not judgments.has_label(EligibilityLabel.ELIGIBLE) and not (
        judgments.coarse is EligibilityLabel.ELIGIBLE
    ):
        return GateDecision(False, RejectReason.NO_ELIGIBLE_EVIDENCE)
    return GateDecision(True)


# ---------------------------------------------------------------------------
# Label counting
# ---------------------------------------------------------------------------

Bucket = tuple[AttributeCategory, Polarity, EligibilityLabel]


@dataclass(frozen=True)
class LabelCounts:
    """Label tallies per (attribute category, polarity, label) bucket."""

    counts: Mapping[Bucket, int] = field(default_factory=dict)

    def count(
        self,
        category: AttributeCategory | None = None,
        polarity: Polarity | None = None,
        label: EligibilityLabel | None = None,
    ) -> int:
        """Sum over the buckets matching the given coordinates (None = any)."""
        total = 0
        for (cat, pol, lab), n in self.counts.items():
            if category is not None and cat is not category:
                continue
            if polarity is not None and pol is not polarity:
                continue
            if label is not None and lab is not label:
                continue
            total += n
        return total

    def total(
        self,
        category: AttributeCategory | None = None,
        polarity: Polarity | None = None,
    ) -> int:
        """Criterion-value count in the bucket, NOT_ENOUGH_INFO included."""
        return self.count(category, polarity, None)


def count_labels(
    judgments: TrialJudgments, multi_category: str = "per-bucket"
) -> LabelCounts:
    """Tally fine labels into attribute/polarity buckets.

    "per-bucket" (default) counts a multi-category criterion once in every
    bucket it carries; "once" attributes it to a single bucket (the first
    category in enum order), a sensitivity-analysis alternative.
    """
    if multi_category not in ("per-bucket", "once"):
        raise ValueError(f"unknown multi_category mode {multi_category!r}")
    order = list(AttributeCategory)
    counts: dict[Bucket, int] = {}
    for j in judgments.fine:
        cats = j.criterion.categories or frozenset({AttributeCategory.DISEASE})
        if multi_category == "once":
            cats = frozenset({min(cats, key=order.index)})
        for cat in cats:
            bucket = (cat, j.criterion.polarity, j.label)
            counts[bucket] = counts.get(bucket, 0) + 1
    return LabelCounts(counts)


# ---------------------------------------------------------------------------
# Scoring methods
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoringMethod:
    """A scoring function selector.

    kind is one of: ie, fie, fio, ee, ge, contrast, wcontrast, cg, hybrid,
    restricted_ie. wcontrast takes alpha/beta weights; restricted_ie takes
    the single attribute to score over.
    """

    kind: str
    alpha: float = 1.0
    beta: float = 2.0
    attribute: AttributeCategory | None = None

    KINDS = (
        "ie",
        "fie",
        "fio",
        "ee",
        "ge",
        "contrast",
        "wcontrast",
        "cg",
        "hybrid",
        "restricted_ie",
    )

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown scoring kind {self.kind!r}")
        if self.kind == "restricted_ie" and self.attribute is None:
            raise ValueError("restricted_ie needs an attribute")

    @property
    def needs_fine(self) -> bool:
        return self.kind != "cg"

    @property
    def needs_coarse(self) -> bool:
        return self.kind in ("cg", "hybrid")

    @property
    def label(self) -> str:
        if self.kind == "restricted_ie":
            assert self.attribute is not None
            return f"{self.attribute.value}-only"
        if self.kind == "wcontrast":
            return f"wcontrast:{self.alpha:g}:{self.beta:g}"
        return self.kind


_METHOD_ALIASES = {
    "disease-only": AttributeCategory.DISEASE,
    "demo-only": AttributeCategory.DEMOGRAPHIC,
    "demographic-only": AttributeCategory.DEMOGRAPHIC,
    "treatment-only": AttributeCategory.TREATMENT,
}


def parse_method(token: str) -> ScoringMethod:
    """Parse a method token like "hybrid", "wcontrast:1:2", "disease-only"."""
    token = token.strip().lower()
    if token in _METHOD_ALIASES:
        return ScoringMethod("restricted_ie", attribute=_METHOD_ALIASES[token])
    if token.startswith("wcontrast"):
        parts = token.split(":")
        alpha = float(parts[1]) if len(parts) > 1 else 1.0
        beta = float(parts[2]) if len(parts) > 2 else 2.0
        return ScoringMethod("wcontrast", alpha=alpha, beta=beta)
    return ScoringMethod(token)


class Score(NamedTuple):
    value: float
    empty_denominator: bool = False


def _ratio(numerator: float, denominator: int) -> Score:
    if denominator == 0:
        return Score(0.0, True)
    return Score(numerator / denominator, False)


def score_judgments(
    judgments: TrialJudgments,
    method: ScoringMethod,
    prior_ov: float = 0.0,
    multi_category: str = "per-bucket",
) -> Score:
    """Score one candidate's judgments under the chosen method.

    prior_ov is the first-stage overlap score, used only by cg. A zero
    denominator yields score 0 with the empty_denominator flag set;
    missing required labels raise MissingJudgmentsError.
    """
    if method.needs_coarse and judgments.coarse is None:
        raise MissingJudgmentsError(
            f"method {method.label} needs a coarse label for trial {judgments.trial_id}"
        )
    if method.kind == "cg":
        boost = 1.0 if judgments.coarse is EligibilityLabel.ELIGIBLE else 0.0
        return Score(prior_ov + boost, False)

    if not judgments.fine:
        raise MissingJudgmentsError(
            f"method {method.label} needs fine labels for trial {judgments.trial_id}"
        )
    c = count_labels(judgments, multi_category)
    eligible = EligibilityLabel.ELIGIBLE
    excluded = EligibilityLabel.EXCLUDED

    def inclusion_eligible() -> Score:
        return _ratio(
            c.count(None, Polarity.INCLUSION, eligible),
            c.total(None, Polarity.INCLUSION),
        )

    if method.kind == "ie":
        return inclusion_eligible()
    if method.kind == "fie":
        if c.count(None, None, excluded) > 0:
            return Score(0.0, False)
        return inclusion_eligible()
    if method.kind == "fio":
        if c.count(None, Polarity.INCLUSION, excluded) > 0:
            return Score(0.0, False)
        return inclusion_eligible()
    if method.kind == "ee":
        return _ratio(
            c.count(None, Polarity.EXCLUSION, eligible),
            c.total(None, Polarity.EXCLUSION),
        )
    if method.kind == "ge":
        return _ratio(c.count(None, None, eligible), c.total())
    if method.kind == "contrast":
        return _ratio(
            c.count(None, None, eligible) - c.count(None, None, excluded),
            c.total(),
        )
    if method.kind == "wcontrast":
        return _ratio(
            method.alpha * c.count(None, None, eligible)
            - method.beta * c.count(None, None, excluded),
            c.total(),
        )
    if method.kind == "restricted_ie":
        return _ratio(
            c.count(method.attribute, Polarity.INCLUSION, eligible),
            c.total(method.attribute, Polarity.INCLUSION),
        )
    if method.kind == "hybrid":
        base = inclusion_eligible()
        boost = 1.0 if judgments.coarse is EligibilityLabel.ELIGIBLE else 0.0
        return Score(base.value + boost, base.empty_denominator)
    raise AssertionError(f"unhandled method kind {method.kind}")


# ---------------------------------------------------------------------------
# Re-ranking
# ---------------------------------------------------------------------------


def rerank(
    candidates: RankedList,
    judgments: Mapping[str, TrialJudgments],
    relevance: Mapping[str, RelevanceSignal],
    method: ScoringMethod,
    gate_mode: GateMode = GateMode.STRICT,
    multi_category: str = "per-bucket",
) -> RankedList:
    """Gate and re-score a candidate list.

    Rejected candidates are dropped. In lenient mode exclusion evidence
    does not reject (the scoring functions penalize it instead), but the
    relevance and eligible-evidence relations still apply. Survivors are
    ordered by provenance class (condition-sourced above backfilled), then
    score descending, then first-stage score descending, then trial id.
    """
    rows = []
    for entry in candidates:
        j = judgments.get(entry.trial_id)
        if j is None:
            raise MissingJudgmentsError(f"no judgments for trial {entry.trial_id}")
        sig = relevance.get(entry.trial_id)
        if sig is None:
            raise MissingJudgmentsError(f"no relevance signal for trial {entry.trial_id}")
        decision = deontic_gate(sig, j, gate_mode)
        if not decision.admitted:
            continue
        s = score_judgments(j, method, prior_ov=entry.score, multi_category=multi_category)
        rows.append((entry, s.value))
    rows.sort(
        key=lambda pair: (
            pair[0].provenance is Provenance.BACKFILL,
            -pair[1],
            -pair[0].score,
            pair[0].trial_id,
        )
    )
    return RankedList.from_scored(
        [(e.trial_id, s, e.provenance) for e, s in rows]
    )
