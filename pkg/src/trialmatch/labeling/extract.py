"""Attribute extraction and label orchestration.

This layer renders prompts, routes them to a labeler, parses and validates
the responses, and applies the degradation rules: every labeler call gets
one repair re-prompt, after which fine labels degrade to NOT_ENOUGH_INFO
and coarse labels fail closed to EXCLUDED, both flagged as degraded.
"""

from __future__ import annotations

import dataclasses
import re
from typing import Sequence, TypeVar

from ..model import (
    AgeSet,
    AttributeCategory,
    Criterion,
    EligibilityLabel,
    Gender,
    PatientProfile,
    Polarity,
    TrialRecord,
    normalize_phrase,
    phrase_set,
)
from .cache import CacheKey, LabelCache
from .judgments import (
    CriterionJudgment,
    EmptyNoteError,
    MalformedLabelerOutput,
    MissingCriteriaSectionError,
    TrialJudgments,
)
from .labelers import (
    KIND_CATEGORIES,
    KIND_COARSE,
    KIND_FINE,
    KIND_PATIENT_EXTRACTION,
    BaseLabeler,
    LabelRequest,
)
from .parsing import (
    parse_categories_response,
    parse_coarse_response,
    parse_fine_response,
    parse_patient_extraction,
)
from .templates import (
    COARSE_LABEL,
    CRITERION_CATEGORIES,
    EXCLUSION_LABELS,
    INCLUSION_LABELS,
    PATIENT_EXTRACTION,
    load_template,
    render_coarse_label,
    render_criterion_categories,
    render_fine_labels,
    render_patient_extraction,
)

# One repair re-prompt per call before degradation kicks in.
REPAIR_ATTEMPTS = 1

# ---------------------------------------------------------------------------
# Demographic scans: ages and genders from extracted phrases
# ---------------------------------------------------------------------------

_AGE_CONTEXT_RE = re.compile(r"\bage|\byear|\by/?o\b")
_RANGE_RE = re.compile(r"\b(\d{1,3})\s*(?:-|to)\s*(\d{1,3})\b")
_OVER_RE = re.compile(r"\b(?:over|older than|above)\s+(\d{1,3})\b")
_AT_LEAST_RE = re.compile(
    r"\b(?:at least|minimum(?: age)?(?: of)?)\s+(\d{1,3})\b"
    r"|\b(\d{1,3})\s*\+"
    r"|\b(\d{1,3})\s+(?:or|and)\s+(?:older|above)\b"
)
_UNDER_RE = re.compile(r"\b(?:under|younger than|below)\s+(\d{1,3})\b")
_AT_MOST_RE = re.compile(
    r"\b(?:up to|maximum(?: age)?(?: of)?)\s+(\d{1,3})\b|\b(\d{1,3})\s+or younger\b"
)
_SINGLE_RE = re.compile(
    r"\b(\d{1,3})\s*-?\s*year(?:s)?(?:\s*-?\s*old)?\b|\bage[d]?\s*:?\s*(\d{1,3})\b"
)
_FEMALE_RE = re.compile(r"\b(female|woman|women|girls?)\b")
_MALE_RE = re.compile(r"\b(male|man|men|boys?)\b")


def scan_age(phrases: Sequence[str]) -> AgeSet:
    """Age evidence from free-text phrases, as a union of intervals.

    Ranges ("age 18-30 or 50-70"), one-sided bounds ("over 40", "under
    65", "18 or older"), and single mentions ("62-year-old", "45 years")
    are all recognized; a phrase only counts when it carries age context
    (an age/year token), so "bmi 25-30" is not an age. Returns the empty
    AgeSet when nothing matches; callers substitute the full range.
    """
    from ..model import AGE_MAX

    intervals: list[tuple[int, int]] = []
    for raw in phrases:
        phrase = normalize_phrase(raw)
        if not phrase or not _AGE_CONTEXT_RE.search(phrase):
            continue
        masked = phrase
        for m in _RANGE_RE.finditer(phrase):
            lo, hi = int(m.group(1)), int(m.group(2))
            if lo <= hi <= AGE_MAX:
                intervals.append((lo, hi))
                masked = masked[: m.start()] + " " * (m.end() - m.start()) + masked[m.end() :]
        spans: list[tuple[int, int]] = []
        for rx, build in (
            (_OVER_RE, lambda v: (v + 1, AGE_MAX)),
            (_AT_LEAST_RE, lambda v: (v, AGE_MAX)),
            (_UNDER_RE, lambda v: (0, max(0, v - 1))),
            (_AT_MOST_RE, lambda v: (0, v)),
        ):
            for m in rx.finditer(masked):
                value = int(next(g for g in m.groups() if g))
                if value <= AGE_MAX:
                    intervals.append(build(value))
                    spans.append(m.span())
        for start, end in spans:
            masked = masked[:start] + " " * (end - start) + masked[end:]
        for m in _SINGLE_RE.finditer(masked):
            value = int(m.group(1) or m.group(2))
            if value <= AGE_MAX:
                intervals.append((value, value))
    return AgeSet(tuple(intervals))


def scan_gender(phrases: Sequence[str]) -> Gender:
    """Gender evidence from phrases; conflicting or absent evidence is All."""
    female = male = False
    for raw in phrases:
        phrase = normalize_phrase(raw)
        female = female or bool(_FEMALE_RE.search(phrase))
        male = male or bool(_MALE_RE.search(phrase))
    if female and not male:
        return Gender("Female")
    if male and not female:
        return Gender("Male")
    return Gender("All")


# ---------------------------------------------------------------------------
# Response-to-criterion alignment
# ---------------------------------------------------------------------------

T = TypeVar("T")


def _align(texts: Sequence[str], pairs: Sequence[tuple[str, T]]) -> list[T | None]:
    """Match parsed (criterion text, value) pairs back onto the criteria.

    Text matches (normalized equality or containment) win; leftover pairs
    fill leftover slots in order when the counts agree. Unmatched criteria
    stay None and are degraded by the caller.
    """
    assigned: list[T | None] = [None] * len(texts)
    norm_texts = [normalize_phrase(t) for t in texts]
    used: set[int] = set()
    for pi, (ptext, value) in enumerate(pairs):
        ptext = normalize_phrase(ptext)
        if not ptext:
            continue
        for i, nt in enumerate(norm_texts):
            if assigned[i] is None and nt and (ptext == nt or ptext in nt or nt in ptext):
                assigned[i] = value
                used.add(pi)
                break
    leftovers = [pi for pi in range(len(pairs)) if pi not in used]
    empty = [i for i in range(len(texts)) if assigned[i] is None]
    if leftovers and len(leftovers) == len(empty):
        for i, pi in zip(empty, leftovers):
            assigned[i] = pairs[pi][1]
    return assigned


# ---------------------------------------------------------------------------
# Patient and trial extraction
# ---------------------------------------------------------------------------


def extract_patient(patient_id: str, note: str, labeler: BaseLabeler) -> PatientProfile:
    """Extract the typed attribute sets of one patient note.

    Age and gender are derived from the extracted demographic phrases by
    deterministic scans; missing evidence widens to the full age range and
    the All gender, so demographic filtering never rejects on ignorance.
    Raises EmptyNoteError or, after the repair attempt, MalformedLabelerOutput.
    """
    if not note.strip():
        raise EmptyNoteError(f"patient {patient_id} has an empty note")
    template = load_template(PATIENT_EXTRACTION)
    request = LabelRequest(
        kind=KIND_PATIENT_EXTRACTION,
        template=template,
        prompt=render_patient_extraction(template, note),
        note=note,
        patient_id=patient_id,
    )
    data = None
    error: MalformedLabelerOutput | None = None
    for _ in range(REPAIR_ATTEMPTS + 1):
        try:
            data = parse_patient_extraction(labeler.respond(request))
            break
        except MalformedLabelerOutput as exc:
            error = exc
    if data is None:
        assert error is not None
        raise error
    age = scan_age(data["demographics"])
    return PatientProfile(
        patient_id=patient_id,
        age=age if not age.is_empty else AgeSet.full(),
        gender=scan_gender(data["demographics"]),
        treatment=phrase_set(data["treatment"]),
        demographics=phrase_set(data["demographics"]),
        disease=phrase_set(data["disease"]),
        diagnosis_raw=phrase_set(data["diagnosis"]),
        note_text=note,
    )


def extract_trial(raw: dict, labeler: BaseLabeler | None = None) -> TrialRecord:
    """Build a TrialRecord from one raw corpus row.

    Polarity comes from which eligibility section a criterion sits in.
    Age and gender come from the structured fields when present, falling
    back to token scans of the trial text. Criterion categorization is
    lazy by default; pass a labeler to categorize eagerly.
    """
    trial_id = str(raw["id"])
    eligibility = raw.get("eligibility") or {}
    inclusion = [str(s) for s in eligibility.get("inclusion", []) if str(s).strip()]
    exclusion = [str(s) for s in eligibility.get("exclusion", []) if str(s).strip()]
    if not inclusion and not exclusion:
        raise MissingCriteriaSectionError(f"trial {trial_id} lists no criteria")
    text = str(raw.get("text", ""))

    age_field = raw.get("age") or {}
    if age_field.get("min") is not None or age_field.get("max") is not None:
        age = AgeSet.span(age_field.get("min"), age_field.get("max"))
    else:
        scanned = scan_age([text])
        age = scanned if not scanned.is_empty else AgeSet.full()

    gender_field = raw.get("gender")
    gender = Gender.parse(str(gender_field)) if gender_field else scan_gender([text])

    criteria = tuple(
        [Criterion(t, Polarity.INCLUSION) for t in inclusion]
        + [Criterion(t, Polarity.EXCLUSION) for t in exclusion]
    )
    trial = TrialRecord(
        trial_id=trial_id,
        age=age,
        gender=gender,
        condition_raw=phrase_set(str(c) for c in raw.get("condition", [])),
        condition_norm=frozenset(),
        criteria=criteria,
        text=text,
    )
    if labeler is not None:
        trial = categorize_trial(trial, labeler)
    return trial


def categorize_trial(trial: TrialRecord, labeler: BaseLabeler) -> TrialRecord:
    """Assign attribute categories to any uncategorized criteria.

    One labeler call covers all of them; criteria the response leaves
    unmatched after the repair attempt default to the disease bucket so
    the non-empty-categories invariant holds.
    """
    pending = [i for i, c in enumerate(trial.criteria) if not c.categories]
    if not pending:
        return trial
    texts = [trial.criteria[i].text for i in pending]
    template = load_template(CRITERION_CATEGORIES)
    request = LabelRequest(
        kind=KIND_CATEGORIES,
        template=template,
        prompt=render_criterion_categories(template, texts),
        criteria=tuple(texts),
        trial_id=trial.trial_id,
    )
    assigned: list[frozenset[AttributeCategory] | None] = [None] * len(texts)
    for _ in range(REPAIR_ATTEMPTS + 1):
        try:
            pairs = parse_categories_response(labeler.respond(request))
        except MalformedLabelerOutput:
            continue
        pairs = [(t, cats) for t, cats in pairs if cats]
        assigned = _align(texts, pairs)
        if all(a is not None for a in assigned):
            break
    fallback = frozenset({AttributeCategory.DISEASE})
    updated = list(trial.criteria)
    for slot, i in enumerate(pending):
        cats = assigned[slot] or fallback
        updated[i] = dataclasses.replace(updated[i], categories=cats)
    return dataclasses.replace(trial, criteria=tuple(updated))


# ---------------------------------------------------------------------------
# Eligibility labeling
# ---------------------------------------------------------------------------


def _context_bullets(patient: PatientProfile, categories: frozenset[AttributeCategory]) -> tuple[str, ...]:
    cats = categories or frozenset(AttributeCategory)
    phrases: set[str] = set()
    for cat in cats:
        phrases |= patient.attribute_phrases(cat)
    return tuple(sorted(phrases))


def fine_label_trial(
    patient: PatientProfile,
    trial: TrialRecord,
    labeler: BaseLabeler,
    cache: LabelCache | None = None,
) -> tuple[CriterionJudgment, ...]:
    """Label every criterion of the trial against the patient.

    Criteria are batched per (polarity, category set): each batch shares
    one prompt whose patient-characteristics section is the union of the
    attribute sets the categories select. Inclusion criteria always render
    through the inclusion template and exclusion criteria through the
    exclusion template. Results are cached per criterion index.
    """
    if cache is None:
        cache = LabelCache(None)
    templates = {
        Polarity.INCLUSION: load_template(INCLUSION_LABELS),
        Polarity.EXCLUSION: load_template(EXCLUSION_LABELS),
    }
    groups: dict[tuple[Polarity, frozenset[AttributeCategory]], list[int]] = {}
    for i, criterion in enumerate(trial.criteria):
        groups.setdefault((criterion.polarity, criterion.categories), []).append(i)

    judgments: dict[int, CriterionJudgment] = {}
    for (polarity, categories), indices in groups.items():
        template = templates[polarity]
        texts = [trial.criteria[i].text for i in indices]
        context = _context_bullets(patient, categories)
        request = LabelRequest(
            kind=KIND_FINE,
            template=template,
            prompt=render_fine_labels(template, texts, context),
            criteria=tuple(texts),
            polarity=polarity,
            patient_context=context,
            patient_id=patient.patient_id,
            trial_id=trial.trial_id,
        )
        memo: dict[str, list[tuple[EligibilityLabel, str, bool]]] = {}

        def batch() -> list[tuple[EligibilityLabel, str, bool]]:
            if "result" in memo:
                return memo["result"]
            aligned: list[EligibilityLabel | None] = [None] * len(texts)
            raw_text = ""
            for _ in range(REPAIR_ATTEMPTS + 1):
                raw_text = labeler.respond(request)
                try:
                    pairs = parse_fine_response(raw_text)
                except MalformedLabelerOutput:
                    continue
                aligned = _align(texts, pairs)
                if all(a is not None for a in aligned):
                    break
            memo["result"] = [
                (EligibilityLabel.NOT_ENOUGH_INFO, raw_text, True)
                if label is None
                else (label, raw_text, False)
                for label in aligned
            ]
            return memo["result"]

        for slot, i in enumerate(indices):
            key = CacheKey.fine(patient.patient_id, trial.trial_id, i, template.sha256)
            entry = cache.get_or_label(
                key, lambda s=slot: (batch()[s][0].value, batch()[s][1])
            )
            degraded = bool(memo) and batch()[slot][2] and not entry.from_cache
            judgments[i] = CriterionJudgment(
                criterion=trial.criteria[i],
                label=EligibilityLabel(entry.label),
                degraded=degraded,
            )
    return tuple(judgments[i] for i in range(len(trial.criteria)))


def coarse_label_trial(
    patient: PatientProfile,
    trial: TrialRecord,
    labeler: BaseLabeler,
    cache: LabelCache | None = None,
) -> tuple[EligibilityLabel, bool]:
    """Whole-trial binary call: (label, degraded flag).

    The patient side is rendered as bullets over all three attribute sets;
    criteria are passed verbatim under their polarity headings. Malformed
    output after the repair attempt fails closed to EXCLUDED.
    """
    if cache is None:
        cache = LabelCache(None)
    template = load_template(COARSE_LABEL)
    inclusion = [c.text for c in trial.criteria_of(Polarity.INCLUSION)]
    exclusion = [c.text for c in trial.criteria_of(Polarity.EXCLUSION)]
    profile_bullets = sorted(patient.treatment | patient.demographics | patient.disease)
    profile = "\n".join(f"- {p}" for p in profile_bullets)
    request = LabelRequest(
        kind=KIND_COARSE,
        template=template,
        prompt=render_coarse_label(template, inclusion, exclusion, profile),
        inclusion=tuple(inclusion),
        exclusion=tuple(exclusion),
        patient_profile=profile,
        patient_id=patient.patient_id,
        trial_id=trial.trial_id,
    )
    memo: dict[str, tuple[EligibilityLabel, str, bool]] = {}

    def produce() -> tuple[str, str]:
        raw_text = ""
        for _ in range(REPAIR_ATTEMPTS + 1):
            raw_text = labeler.respond(request)
            try:
                label = parse_coarse_response(raw_text)
            except MalformedLabelerOutput:
                continue
            memo["result"] = (label, raw_text, False)
            return label.value, raw_text
        memo["result"] = (EligibilityLabel.EXCLUDED, raw_text, True)
        return EligibilityLabel.EXCLUDED.value, raw_text

    key = CacheKey.coarse(patient.patient_id, trial.trial_id, template.sha256)
    entry = cache.get_or_label(key, produce)
    degraded = bool(memo) and memo["result"][2] and not entry.from_cache
    return EligibilityLabel(entry.label), degraded


def judge_trial(
    patient: PatientProfile,
    trial: TrialRecord,
    labeler: BaseLabeler,
    cache: LabelCache | None = None,
    need_fine: bool = True,
    need_coarse: bool = True,
) -> TrialJudgments:
    """Collect the labels a scoring method needs for one (patient, trial)."""
    fine = fine_label_trial(patient, trial, labeler, cache) if need_fine else ()
    coarse: EligibilityLabel | None = None
    coarse_degraded = False
    if need_coarse:
        coarse, coarse_degraded = coarse_label_trial(patient, trial, labeler, cache)
    return TrialJudgments(
        patient_id=patient.patient_id,
        trial_id=trial.trial_id,
        fine=fine,
        coarse=coarse,
        coarse_degraded=coarse_degraded,
    )
