"""Labeler implementations.

A labeler answers fully rendered prompts with raw response text in the
formats the templates mandate; all parsing and validation happens in the
orchestration layer, so the deterministic mock exercises exactly the same
parsing path as the HTTP service. Every call is recorded in an audit trail
of (request kind, template name) pairs, which is how tests assert that
inclusion criteria are never routed to the exclusion template.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field

from ..model import EligibilityLabel, Polarity, normalize_phrase
from .judgments import LabelingServiceError
from .parsing import parse_coarse_response, parse_fine_response
from .templates import PromptTemplate

KIND_PATIENT_EXTRACTION = "patient_extraction"
KIND_CATEGORIES = "categories"
KIND_FINE = "fine"
KIND_COARSE = "coarse"


@dataclass(frozen=True)
class LabelRequest:
    """One labeling call: the rendered prompt plus its structured payload.

    The structured fields let rule-based labelers answer without reparsing
    the prompt; patient_id and trial_id are metadata for planted ground
    truth and reproducible noise injection, ignored by the HTTP labeler.
    """

    kind: str
    template: PromptTemplate
    prompt: str
    note: str = ""
    criteria: tuple[str, ...] = ()
    polarity: Polarity | None = None
    patient_context: tuple[str, ...] = ()
    inclusion: tuple[str, ...] = ()
    exclusion: tuple[str, ...] = ()
    patient_profile: str = ""
    patient_id: str = ""
    trial_id: str = ""


class BaseLabeler:
    """Shared plumbing: the audit trail and the respond() entry point."""

    name = "base"

    def __init__(self) -> None:
        self.audit: list[tuple[str, str]] = []

    def respond(self, request: LabelRequest) -> str:
        self.audit.append((request.kind, request.template.name))
        return self._respond(request)

    def _respond(self, request: LabelRequest) -> str:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Deterministic rule-based mock
# ---------------------------------------------------------------------------

_NEG_HEAD_RE = re.compile(r"^(?:no|not|without|free of|absence of)\b\s*")
_NEG_INNER_RE = re.compile(r"\bmust not (?:have|be|take|receive)\b\s*")
_FACT_NEG_RE = re.compile(r"^(?:no|not|denies|without|never)\b\s*")

_NUM_RANGE_RE = re.compile(
    r"\b(bmi|age|weight)\b\s*(?:of\s*|:\s*)?(\d+(?:\.\d+)?)\s*(?:-|to)\s*(\d+(?:\.\d+)?)"
)
_NUM_OP_RE = re.compile(
    r"\b(bmi|age|weight)\b\s*(?:of\s*|:\s*)?(>=|<=|>|<|=)\s*(\d+(?:\.\d+)?)"
)
_NUM_FACT_RE = re.compile(r"\b(bmi|age|weight)\b\s*(?:of|is|:)?\s*(\d+(?:\.\d+)?)")
_AGE_FACT_RE = re.compile(r"\b(\d{1,3})\s*(?:-|\s)\s*year(?:s)?(?:-|\s)?old\b|\b(\d{1,3})\s+years\b")

_CATEGORY_RULES = (
    (
        "Treatment criteria",
        re.compile(
            r"\b(therap\w*|treatment\w*|radiotherapy|chemotherapy|chemo|surger\w*|"
            r"surgical|medicat\w*|drug\w*|transplant\w*|implant\w*|dose|regimen|"
            r"vaccin\w*|received|taking)\b"
        ),
    ),
    (
        "Demographic criteria",
        re.compile(
            r"\b(age[ds]?|years?|gender|(fe)?male\w?|(wo)?m[ae]n|pregnan\w*|"
            r"language|ethnic\w*|rac(e|ial)|adult|child(ren)?|elderly|postmenopausal)\b"
        ),
    ),
    (
        "Disease criteria",
        re.compile(
            r"\b(diseas\w*|diagnos\w*|cancer|carcinoma|syndrome|disorder\w*|"
            r"condition\w*|infection\w*|history|symptom\w*|stage|status|bmi|"
            r"weight|hypertension|diabetes|migraine|asthma|failure)\b"
        ),
    ),
)

_SEGMENT_SLOTS = {
    "diagnosis": "diagnosis",
    "diagnoses": "diagnosis",
    "suggested diagnosis": "diagnosis",
    "signs": "disease",
    "symptoms": "disease",
    "conditions": "disease",
    "findings": "disease",
    "history": "disease",
    "treatments": "treatment",
    "treatment": "treatment",
    "medications": "treatment",
    "demographics": "demographics",
}
_SEGMENT_RE = re.compile(
    r"\b(" + "|".join(sorted(_SEGMENT_SLOTS, key=len, reverse=True)) + r")\s*:\s*([^.\n]+)",
    re.IGNORECASE,
)
_DIAGNOSED_RE = re.compile(r"\bdiagnos(?:is of|ed with)\s+([^.;,\n]+)", re.IGNORECASE)
_GENDER_WORD_RE = re.compile(r"\b(female|woman|women|girl|male|man|men|boy)\b", re.IGNORECASE)
_AGE_SNIPPET_RE = re.compile(
    r"\b\d{1,3}[-\s]?year[-\s]?old\b|\bage[ds]?\s*:?\s*\d{1,3}(?:\s*(?:-|to)\s*\d{1,3})?\b"
    r"|\b\d{1,3}\s+years(?:\s+old)?\b",
    re.IGNORECASE,
)


def _criterion_condition(criterion: str, facts: list[str]) -> bool | None:
    """Does the patient have the condition the criterion describes?

    Returns True/False on positive/negative evidence in the facts, None
    when the facts say nothing. Negation markers in the criterion itself
    are handled by the caller; this sees the stripped core condition.
    """
    # Numeric comparisons first: ranges, then explicit operators.
    rng = _NUM_RANGE_RE.search(criterion)
    op = None if rng else _NUM_OP_RE.search(criterion)
    if rng or op:
        qty = (rng or op).group(1)
        value = _patient_value(qty, facts)
        if value is None:
            return None
        if rng:
            return float(rng.group(2)) <= value <= float(rng.group(3))
        sym, thr = op.group(2), float(op.group(3))
        return {
            ">=": value >= thr,
            "<=": value <= thr,
            ">": value > thr,
            "<": value < thr,
            "=": value == thr,
        }[sym]

    present = absent = False
    for fact in facts:
        neg = _FACT_NEG_RE.match(fact)
        stem = fact[neg.end() :] if neg else fact
        if len(stem) < 4:
            continue
        if stem in criterion or criterion in stem:
            if neg:
                absent = True
            else:
                present = True
    if present:
        return True
    if absent:
        return False
    return None


def _patient_value(qty: str, facts: list[str]) -> float | None:
    for fact in facts:
        for m in _NUM_FACT_RE.finditer(fact):
            if m.group(1) == qty:
                return float(m.group(2))
        if qty == "age":
            m = _AGE_FACT_RE.search(fact)
            if m:
                return float(m.group(1) or m.group(2))
    return None


def label_token(label: EligibilityLabel) -> str:
    """Response-format spelling of a label."""
    if label is EligibilityLabel.NOT_ENOUGH_INFO:
        return "no relevant information"
    return label.value


def rule_fine_label(
    criterion: str, polarity: Polarity, facts: list[str]
) -> EligibilityLabel:
    """Deterministic three-valued labeling by keyword and numeric matching."""
    c = normalize_phrase(criterion)
    normalized_facts = [normalize_phrase(f) for f in facts if normalize_phrase(f)]
    inner = _NEG_INNER_RE.search(c)
    head = None if inner else _NEG_HEAD_RE.match(c)
    negated = bool(inner or head)
    core = c[(inner or head).end() :] if negated else c
    has = _criterion_condition(core, normalized_facts)
    if has is None:
        return EligibilityLabel.NOT_ENOUGH_INFO
    if negated:
        # "no X" / "must not have X": having X disqualifies under either
        # polarity, per the carve-out in the label definitions.
        return EligibilityLabel.EXCLUDED if has else EligibilityLabel.ELIGIBLE
    if polarity is Polarity.INCLUSION:
        return EligibilityLabel.ELIGIBLE if has else EligibilityLabel.EXCLUDED
    return EligibilityLabel.EXCLUDED if has else EligibilityLabel.ELIGIBLE


def rule_categories(criterion: str) -> list[str]:
    """Keyword-based category tagging; defaults to disease when nothing hits."""
    c = normalize_phrase(criterion)
    names = [name for name, rx in _CATEGORY_RULES if rx.search(c)]
    return names or ["Disease criteria"]


class RuleMock(BaseLabeler):
    """Deterministic labeler for tests and offline runs.

    Understands notes written in a light segment convention ("Diagnosis:
    a; b. Signs: c. Treatments: d. Demographics: e; f.") and falls back to
    age/gender/diagnosis pattern scans on free text. Fine labels come from
    keyword and numeric matching against the patient facts; coarse labels
    come from a planted truth table when one is supplied, otherwise from
    aggregating the fine rules.
    """

    name = "rule-mock"

    def __init__(
        self,
        coarse_truth: dict[tuple[str, str], EligibilityLabel] | None = None,
    ):
        super().__init__()
        self.coarse_truth = dict(coarse_truth or {})

    def _respond(self, request: LabelRequest) -> str:
        if request.kind == KIND_PATIENT_EXTRACTION:
            return self._extract(request.note)
        if request.kind == KIND_CATEGORIES:
            return "\n".join(
                json.dumps({"Criterion": crit, "Categories": rule_categories(crit)})
                for crit in request.criteria
            )
        if request.kind == KIND_FINE:
            facts = list(request.patient_context)
            assert request.polarity is not None
            return "\n".join(
                "{'Criterion': %s, 'Label': '%s'}"
                % (crit, label_token(rule_fine_label(crit, request.polarity, facts)))
                for crit in request.criteria
            )
        if request.kind == KIND_COARSE:
            return "{'label': '%s'}" % self._coarse(request).value
        raise ValueError(f"unknown request kind {request.kind!r}")

    def _coarse(self, request: LabelRequest) -> EligibilityLabel:
        planted = self.coarse_truth.get((request.patient_id, request.trial_id))
        if planted is not None:
            return planted
        facts = [
            line.lstrip("- ").strip()
            for line in request.patient_profile.splitlines()
            if line.strip()
        ]
        labels = [
            rule_fine_label(c, Polarity.INCLUSION, facts) for c in request.inclusion
        ] + [rule_fine_label(c, Polarity.EXCLUSION, facts) for c in request.exclusion]
        if EligibilityLabel.EXCLUDED in labels:
            return EligibilityLabel.EXCLUDED
        if EligibilityLabel.ELIGIBLE in labels:
            return EligibilityLabel.ELIGIBLE
        # No evidence either way; the coarse call must stay binary, so
        # fail closed.
        return EligibilityLabel.EXCLUDED

    def _extract(self, note: str) -> str:
        slots: dict[str, list[str]] = {
            "disease": [],
            "demographics": [],
            "treatment": [],
            "diagnosis": [],
        }
        for m in _SEGMENT_RE.finditer(note):
            slot = _SEGMENT_SLOTS[m.group(1).lower()]
            slots[slot].extend(
                p.strip() for p in m.group(2).split(";") if p.strip()
            )
        if not slots["diagnosis"]:
            slots["diagnosis"] = [m.group(1).strip() for m in _DIAGNOSED_RE.finditer(note)]
        for m in _AGE_SNIPPET_RE.finditer(note):
            slots["demographics"].append(m.group(0))
        for m in _GENDER_WORD_RE.finditer(note):
            slots["demographics"].append(m.group(0))
        deduped = {k: list(dict.fromkeys(v)) for k, v in slots.items()}
        return json.dumps(
            {
                "Disease characteristics": deduped["disease"],
                "demographic characteristics": deduped["demographics"],
                "Treatment": deduped["treatment"],
                "Suggested Diagnosis": deduped["diagnosis"],
            }
        )


class NoisyLabeler(BaseLabeler):
    """Wraps a labeler and flips a fraction of its eligibility labels.

    Flips are a pure function of (seed, patient, trial, criterion index),
    so a seeded noisy run reproduces byte-identically. Non-label requests
    pass through untouched.
    """

    name = "noisy"

    def __init__(self, inner: BaseLabeler, flip_rate: float = 0.1, seed: int = 0):
        super().__init__()
        self.inner = inner
        self.flip_rate = flip_rate
        self.seed = seed

    def _rng(self, request: LabelRequest, index: int) -> random.Random:
        key = f"{self.seed}|{request.patient_id}|{request.trial_id}|{request.kind}|{index}"
        digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
        return random.Random(int.from_bytes(digest, "big"))

    def _respond(self, request: LabelRequest) -> str:
        text = self.inner.respond(request)
        if request.kind == KIND_FINE:
            pairs = parse_fine_response(text)
            lines = []
            for idx, (crit, label) in enumerate(pairs):
                rng = self._rng(request, idx)
                if rng.random() < self.flip_rate:
                    label = rng.choice([l for l in EligibilityLabel if l is not label])
                lines.append(
                    "{'Criterion': %s, 'Label': '%s'}" % (crit, label_token(label))
                )
            return "\n".join(lines)
        if request.kind == KIND_COARSE:
            label = parse_coarse_response(text)
            rng = self._rng(request, -1)
            if rng.random() < self.flip_rate:
                label = (
                    EligibilityLabel.EXCLUDED
                    if label is EligibilityLabel.ELIGIBLE
                    else EligibilityLabel.ELIGIBLE
                )
            return "{'label': '%s'}" % label.value
        return text


# ---------------------------------------------------------------------------
# HTTP chat-completion service
# ---------------------------------------------------------------------------

_RETRY_STATUSES = {429, 500, 502, 503, 504}


class ExternalServiceLabeler(BaseLabeler):
    """Labeler backed by a chat-completion HTTP endpoint.

    Sends each rendered prompt as a single user message at temperature 0.
    Transport failures and retryable statuses back off exponentially up to
    max_retries; concurrent calls are bounded by a semaphore. The API key
    is read from the environment variable named by api_key_env.
    """

    name = "service"

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "TRIALMATCH_API_KEY",
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        max_concurrency: int = 4,
        session=None,
    ):
        super().__init__()
        if session is None:
            import requests

            session = requests.Session()
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._session = session
        self._sem = threading.Semaphore(max_concurrency)

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise LabelingServiceError(
                f"no API key found in environment variable {self.api_key_env}"
            )
        return {"Authorization": f"Bearer {key}"}

    def _respond(self, request: LabelRequest) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": 0,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            if attempt and self.backoff:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._sem:
                    resp = self._session.post(
                        f"{self.base_url}/chat/completions",
                        json=payload,
                        headers=self._headers(),
                        timeout=self.timeout,
                    )
            except LabelingServiceError:
                raise
            except Exception as exc:
                last_error = exc
                continue
            if resp.status_code in _RETRY_STATUSES:
                last_error = LabelingServiceError(f"status {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise LabelingServiceError(
                    f"labeling service returned status {resp.status_code}"
                )
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise LabelingServiceError(f"unexpected response shape: {exc}") from exc
        raise LabelingServiceError(
            f"labeling service failed after {self.max_retries} attempts: {last_error}"
        )
