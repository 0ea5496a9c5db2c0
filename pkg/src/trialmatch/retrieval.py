"""First-stage retrieval: condition overlap, BM25 text baseline,
demographic filtering, and backfill to a fixed candidate count.

The primary ranking scores each trial by the overlap coefficient between
the patient's expanded diagnosis concepts and the trial's normalized
condition concepts. Demographic filtering then drops trials whose age
interval or gender requirement cannot match the patient, and backfill
tops the list back up from the corpus-wide overlap ranking.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .model import (
    ConceptSet,
    PatientProfile,
    TrialRecord,
    age_intersect,
    gender_match,
)


class Provenance(str, Enum):
    CONDITION = "condition_relevance"
    BACKFILL = "backfill"


@dataclass(frozen=True)
class RankedEntry:
    trial_id: str
    score: float
    rank: int
    provenance: Provenance = Provenance.CONDITION


@dataclass(frozen=True)
class RankedList:
    """An ordered candidate list.

    Invariants: ranks are contiguous from 1; scores are non-increasing
    within each provenance class; condition-sourced entries precede
    backfilled ones.
    """

    entries: tuple[RankedEntry, ...] = ()

    def __post_init__(self) -> None:
        seen_backfill = False
        last_score: dict[Provenance, float] = {}
        for i, e in enumerate(self.entries):
            if e.rank != i + 1:
                raise ValueError(f"ranks must be contiguous from 1, got {e.rank} at {i}")
            if e.provenance is Provenance.BACKFILL:
                seen_backfill = True
            elif seen_backfill:
                raise ValueError("condition-sourced entries must precede backfill")
            prev = last_score.get(e.provenance)
            if prev is not None and e.score > prev + 1e-12:
                raise ValueError("scores must be non-increasing within a provenance class")
            last_score[e.provenance] = e.score
        object.__setattr__(self, "entries", tuple(self.entries))

    @classmethod
    def from_scored(
        cls,
        scored: Sequence[tuple[str, float, Provenance]],
    ) -> "RankedList":
        return cls(
            tuple(
                RankedEntry(tid, score, rank, prov)
                for rank, (tid, score, prov) in enumerate(scored, start=1)
            )
        )

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def trial_ids(self) -> tuple[str, ...]:
        return tuple(e.trial_id for e in self.entries)

    def truncated(self, k: int) -> "RankedList":
        return RankedList(self.entries[:k])


def overlap_coefficient(a: ConceptSet, b: ConceptSet) -> float:
    """|a & b| / min(|a|, |b|); zero when either side is empty."""
    if not a or not b:
        return 0.0
    return len(a & b) / min(len(a), len(b))


class ConditionIndex:
    """Inverted index from concept id to the trials targeting it."""

    def __init__(self, trials: Iterable[TrialRecord]):
        self.postings: dict[str, list[str]] = {}
        self.condition_sizes: dict[str, int] = {}
        for t in trials:
            if not t.condition_norm:
                continue
            self.condition_sizes[t.trial_id] = len(t.condition_norm)
            for concept in t.condition_norm:
                self.postings.setdefault(concept, []).append(t.trial_id)
        for ids in self.postings.values():
            ids.sort()

    def __len__(self) -> int:
        return len(self.condition_sizes)

    def overlap_counts(self, expanded: ConceptSet) -> dict[str, int]:
        """Size of the concept intersection per trial, zeros omitted."""
        counts: Counter[str] = Counter()
        for concept in expanded:
            for tid in self.postings.get(concept, ()):
                counts[tid] += 1
        return dict(counts)


def retrieve_by_condition(
    patient: PatientProfile, index: ConditionIndex, k: int | None = None
) -> RankedList:
    """Rank trials by overlap coefficient with the expanded diagnosis.

    Only trials with a non-empty concept intersection appear. Ties break
    by ascending trial id; k=None returns the full ranking.
    """
    expanded = patient.diagnosis_expanded
    n_patient = len(expanded)
    scored = []
    for tid, inter in index.overlap_counts(expanded).items():
        ov = inter / min(n_patient, index.condition_sizes[tid])
        scored.append((tid, ov))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    if k is not None:
        scored = scored[:k]
    return RankedList.from_scored([(tid, s, Provenance.CONDITION) for tid, s in scored])


# ---------------------------------------------------------------------------
# BM25 text baseline
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens, no stemming."""
    return _TOKEN_RE.findall(text.lower())


class TextIndex:
    """BM25 index over trial texts (k1=1.2, b=0.75).

    idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1), which keeps every term
    weight positive, so document scores are always non-negative.
    """

    def __init__(self, docs: Mapping[str, str], k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        self.doc_terms: dict[str, Counter[str]] = {}
        self.doc_len: dict[str, int] = {}
        df: Counter[str] = Counter()
        for doc_id, text in docs.items():
            terms = Counter(tokenize(text))
            self.doc_terms[doc_id] = terms
            self.doc_len[doc_id] = sum(terms.values())
            for term in terms:
                df[term] += 1
        self.df = dict(df)
        self.n_docs = len(self.doc_terms)
        self.avg_len = (
            sum(self.doc_len.values()) / self.n_docs if self.n_docs else 0.0
        )

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)

    def score(self, query_terms: Sequence[str], doc_id: str) -> float:
        terms = self.doc_terms[doc_id]
        dl = self.doc_len[doc_id]
        norm = self.k1 * (1 - self.b + self.b * dl / self.avg_len) if self.avg_len else self.k1
        total = 0.0
        for term in query_terms:
            tf = terms.get(term, 0)
            if tf == 0:
                continue
            total += self.idf(term) * tf * (self.k1 + 1) / (tf + norm)
        return total


def bm25_retrieve(patient: PatientProfile, index: TextIndex, k: int | None = None) -> RankedList:
    """Rank trials by BM25 of the patient note against the trial texts."""
    query = tokenize(patient.note_text)
    seen = set(query)
    scored = []
    for doc_id, terms in index.doc_terms.items():
        if seen.isdisjoint(terms.keys()):
            continue
        s = index.score(query, doc_id)
        if s > 0.0:
            scored.append((doc_id, s))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    if k is not None:
        scored = scored[:k]
    return RankedList.from_scored([(tid, s, Provenance.CONDITION) for tid, s in scored])


# ---------------------------------------------------------------------------
# Demographic filter and backfill
# ---------------------------------------------------------------------------


def demographics_compatible(patient: PatientProfile, trial: TrialRecord) -> bool:
    """Age intervals intersect and the gender requirement admits the patient."""
    return bool(age_intersect(patient.age, trial.age)) and gender_match(
        patient.gender, trial.gender
    )


def demographic_filter(
    ranked: RankedList,
    patient: PatientProfile,
    trials: Mapping[str, TrialRecord],
) -> RankedList:
    """Drop demographically impossible trials, preserving order and scores."""
    kept = [
        (e.trial_id, e.score, e.provenance)
        for e in ranked
        if demographics_compatible(patient, trials[e.trial_id])
    ]
    return RankedList.from_scored(kept)


def backfill_to_k(
    filtered: RankedList,
    full_ranking: RankedList,
    patient: PatientProfile,
    trials: Mapping[str, TrialRecord],
    k: int,
) -> RankedList:
    """Top the filtered list back up to k entries.

    Candidates come from the corpus-wide condition-overlap ranking, must
    pass the demographic filter, and are appended below every
    condition-sourced entry with provenance BACKFILL. If the pool runs
    dry the list simply stays shorter than k.
    """
    entries = [
        (e.trial_id, e.score, e.provenance) for e in filtered.entries[:k]
    ]
    present = {tid for tid, _, _ in entries}
    if len(entries) < k:
        for e in full_ranking:
            if len(entries) >= k:
                break
            if e.trial_id in present:
                continue
            if not demographics_compatible(patient, trials[e.trial_id]):
                continue
            entries.append((e.trial_id, e.score, Provenance.BACKFILL))
            present.add(e.trial_id)
    return RankedList.from_scored(entries)
