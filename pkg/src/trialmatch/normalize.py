"""Term normalization: mapping free-text phrases onto ontology concepts.

A phrase is matched against every concept's surface forms (preferred label
plus synonyms) under Jaccard similarity of token shingles. Exact mode scans
the whole vocabulary; approximate mode first narrows the field with a
MinHash locality-sensitive-hashing index and scores only the colliding
candidates, falling back to nothing if no bucket collides.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Literal, NamedTuple

import numpy as np

from .model import normalize_phrase
from .ontology import EmptyOntologyError, OntologyGraph

ShingleKind = Literal["word", "char"]

# Mersenne prime modulus for the universal hash family. Token hashes and
# multipliers are kept below 2**31 so a*h + b stays inside int64.
_MERSENNE_P = (1 << 61) - 1
_HASH_SPACE = 1 << 31


class NoCandidateError(Exception):
    """Approximate lookup found no bucket collision for the query phrase."""


def shingles(s: str, kind: ShingleKind = "word", k: int = 3) -> frozenset[str]:
    """Shingle set of a phrase after normalization.

    "word" yields token unigrams; "char" yields character k-grams of the
    space-joined normalized phrase. Empty phrases yield the empty set.
    """
    s = normalize_phrase(s)
    if not s:
        return frozenset()
    if kind == "word":
        return frozenset(s.split(" "))
    padded = s.replace(" ", "_")
    if len(padded) <= k:
        return frozenset((padded,))
    return frozenset(padded[i : i + k] for i in range(len(padded) - k + 1))


def phrase_similarity(a: str, b: str, kind: ShingleKind = "word", k: int = 3) -> float:
    """Jaccard similarity of the two phrases' shingle sets; 0.0 if both empty."""
    sa, sb = shingles(a, kind, k), shingles(b, kind, k)
    if not sa and not sb:
        return 0.0
    union = len(sa | sb)
    if union == 0:
        return 0.0
    return len(sa & sb) / union


def _stable_token_hash(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % _HASH_SPACE


class MinHashIndex:
    """MinHash LSH index over concept surface forms.

    Signatures use num_perm universal hash functions drawn from a seeded
    generator; the signature is split into num_bands bands of rows_per_band
    rows each, and two strings collide when any band hashes identically.
    Defaults: 128 permutations in 32 bands of 4 rows.
    """

    def __init__(
        self,
        num_perm: int = 128,
        num_bands: int = 32,
        rows_per_band: int = 4,
        seed: int = 13,
        shingle_kind: ShingleKind = "word",
        shingle_k: int = 3,
    ):
        if num_bands * rows_per_band != num_perm:
            raise ValueError(
                f"num_bands * rows_per_band must equal num_perm "
                f"({num_bands} * {rows_per_band} != {num_perm})"
            )
        self.num_perm = num_perm
        self.num_bands = num_bands
        self.rows_per_band = rows_per_band
        self.shingle_kind = shingle_kind
        self.shingle_k = shingle_k
        rng = np.random.default_rng(seed)
        self._a = rng.integers(1, _HASH_SPACE, size=num_perm, dtype=np.int64)
        self._b = rng.integers(0, _MERSENNE_P, size=num_perm, dtype=np.int64)
        self._buckets: list[dict[bytes, set[str]]] = [{} for _ in range(num_bands)]
        self.size = 0

    def signature(self, phrase: str) -> np.ndarray | None:
        """MinHash signature of the phrase, or None if it has no shingles."""
        sh = shingles(phrase, self.shingle_kind, self.shingle_k)
        if not sh:
            return None
        hs = np.array(sorted(_stable_token_hash(t) for t in sh), dtype=np.int64)
        vals = (self._a[:, None] * hs[None, :] + self._b[:, None]) % _MERSENNE_P
        return vals.min(axis=1)

    def _band_keys(self, sig: np.ndarray) -> list[bytes]:
        rows = self.rows_per_band
        return [
            sig[i * rows : (i + 1) * rows].tobytes() for i in range(self.num_bands)
        ]

    def insert(self, key: str, phrase: str) -> None:
        sig = self.signature(phrase)
        if sig is None:
            return
        for band, bkey in enumerate(self._band_keys(sig)):
            self._buckets[band].setdefault(bkey, set()).add(key)
        self.size += 1

    def query(self, phrase: str) -> frozenset[str]:
        """Keys whose inserted strings collide with the phrase in any band."""
        sig = self.signature(phrase)
        if sig is None:
            return frozenset()
        out: set[str] = set()
        for band, bkey in enumerate(self._band_keys(sig)):
            out |= self._buckets[band].get(bkey, set())
        return frozenset(out)


def build_index(graph: OntologyGraph, **params) -> MinHashIndex:
    """Index every concept's surface forms, keyed by concept id."""
    idx = MinHashIndex(**params)
    for cid in sorted(graph.concepts):
        for form in graph.concepts[cid].surface_forms:
            idx.insert(cid, form)
    return idx


class Match(NamedTuple):
    concept_id: str
    score: float


def _score_candidates(
    phrase: str,
    graph: OntologyGraph,
    candidate_ids: Iterable[str],
    kind: ShingleKind,
    k: int,
) -> Match:
    best: Match | None = None
    for cid in sorted(candidate_ids):
        concept = graph[cid]
        score = max(
            phrase_similarity(phrase, form, kind, k) for form in concept.surface_forms
        )
        if best is None or score > best.score:
            best = Match(cid, score)
    assert best is not None
    return best


def best_match(
    phrase: str,
    graph: OntologyGraph,
    mode: Literal["exact", "approx"] = "exact",
    index: MinHashIndex | None = None,
    kind: ShingleKind = "word",
    k: int = 3,
) -> Match:
    """Best-scoring concept for a phrase, with its similarity score.

    Exact mode scans every concept; ties resolve to the lexicographically
    smallest concept id (the scan visits ids in sorted order and only a
    strictly better score displaces the incumbent). Approximate mode scores
    only LSH candidates and raises NoCandidateError when no bucket collides;
    callers typically fall back to exact mode on that error.
    """
    if len(graph) == 0:
        raise EmptyOntologyError("cannot normalize against an empty ontology")
    if mode == "approx":
        if index is None:
            raise ValueError("approx mode requires a MinHash index")
        cands = index.query(phrase)
        if not cands:
            raise NoCandidateError(f"no LSH candidates for {phrase!r}")
        return _score_candidates(phrase, graph, cands, kind, k)
    return _score_candidates(phrase, graph, graph.concepts.keys(), kind, k)


def normalize_term(
    phrase: str,
    graph: OntologyGraph,
    mode: Literal["exact", "approx"] = "exact",
    index: MinHashIndex | None = None,
) -> str:
    """Concept id best matching the phrase (argmax similarity)."""
    return best_match(phrase, graph, mode, index).concept_id


def normalize_terms(
    phrases: Iterable[str],
    graph: OntologyGraph,
    mode: Literal["exact", "approx"] = "exact",
    index: MinHashIndex | None = None,
    approx_fallback: bool = True,
) -> dict[str, str]:
    """Map each phrase to its best concept id.

    In approximate mode, phrases with no LSH candidates fall back to an
    exact scan when approx_fallback is set, and are silently skipped
    otherwise. Phrases that normalize to nothing are always skipped.
    """
    out: dict[str, str] = {}
    for phrase in sorted(set(phrases)):
        if not normalize_phrase(phrase):
            continue
        try:
            out[phrase] = normalize_term(phrase, graph, mode, index)
        except NoCandidateError:
            if approx_fallback:
                out[phrase] = normalize_term(phrase, graph, "exact")
    return out


def mean_normalization_similarity(
    pairs: Iterable[tuple[str, str]], graph: OntologyGraph
) -> float:
    """Mean Jaccard similarity between raw phrases and their assigned
    concepts' preferred labels. Raises ValueError on an empty pair list."""
    sims = [phrase_similarity(raw, graph[cid].label) for raw, cid in pairs]
    if not sims:
        raise ValueError("no normalization pairs to average")
    return float(np.mean(sims))
