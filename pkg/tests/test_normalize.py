"""Normalization tests: exact argmax against a brute-force oracle, LSH agreement."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from trialmatch.normalize import (
    MinHashIndex,
    NoCandidateError,
    best_match,
    build_index,
    mean_normalization_similarity,
    normalize_term,
    normalize_terms,
    phrase_similarity,
    shingles,
)
from trialmatch.ontology import Concept, EmptyOntologyError, OntologyGraph

# ---------------------------------------------------------------------------
# Oracle: plain token-set Jaccard, argmax over every surface form, ties to
# the smallest concept id. Written against the documented semantics only.
# ---------------------------------------------------------------------------


def oracle_tokens(phrase: str) -> frozenset[str]:
    return frozenset(phrase.lower().split())


def oracle_jaccard(a: str, b: str) -> float:
    ta, tb = oracle_tokens(a), oracle_tokens(b)
    if not ta and not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def oracle_best(query: str, graph) -> tuple[str, float]:
    best_id, best_score = None, -1.0
    for cid in sorted(graph.concepts):
        score = max(
            oracle_jaccard(query, form) for form in graph.concepts[cid].surface_forms
        )
        if score > best_score:
            best_id, best_score = cid, score
    return best_id, best_score


# Fixture queries paired with their hand-derived target concepts. The
# phrases use clean lowercase tokens so the oracle's split() matches the
# library's normalization exactly.
NORMALIZATION_QUERIES = [
    ("essential hypertension", "C112"),
    ("primary hypertension", "C112"),
    ("high blood pressure", "C111"),
    ("hypertension", "C111"),
    ("history of essential hypertension", "C112"),
    ("congestive heart failure", "C116"),
    ("acute heart failure", "C117"),
    ("heart attack", "C118"),
    ("acute myocardial infarction", "C119"),
    ("atrial fibrillation", "C120"),
    ("bronchial asthma", "C123"),
    ("allergic asthma", "C124"),
    ("severe persistent asthma", "C125"),
    ("copd", "C126"),
    ("chronic obstructive pulmonary disease", "C126"),
    ("pneumonia", "C127"),
    ("type 1 diabetes mellitus", "C132"),
    ("type 2 diabetes mellitus", "C133"),
    ("diabetes", "C131"),
    ("adult onset diabetes", "C133"),
    ("obesity", "C134"),
    ("high cholesterol", "C135"),
    ("breast cancer", "C141"),
    ("triple negative breast cancer", "C142"),
    ("metastatic breast carcinoma", "C141"),
    ("non small cell lung cancer", "C144"),
    ("stage iv non small cell lung cancer", "C144"),
    ("small cell lung carcinoma", "C145"),
    ("colorectal carcinoma", "C146"),
    ("hodgkin lymphoma", "C148"),
    ("non hodgkin lymphoma", "C149"),
    ("influenza", "C152"),
    ("covid 19", "C153"),
    ("tuberculosis", "C155"),
    ("migraine headache", "C161"),
    ("chronic migraine", "C162"),
    ("seizure disorder", "C163"),
    ("multiple sclerosis", "C164"),
    ("alzheimer disease", "C165"),
    ("major depressive disorder", "C171"),
    ("generalized anxiety disorder", "C172"),
    ("chronic kidney disease", "C181"),
    ("chronic renal failure", "C181"),
    ("newly diagnosed type 2 diabetes mellitus", "C133"),
    ("hepatitis c", "C191"),
]


def test_exact_argmax_matches_exhaustive_scan(toy_ontology):
    for query, _ in NORMALIZATION_QUERIES:
        expected_id, expected_score = oracle_best(query, toy_ontology)
        match = best_match(query, toy_ontology, mode="exact")
        assert match.concept_id == expected_id, query
        assert match.score == pytest.approx(expected_score, abs=1e-12)


def test_exact_argmax_hits_hand_derived_targets(toy_ontology):
    for query, target in NORMALIZATION_QUERIES:
        assert normalize_term(query, toy_ontology) == target, query


def test_exact_tie_breaks_to_smallest_concept_id():
    graph = OntologyGraph(
        [
            Concept("Z9", "shared label"),
            Concept("A1", "shared label"),
            Concept("M5", "something else entirely"),
        ]
    )
    assert best_match("shared label", graph).concept_id == "A1"


def test_empty_ontology_rejected():
    with pytest.raises(EmptyOntologyError):
        best_match("anything", OntologyGraph([]))


# ---------------------------------------------------------------------------
# Shingles and similarity
# ---------------------------------------------------------------------------


def test_word_shingles():
    assert shingles("Type 2 Diabetes") == {"type", "2", "diabetes"}
    assert shingles("") == frozenset()


def test_char_shingles():
    assert shingles("abcd", kind="char", k=3) == {"abc", "bcd"}
    assert shingles("ab", kind="char", k=3) == {"ab"}


@given(st.text(max_size=30), st.text(max_size=30))
def test_similarity_symmetric_and_bounded(a, b):
    s = phrase_similarity(a, b)
    assert 0.0 <= s <= 1.0
    assert s == phrase_similarity(b, a)


@given(st.text(min_size=1, max_size=30))
def test_similarity_reflexive(a):
    if shingles(a):
        assert phrase_similarity(a, a) == 1.0


# ---------------------------------------------------------------------------
# MinHash LSH
# ---------------------------------------------------------------------------


def test_lsh_requires_consistent_band_shape():
    with pytest.raises(ValueError):
        MinHashIndex(num_perm=128, num_bands=10, rows_per_band=4)


def test_lsh_identical_phrase_always_collides(toy_ontology):
    index = build_index(toy_ontology)
    for cid in ("C112", "C126", "C141", "C153"):
        label = toy_ontology[cid].label
        assert cid in index.query(label)


def test_lsh_no_candidates_for_alien_phrase(toy_ontology):
    index = build_index(toy_ontology)
    assert index.query("xylophone zebra quartz") == frozenset()
    with pytest.raises(NoCandidateError):
        best_match("xylophone zebra quartz", toy_ontology, mode="approx", index=index)


def test_approx_mode_requires_index(toy_ontology):
    with pytest.raises(ValueError):
        best_match("asthma", toy_ontology, mode="approx", index=None)


def lsh_agreement_rate(graph, queries) -> float:
    """Fraction of queries where approx top-1 equals exact top-1."""
    index = build_index(graph)
    agree = 0
    for query, _ in queries:
        exact_id = best_match(query, graph, mode="exact").concept_id
        try:
            approx_id = best_match(query, graph, mode="approx", index=index).concept_id
        except NoCandidateError:
            continue
        if approx_id == exact_id:
            agree += 1
    return agree / len(queries)


def test_lsh_top1_agreement_at_least_90_percent(toy_ontology):
    rate = lsh_agreement_rate(toy_ontology, NORMALIZATION_QUERIES)
    assert rate >= 0.9, f"agreement {rate:.3f}"


def test_normalize_terms_fallback_on_lsh_miss(toy_ontology):
    index = build_index(toy_ontology)
    alien = "xylophone zebra quartz"
    out = normalize_terms([alien], toy_ontology, mode="approx", index=index)
    # The alien phrase collides with nothing, so the exact fallback decides.
    assert out[alien] == best_match(alien, toy_ontology, mode="exact").concept_id
    skipped = normalize_terms(
        [alien], toy_ontology, mode="approx", index=index, approx_fallback=False
    )
    assert alien not in skipped


def test_normalize_terms_skips_empty_phrases(toy_ontology):
    out = normalize_terms(["", "   ", ".", "asthma"], toy_ontology)
    assert set(out) == {"asthma"}
    assert out["asthma"] == "C123"


def test_mean_normalization_similarity(toy_ontology):
    pairs = [("breast cancer", "C141"), ("asthma", "C123")]
    # "breast cancer" vs "malignant neoplasm of breast": 1 shared of 5 tokens.
    expected = (1 / 5 + 1.0) / 2
    assert mean_normalization_similarity(pairs, toy_ontology) == pytest.approx(expected)
    with pytest.raises(ValueError):
        mean_normalization_similarity([], toy_ontology)
