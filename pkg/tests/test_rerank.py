"""Gate and scoring tests: truth tables, a hand-computed golden table,
range bounds on random tallies, and ordering of the reranked list."""

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trialmatch.labeling.judgments import CriterionJudgment, TrialJudgments
from trialmatch.model import (
    AttributeCategory,
    Criterion,
    EligibilityLabel,
    Polarity,
)
from trialmatch.rerank import (
    GateDecision,
    GateMode,
    LabelCounts,
    MissingJudgmentsError,
    Provenance,
    RejectReason,
    RelevanceSignal,
    ScoringMethod,
    count_labels,
    deontic_gate,
    parse_method,
    rerank,
    score_judgments,
)
from trialmatch.retrieval import RankedList

ELIGIBLE = EligibilityLabel.ELIGIBLE
EXCLUDED = EligibilityLabel.EXCLUDED
NEI = EligibilityLabel.NOT_ENOUGH_INFO

DIS = AttributeCategory.DISEASE
DEMO = AttributeCategory.DEMOGRAPHIC
TREAT = AttributeCategory.TREATMENT

INC = Polarity.INCLUSION
EXC = Polarity.EXCLUSION


def J(label, polarity=INC, cats=(DIS,), text=None):
    crit = Criterion(
        text or f"criterion {polarity.value} {label.value}",
        polarity,
        frozenset(cats),
    )
    return CriterionJudgment(crit, label)


def judgments(fine, coarse=None, trial_id="NCT1"):
    return TrialJudgments("P1", trial_id, fine=tuple(fine), coarse=coarse)


RELEVANT = RelevanceSignal(True, True, True)


# ---------------------------------------------------------------------------
# Gate truth tables
# ---------------------------------------------------------------------------


def test_gate_rejects_any_relevance_miss():
    j = judgments([J(ELIGIBLE)])
    for combo in itertools.product([True, False], repeat=3):
        signal = RelevanceSignal(*combo)
        decision = deontic_gate(signal, j, GateMode.STRICT)
        if all(combo):
            assert decision.admitted
        else:
            assert decision == GateDecision(False, RejectReason.NOT_RELEVANT)


def gate_table_cases():
    # (has excluded fine, has eligible fine, coarse) -> expected per mode
    cases = []
    for has_exc in (False, True):
        for has_eli in (False, True):
            for coarse in (None, ELIGIBLE, EXCLUDED):
                fine = []
                if has_exc:
                    fine.append(J(EXCLUDED, EXC))
                if has_eli:
                    fine.append(J(ELIGIBLE))
                fine.append(J(NEI))
                cases.append((tuple(fine), coarse, has_exc, has_eli))
    return cases


@pytest.mark.parametrize("fine,coarse,has_exc,has_eli", gate_table_cases())
def test_gate_truth_table(fine, coarse, has_exc, has_eli):
    j = judgments(fine, coarse)
    strict = deontic_gate(RELEVANT, j, GateMode.STRICT)
    lenient = deontic_gate(RELEVANT, j, GateMode.LENIENT)

    any_eligible = has_eli or coarse is ELIGIBLE
    any_excluded = has_exc or coarse is EXCLUDED

    # Lenient ignores exclusion evidence but still demands eligible evidence.
    assert lenient.admitted == any_eligible
    if not any_eligible:
        assert lenient.reason is RejectReason.NO_ELIGIBLE_EVIDENCE

    # Strict checks exclusion evidence first, then eligible evidence.
    if any_excluded:
        assert not strict.admitted
        assert strict.reason is RejectReason.EXCLUSION_EVIDENCE
    else:
        assert strict.admitted == any_eligible

    # A strict admit is always a lenient admit.
    if strict.admitted:
        assert lenient.admitted


@settings(max_examples=200, deadline=None)
@given(
    labels=st.lists(
        st.tuples(
            st.sampled_from([ELIGIBLE, EXCLUDED, NEI]),
            st.sampled_from([INC, EXC]),
        ),
        max_size=8,
    ),
    coarse=st.sampled_from([None, ELIGIBLE, EXCLUDED]),
    relevant=st.tuples(st.booleans(), st.booleans(), st.booleans()),
)
def test_strict_admit_implies_lenient_admit(labels, coarse, relevant):
    j = judgments([J(lab, pol) for lab, pol in labels], coarse)
    signal = RelevanceSignal(*relevant)
    strict = deontic_gate(signal, j, GateMode.STRICT)
    lenient = deontic_gate(signal, j, GateMode.LENIENT)
    if strict.admitted:
        assert lenient.admitted


# ---------------------------------------------------------------------------
# Label counting
# ---------------------------------------------------------------------------


def test_count_labels_per_bucket_duplicates_multi_category():
    j = judgments([J(ELIGIBLE, INC, cats=(DIS, TREAT))])
    c = count_labels(j)
    assert c.count(DIS, INC, ELIGIBLE) == 1
    assert c.count(TREAT, INC, ELIGIBLE) == 1
    assert c.count(None, INC, ELIGIBLE) == 2


def test_count_labels_once_picks_first_category_in_enum_order():
    # Enum order is treatment, demographic, disease.
    j = judgments([J(ELIGIBLE, INC, cats=(TREAT, DIS))])
    c = count_labels(j, multi_category="once")
    assert c.count(TREAT, INC, ELIGIBLE) == 1
    assert c.count(DIS, INC, ELIGIBLE) == 0


def test_count_labels_rejects_unknown_mode():
    with pytest.raises(ValueError):
        count_labels(judgments([J(ELIGIBLE)]), multi_category="twice")


def test_uncategorized_criteria_count_as_disease():
    j = judgments([J(NEI, EXC, cats=())])
    c = count_labels(j)
    assert c.count(DIS, EXC, NEI) == 1


def test_totals_include_not_enough_info():
    j = judgments([J(ELIGIBLE), J(NEI), J(NEI)])
    c = count_labels(j)
    assert c.total(None, INC) == 3
    assert c.count(None, INC, ELIGIBLE) == 1


@settings(max_examples=100, deadline=None)
@given(
    labels=st.lists(
        st.tuples(
            st.sampled_from([ELIGIBLE, EXCLUDED, NEI]),
            st.sampled_from([INC, EXC]),
            st.sets(st.sampled_from([DIS, DEMO, TREAT]), min_size=1, max_size=3),
        ),
        max_size=10,
    )
)
def test_count_invariants(labels):
    j = judgments([J(lab, pol, cats) for lab, pol, cats in labels])
    per_bucket = count_labels(j)
    once = count_labels(j, multi_category="once")
    # "once" tallies each criterion exactly once.
    assert once.total() == len(labels)
    # Per-bucket tallies each criterion once per category it carries.
    assert per_bucket.total() == sum(len(cats) for _, _, cats in labels)
    # Label counts sum to the bucket totals in both modes.
    for c in (per_bucket, once):
        for pol in (INC, EXC):
            parts = sum(c.count(None, pol, lab) for lab in EligibilityLabel)
            assert parts == c.total(None, pol)


# ---------------------------------------------------------------------------
# Scoring: hand-computed golden table
# ---------------------------------------------------------------------------

# A trial with 4 inclusion criteria (2 eligible, 1 excluded, 1 unknown)
# and 3 exclusion criteria (1 eligible, 1 excluded, 1 unknown).
MIXED = judgments(
    [
        J(ELIGIBLE, INC),
        J(ELIGIBLE, INC, cats=(DEMO,)),
        J(EXCLUDED, INC),
        J(NEI, INC, cats=(TREAT,)),
        J(ELIGIBLE, EXC),
        J(EXCLUDED, EXC),
        J(NEI, EXC),
    ],
    coarse=ELIGIBLE,
)

# Fully clean judgments: every criterion eligible.
CLEAN = judgments(
    [J(ELIGIBLE, INC), J(ELIGIBLE, INC), J(ELIGIBLE, EXC)],
    coarse=ELIGIBLE,
)

GOLDEN = [
    (MIXED, "ie", 0.0, 2 / 4),
    (MIXED, "fie", 0.0, 0.0),  # any excluded zeroes the score
    (MIXED, "fio", 0.0, 0.0),  # excluded among inclusion zeroes it
    (MIXED, "ee", 0.0, 1 / 3),
    (MIXED, "ge", 0.0, 3 / 7),
    (MIXED, "contrast", 0.0, (3 - 2) / 7),
    (MIXED, "wcontrast:1:2", 0.0, (3 - 4) / 7),
    (MIXED, "wcontrast:2:1", 0.0, (6 - 2) / 7),
    (MIXED, "cg", 0.25, 1.25),  # prior + coarse boost
    (MIXED, "hybrid", 0.0, 2 / 4 + 1.0),
    (MIXED, "disease-only", 0.0, 1 / 2),  # eligible/excluded disease inclusions
    (CLEAN, "fie", 0.0, 1.0),
    (CLEAN, "contrast", 0.0, 1.0),
    (MIXED, "demo-only", 0.0, 1 / 1),
    (MIXED, "treatment-only", 0.0, 0 / 1),
]


@pytest.mark.parametrize("j,token,prior,expected", GOLDEN)
def test_scoring_golden_table(j, token, prior, expected):
    method = parse_method(token)
    score = score_judgments(j, method, prior_ov=prior)
    assert score.value == pytest.approx(expected, abs=1e-12)
    assert not score.empty_denominator


def test_empty_denominator_flag():
    only_exclusion = judgments([J(ELIGIBLE, EXC)], coarse=None)
    score = score_judgments(only_exclusion, parse_method("ie"))
    assert score == (0.0, True)
    score = score_judgments(only_exclusion, parse_method("treatment-only"))
    assert score.empty_denominator


def test_coarse_methods_need_a_coarse_label():
    no_coarse = judgments([J(ELIGIBLE)])
    for token in ("cg", "hybrid"):
        with pytest.raises(MissingJudgmentsError):
            score_judgments(no_coarse, parse_method(token))


def test_fine_methods_need_fine_labels():
    coarse_only = judgments([], coarse=ELIGIBLE)
    with pytest.raises(MissingJudgmentsError):
        score_judgments(coarse_only, parse_method("ie"))
    # cg runs on the coarse label alone.
    assert score_judgments(coarse_only, parse_method("cg"), prior_ov=0.5).value == 1.5


def test_cg_without_eligible_coarse_keeps_prior():
    j = judgments([J(ELIGIBLE)], coarse=EXCLUDED)
    assert score_judgments(j, parse_method("cg"), prior_ov=0.7).value == 0.7


def test_hybrid_without_eligible_coarse_is_plain_ie():
    j = judgments([J(ELIGIBLE, INC), J(EXCLUDED, INC)], coarse=EXCLUDED)
    assert score_judgments(j, parse_method("hybrid")).value == pytest.approx(0.5)


@settings(max_examples=300, deadline=None)
@given(
    labels=st.lists(
        st.tuples(
            st.sampled_from([ELIGIBLE, EXCLUDED, NEI]),
            st.sampled_from([INC, EXC]),
        ),
        min_size=1,
        max_size=12,
    ),
    coarse=st.sampled_from([ELIGIBLE, EXCLUDED]),
    prior=st.floats(0.0, 1.0),
)
def test_score_ranges(labels, coarse, prior):
    j = judgments([J(lab, pol) for lab, pol in labels], coarse)
    for token in ("ie", "fie", "fio", "ee", "ge"):
        v = score_judgments(j, parse_method(token)).value
        assert 0.0 <= v <= 1.0
    assert -1.0 <= score_judgments(j, parse_method("contrast")).value <= 1.0
    v = score_judgments(j, parse_method("wcontrast:1:2")).value
    assert -2.0 <= v <= 1.0
    assert 0.0 <= score_judgments(j, parse_method("cg"), prior_ov=prior).value <= 2.0
    assert 0.0 <= score_judgments(j, parse_method("hybrid")).value <= 2.0
    # fie is never above ie and fio sits between them.
    ie = score_judgments(j, parse_method("ie")).value
    fie = score_judgments(j, parse_method("fie")).value
    fio = score_judgments(j, parse_method("fio")).value
    assert fie <= fio <= ie


# ---------------------------------------------------------------------------
# Method parsing
# ---------------------------------------------------------------------------


def test_parse_method_plain_kinds():
    for kind in ("ie", "fie", "fio", "ee", "ge", "contrast", "cg", "hybrid"):
        assert parse_method(kind).kind == kind


def test_parse_method_wcontrast_weights():
    m = parse_method("wcontrast:0.5:3")
    assert (m.kind, m.alpha, m.beta) == ("wcontrast", 0.5, 3.0)
    assert parse_method("wcontrast").alpha == 1.0
    assert parse_method("WCONTRAST:2").alpha == 2.0
    assert m.label == "wcontrast:0.5:3"


def test_parse_method_attribute_aliases():
    assert parse_method("disease-only").attribute is DIS
    assert parse_method("demo-only").attribute is DEMO
    assert parse_method("demographic-only").attribute is DEMO
    assert parse_method("treatment-only").attribute is TREAT
    assert parse_method("disease-only").label == "disease-only"


def test_parse_method_rejects_unknown():
    with pytest.raises(ValueError):
        parse_method("pagerank")
    with pytest.raises(ValueError):
        ScoringMethod("restricted_ie")


def test_method_flags():
    assert not parse_method("cg").needs_fine
    assert parse_method("cg").needs_coarse
    assert parse_method("hybrid").needs_fine and parse_method("hybrid").needs_coarse
    assert parse_method("ie").needs_fine and not parse_method("ie").needs_coarse


# ---------------------------------------------------------------------------
# Rerank ordering
# ---------------------------------------------------------------------------


def _entry(tid, score, prov=Provenance.CONDITION):
    return (tid, score, prov)


def test_rerank_orders_by_score_then_prior_then_id():
    candidates = RankedList.from_scored(
        [
            _entry("NCT1", 0.9),
            _entry("NCT2", 0.8),
            _entry("NCT3", 0.7),
            _entry("NCT4", 0.6),
        ]
    )
    judg = {
        # NCT3 scores 1.0 and leads; the rest tie at 0.5 and fall back to
        # the first-stage score, which puts NCT1 over NCT2 over NCT4.
        "NCT1": judgments([J(ELIGIBLE), J(NEI, INC, text="a")], trial_id="NCT1"),
        "NCT2": judgments([J(ELIGIBLE), J(NEI, INC, text="b")], trial_id="NCT2"),
        "NCT3": judgments([J(ELIGIBLE)], trial_id="NCT3"),
        "NCT4": judgments([J(ELIGIBLE), J(NEI, INC, text="c")], trial_id="NCT4"),
    }
    relevance = {tid: RELEVANT for tid in judg}
    out = rerank(candidates, judg, relevance, parse_method("ie"), GateMode.LENIENT)
    assert out.trial_ids() == ("NCT3", "NCT1", "NCT2", "NCT4")


def test_rerank_strict_drops_exclusion_evidence():
    candidates = RankedList.from_scored([_entry("NCT1", 0.9), _entry("NCT2", 0.8)])
    judg = {
        "NCT1": judgments([J(ELIGIBLE), J(EXCLUDED, EXC)], trial_id="NCT1"),
        "NCT2": judgments([J(ELIGIBLE)], trial_id="NCT2"),
    }
    relevance = {tid: RELEVANT for tid in judg}
    strict = rerank(candidates, judg, relevance, parse_method("ie"), GateMode.STRICT)
    assert strict.trial_ids() == ("NCT2",)
    lenient = rerank(candidates, judg, relevance, parse_method("ie"), GateMode.LENIENT)
    assert set(lenient.trial_ids()) == {"NCT1", "NCT2"}


def test_rerank_keeps_backfill_below_condition_entries():
    candidates = RankedList.from_scored(
        [
            _entry("NCT1", 0.4),
            _entry("NCT2", 1.0, Provenance.BACKFILL),
        ]
    )
    judg = {
        # The backfilled trial scores higher, but it still ranks below.
        "NCT1": judgments([J(ELIGIBLE), J(NEI)], trial_id="NCT1"),
        "NCT2": judgments([J(ELIGIBLE)], trial_id="NCT2"),
    }
    relevance = {tid: RELEVANT for tid in judg}
    out = rerank(candidates, judg, relevance, parse_method("ie"))
    assert out.trial_ids() == ("NCT1", "NCT2")
    assert [e.provenance for e in out] == [Provenance.CONDITION, Provenance.BACKFILL]


def test_rerank_requires_judgments_and_relevance():
    candidates = RankedList.from_scored([_entry("NCT1", 0.9)])
    with pytest.raises(MissingJudgmentsError, match="no judgments"):
        rerank(candidates, {}, {"NCT1": RELEVANT}, parse_method("ie"))
    j = {"NCT1": judgments([J(ELIGIBLE)], trial_id="NCT1")}
    with pytest.raises(MissingJudgmentsError, match="relevance"):
        rerank(candidates, j, {}, parse_method("ie"))


def test_rerank_empty_input_is_empty():
    out = rerank(RankedList(), {}, {}, parse_method("ie"))
    assert len(out) == 0


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_rerank_output_is_gated_subset(data):
    rng = random.Random(data.draw(st.integers(0, 99_999)))
    n = rng.randint(1, 20)
    scored = sorted((rng.random() for _ in range(n)), reverse=True)
    candidates = RankedList.from_scored(
        [(f"NCT{i:03d}", s, Provenance.CONDITION) for i, s in enumerate(scored)]
    )
    judg = {}
    relevance = {}
    for e in candidates:
        labels = [
            J(rng.choice([ELIGIBLE, EXCLUDED, NEI]), rng.choice([INC, EXC]))
            for _ in range(rng.randint(1, 5))
        ]
        coarse = rng.choice([None, ELIGIBLE, EXCLUDED])
        judg[e.trial_id] = judgments(labels, coarse, trial_id=e.trial_id)
        relevance[e.trial_id] = RelevanceSignal(
            rng.random() < 0.9, rng.random() < 0.9, rng.random() < 0.9
        )
    mode = rng.choice([GateMode.STRICT, GateMode.LENIENT])
    out = rerank(candidates, judg, relevance, parse_method("ge"), mode)
    admitted = {
        e.trial_id
        for e in candidates
        if deontic_gate(relevance[e.trial_id], judg[e.trial_id], mode).admitted
    }
    assert set(out.trial_ids()) == admitted
