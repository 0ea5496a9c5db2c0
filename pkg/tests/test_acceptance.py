"""Release gate: one test per numbered acceptance check.

Each test re-verifies a core guarantee end to end, at the stated tolerance,
against oracles that live in the per-module test files. Run with -v to get
one pass or fail line per check. The benchmark-backed checks share one
20-topic corpus and one warm store through module fixtures.
"""

import itertools
import json
import math
import random
import time

import pytest

import test_evaluation as eval_refs
from test_normalize import NORMALIZATION_QUERIES, lsh_agreement_rate, oracle_best
from test_ontology import bfs_within, build_adjacency, random_dag, to_graph
from test_retrieval import make_patient, oracle_ranking, random_corpus

from trialmatch.benchmark import DF_VIOLATING_ROLES, generate_benchmark
from trialmatch.evaluation import (
    cohen_kappa,
    mrr,
    ndcg_at_k,
    pearson_r,
    precision_at_k,
    recall_at_n,
)
from trialmatch.labeling import RuleMock
from trialmatch.labeling.judgments import CriterionJudgment, TrialJudgments
from trialmatch.model import (
    AttributeCategory,
    Criterion,
    EligibilityLabel,
    Polarity,
)
from trialmatch.normalize import best_match
from trialmatch.ontology import expand_neighborhood
from trialmatch.pipeline import (
    PipelineConfig,
    PipelineContext,
    run_pipeline,
    sweep_n_level,
)
from trialmatch.rerank import (
    GateMode,
    RelevanceSignal,
    deontic_gate,
    parse_method,
    score_judgments,
)
from trialmatch.retrieval import (
    ConditionIndex,
    Provenance,
    RankedList,
    demographic_filter,
    retrieve_by_condition,
)

ELIGIBLE = EligibilityLabel.ELIGIBLE
EXCLUDED = EligibilityLabel.EXCLUDED
NEI = EligibilityLabel.NOT_ENOUGH_INFO
INC = Polarity.INCLUSION
EXC = Polarity.EXCLUSION


def ok(num: int, message: str) -> None:
    print(f"PASS {num:02d}: {message}")


# ---------------------------------------------------------------------------
# Shared benchmark fixtures. One 20-topic corpus; the truth run's store is
# reused by every check that only needs warm, already-labeled data.
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def bench20(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench20")
    return generate_benchmark(out, topics=20, seed=7)


@pytest.fixture(scope="module")
def work_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("gate")


def make_cfg(bench, root, name, **overrides) -> PipelineConfig:
    base = dict(
        ontology=str(bench.ontology),
        corpus=str(bench.corpus),
        topics=str(bench.topics),
        qrels=str(bench.qrels),
        output_dir=str(root / name / "runs"),
        store_dir=str(root / name / "store"),
        seed=7,
    )
    base.update(overrides)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def truth_run(bench20, work_dir):
    cfg = make_cfg(bench20, work_dir, "truth")
    return cfg, run_pipeline(cfg, work_dir / "truth" / "run")


@pytest.fixture(scope="module")
def noisy_runs(bench20, work_dir):
    """Hybrid and cg runs at noise 0.1 sharing one store, so both rerank
    the same noisy labels."""
    cfg_h = make_cfg(bench20, work_dir, "noisy", noise_rate=0.1, method="hybrid")
    res_h = run_pipeline(cfg_h, work_dir / "noisy" / "run_hybrid")
    cfg_c = make_cfg(bench20, work_dir, "noisy", noise_rate=0.1, method="cg")
    res_c = run_pipeline(cfg_c, work_dir / "noisy" / "run_cg")
    return res_h, res_c


# ---------------------------------------------------------------------------
# 1. Metric kernels against the naive references
# ---------------------------------------------------------------------------


def test_01_metric_kernels_match_references():
    rng = random.Random(1001)
    start = time.perf_counter()
    for _ in range(1000):
        ranking, qrels = eval_refs.random_topic(rng)
        k = rng.randint(1, 30)
        threshold = rng.choice([1, 2])
        exp = rng.random() < 0.5
        assert ndcg_at_k(ranking, qrels, k, exp) == pytest.approx(
            eval_refs.ref_ndcg(ranking, qrels, k, exp), abs=1e-9
        )
        assert precision_at_k(ranking, qrels, k, threshold) == pytest.approx(
            eval_refs.ref_precision(ranking, qrels, k, threshold), abs=1e-9
        )
        want = eval_refs.ref_recall(ranking, qrels, k, threshold)
        got = recall_at_n(ranking, qrels, k, threshold)
        if want is None:
            assert got is None
        else:
            assert got == pytest.approx(want, abs=1e-9)
        assert mrr(ranking, qrels, threshold) == pytest.approx(
            eval_refs.ref_mrr(ranking, qrels, threshold), abs=1e-9
        )
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    ok(1, f"metric kernels match naive references on 1000 fuzzed topics in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. Condition retrieval against an exhaustive scan
# ---------------------------------------------------------------------------


def test_02_condition_retrieval_matches_exhaustive_scan():
    rng = random.Random(1002)
    sizes = [10_000] + [rng.randint(20, 2500) for _ in range(99)]
    for size in sizes:
        vocab, trials = random_corpus(rng, size, rng.randint(8, 40))
        index = ConditionIndex(trials)
        expanded = frozenset(rng.sample(vocab, rng.randint(1, min(8, len(vocab)))))
        patient = make_patient(expanded)
        got = [(e.trial_id, e.score) for e in retrieve_by_condition(patient, index)]
        assert got == oracle_ranking(expanded, trials)
    ok(2, f"overlap ranking matches brute force on 100 corpora, largest {sizes[0]} trials")


# ---------------------------------------------------------------------------
# 3. Neighborhood expansion against a BFS oracle
# ---------------------------------------------------------------------------


def test_03_expansion_matches_bfs_oracle():
    rng = random.Random(1003)
    for _ in range(200):
        nodes = random_dag(rng, rng.randint(2, 1000))
        graph = to_graph(nodes)
        adj = build_adjacency(nodes)
        for start in rng.sample(sorted(nodes), 2):
            previous: frozenset[str] = frozenset()
            for n in range(6):
                got = expand_neighborhood(graph, start, n)
                assert got == bfs_within(adj, start, n)
                assert previous <= got
                previous = got
    ok(3, "expansion equals BFS oracle on 200 random DAGs, monotone in the level")


# ---------------------------------------------------------------------------
# 4. Normalization: exact argmax and LSH agreement
# ---------------------------------------------------------------------------


def test_04_normalization_exact_and_approximate(toy_ontology):
    for query, _ in NORMALIZATION_QUERIES:
        want_id, _ = oracle_best(query, toy_ontology)
        assert best_match(query, toy_ontology, mode="exact").concept_id == want_id
    rate = lsh_agreement_rate(toy_ontology, NORMALIZATION_QUERIES)
    assert rate >= 0.9
    ok(4, f"exact argmax matches exhaustive scan; LSH top-1 agreement {rate:.2f}")


# ---------------------------------------------------------------------------
# 5. Scoring golden table and range bounds
# ---------------------------------------------------------------------------


def crit(label, polarity, cat=AttributeCategory.DISEASE):
    text = f"{polarity.value} criterion labeled {label.value}"
    return CriterionJudgment(Criterion(text, polarity, frozenset({cat})), label)


DIS = AttributeCategory.DISEASE
DEMO = AttributeCategory.DEMOGRAPHIC
TREAT = AttributeCategory.TREATMENT

# Mixed evidence: 4 inclusion criteria (2 eligible, 1 excluded, 1 unknown)
# and 3 exclusion criteria (1 each).
MIXED = TrialJudgments(
    "P1",
    "NCTA",
    fine=(
        crit(ELIGIBLE, INC, DIS),
        crit(ELIGIBLE, INC, TREAT),
        crit(EXCLUDED, INC, DEMO),
        crit(NEI, INC, DIS),
        crit(ELIGIBLE, EXC, DIS),
        crit(EXCLUDED, EXC, TREAT),
        crit(NEI, EXC, DEMO),
    ),
    coarse=ELIGIBLE,
)

# Fully satisfied inclusions, nothing excluded.
CLEAN = TrialJudgments(
    "P1",
    "NCTB",
    fine=(crit(ELIGIBLE, INC, DIS), crit(ELIGIBLE, INC, TREAT)),
)

# One satisfied inclusion against two excluding ones.
ADVERSE = TrialJudgments(
    "P1",
    "NCTC",
    fine=(crit(ELIGIBLE, INC, DIS), crit(EXCLUDED, INC, DIS), crit(EXCLUDED, INC, TREAT)),
)

# (judgments, method token, first-stage prior, expected score), all by hand.
GOLDEN = [
    (MIXED, "ie", 0.0, 2 / 4),
    (MIXED, "fie", 0.0, 0.0),
    (MIXED, "fio", 0.0, 0.0),
    (MIXED, "ee", 0.0, 1 / 3),
    (MIXED, "ge", 0.0, 3 / 7),
    (MIXED, "contrast", 0.0, 1 / 7),
    (MIXED, "wcontrast:1:2", 0.0, (3 - 2 * 2) / 7),
    (MIXED, "cg", 0.25, 1.25),
    (MIXED, "hybrid", 0.0, 2 / 4 + 1.0),
    (CLEAN, "ie", 0.0, 1.0),
    (CLEAN, "fie", 0.0, 1.0),
    (ADVERSE, "contrast", 0.0, (1 - 2) / 3),
]


def test_05_scoring_golden_table_and_bounds():
    assert len(GOLDEN) == 12
    for judgments, token, prior, want in GOLDEN:
        got = score_judgments(judgments, parse_method(token), prior_ov=prior)
        assert got.value == pytest.approx(want, abs=1e-12), token

    pool = [crit(lab, pol) for lab in (ELIGIBLE, EXCLUDED, NEI) for pol in (INC, EXC)]
    plain = {t: parse_method(t) for t in ("ie", "fie", "fio", "ee", "ge", "contrast", "cg", "hybrid")}
    weighted = [(a, b, parse_method(f"wcontrast:{a}:{b}")) for a in (1, 2, 3) for b in (1, 2, 3)]
    rng = random.Random(1005)
    for i in range(100_000):
        tj = TrialJudgments(
            "P1",
            "NCTR",
            fine=tuple(rng.choices(pool, k=rng.randint(1, 8))),
            coarse=ELIGIBLE if rng.random() < 0.5 else EXCLUDED,
        )
        ie = score_judgments(tj, plain["ie"]).value
        fie = score_judgments(tj, plain["fie"]).value
        fio = score_judgments(tj, plain["fio"]).value
        assert 0.0 <= fie <= fio <= ie <= 1.0
        assert 0.0 <= score_judgments(tj, plain["ee"]).value <= 1.0
        assert 0.0 <= score_judgments(tj, plain["ge"]).value <= 1.0
        assert -1.0 <= score_judgments(tj, plain["contrast"]).value <= 1.0
        alpha, beta, method = weighted[i % 9]
        assert -beta <= score_judgments(tj, method).value <= alpha
        prior = rng.random()
        cg = score_judgments(tj, plain["cg"], prior_ov=prior).value
        assert prior <= cg <= prior + 1.0
        assert 0.0 <= score_judgments(tj, plain["hybrid"]).value <= 2.0
    ok(5, "12 golden scores match to 1e-12; bounds hold on 100000 random tallies")


# ---------------------------------------------------------------------------
# 6. Gate truth table and strict-implies-lenient
# ---------------------------------------------------------------------------


def expected_admission(mode, signal, n_eli, n_exc, coarse) -> bool:
    if not (signal.age_overlap and signal.gender_ok and signal.condition_overlap):
        return False
    has_exclusion = n_exc > 0 or coarse is EXCLUDED
    has_eligible = n_eli > 0 or coarse is ELIGIBLE
    if mode is GateMode.STRICT and has_exclusion:
        return False
    return has_eligible


def test_06_gate_truth_table_and_monotonicity():
    cases = 0
    for n_eli, n_exc, n_nei in itertools.product(range(3), repeat=3):
        fine = (
            tuple(crit(ELIGIBLE, INC) for _ in range(n_eli))
            + tuple(crit(EXCLUDED, EXC) for _ in range(n_exc))
            + tuple(crit(NEI, INC) for _ in range(n_nei))
        )
        for coarse in (None, ELIGIBLE, EXCLUDED):
            tj = TrialJudgments("P1", "NCT1", fine=fine, coarse=coarse)
            for combo in itertools.product([True, False], repeat=3):
                signal = RelevanceSignal(*combo)
                strict = deontic_gate(signal, tj, GateMode.STRICT)
                lenient = deontic_gate(signal, tj, GateMode.LENIENT)
                assert strict.admitted == expected_admission(
                    GateMode.STRICT, signal, n_eli, n_exc, coarse
                )
                assert lenient.admitted == expected_admission(
                    GateMode.LENIENT, signal, n_eli, n_exc, coarse
                )
                if strict.admitted:
                    assert lenient.admitted
                cases += 1

    labels = (ELIGIBLE, EXCLUDED, NEI)
    rng = random.Random(1006)
    for _ in range(2000):
        fine = tuple(
            crit(rng.choice(labels), rng.choice((INC, EXC)))
            for _ in range(rng.randint(0, 6))
        )
        coarse = rng.choice((None, ELIGIBLE, EXCLUDED))
        tj = TrialJudgments("P1", "NCT1", fine=fine, coarse=coarse)
        signal = RelevanceSignal(*(rng.random() < 0.8 for _ in range(3)))
        if deontic_gate(signal, tj, GateMode.STRICT).admitted:
            assert deontic_gate(signal, tj, GateMode.LENIENT).admitted
    ok(6, f"gate matches its truth table on {cases} cases; strict implies lenient")


# ---------------------------------------------------------------------------
# 7. Demographic filter on the planted benchmark roles
# ---------------------------------------------------------------------------


def test_07_demographic_filter_on_benchmark(bench20, truth_run):
    cfg, _ = truth_run
    ctx = PipelineContext(cfg)
    with open(bench20.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    by_topic: dict[str, dict[str, str]] = {}
    for tid, info in manifest["trials"].items():
        by_topic.setdefault(info["topic"], {})[tid] = info["role"]

    checked = 0
    for topic, roles in sorted(by_topic.items()):
        profile = ctx.profile_at(topic, cfg.n_level)
        ranked = RankedList.from_scored(
            [(tid, 1.0, Provenance.CONDITION) for tid in sorted(roles)]
        )
        survivors = {e.trial_id for e in demographic_filter(ranked, profile, ctx.trials)}
        for tid, role in roles.items():
            if role in DF_VIOLATING_ROLES:
                assert tid not in survivors, (topic, tid, role)
            else:
                assert tid in survivors, (topic, tid, role)
            checked += 1
    ok(7, f"filter drops every planted violator and no compliant trial ({checked} trials)")


# ---------------------------------------------------------------------------
# 8. Benchmark runs: perfect labels, then noisy labels
# ---------------------------------------------------------------------------


def test_08_benchmark_truth_and_noise(truth_run, noisy_runs):
    _, truth = truth_run
    assert truth.report.macro["ndcg@10"] == pytest.approx(1.0, abs=1e-12)
    assert truth.report.macro["mrr"] == pytest.approx(1.0, abs=1e-12)

    hybrid, cg = noisy_runs
    baseline = hybrid.first_stage_report.macro["ndcg@10"]
    assert hybrid.report.macro["ndcg@10"] > baseline
    assert cg.report.macro["ndcg@10"] > baseline
    ok(
        8,
        "truth run is perfect at 10; noisy hybrid {:.4f} and cg {:.4f} beat overlap {:.4f}".format(
            hybrid.report.macro["ndcg@10"], cg.report.macro["ndcg@10"], baseline
        ),
    )


# ---------------------------------------------------------------------------
# 9. Expansion level sweep
# ---------------------------------------------------------------------------


def test_09_expansion_sweep_monotone(bench20, truth_run):
    cfg, _ = truth_run
    rows = sweep_n_level(cfg, [1, 2, 3, 4])
    assert [level for level, *_ in rows] == [1, 2, 3, 4]
    for (_, r0, p0, s0), (_, r1, p1, s1) in zip(rows, rows[1:]):
        assert r1 >= r0
        assert p1 <= p0
        assert s1 >= s0
    assert rows[-1][1] == pytest.approx(1.0)
    recalls = ", ".join(f"{r:.3f}" for _, r, _, _ in rows)
    ok(9, f"recall rises ({recalls}), precision falls, candidate sets grow")


# ---------------------------------------------------------------------------
# 10. Determinism and warm replay
# ---------------------------------------------------------------------------


def test_10_determinism_and_warm_replay(bench20, work_dir, truth_run, monkeypatch):
    cfg_a, run_a = truth_run
    cfg_b = make_cfg(bench20, work_dir, "twin")
    run_b = run_pipeline(cfg_b, work_dir / "twin" / "run")
    assert run_a.first_stage_path.read_bytes() == run_b.first_stage_path.read_bytes()
    assert run_a.reranked_path.read_bytes() == run_b.reranked_path.read_bytes()

    calls = []
    original = RuleMock._respond

    def counting(self, request):
        calls.append(request.kind)
        return original(self, request)

    monkeypatch.setattr(RuleMock, "_respond", counting)
    replay = run_pipeline(cfg_a, work_dir / "truth" / "replay")
    assert calls == []
    assert replay.reranked_path.read_bytes() == run_a.reranked_path.read_bytes()
    ok(10, "same-seed runs byte-identical; warm replay issued zero labeler calls")


# ---------------------------------------------------------------------------
# 11. Agreement and correlation statistics
# ---------------------------------------------------------------------------


def test_11_statistics_fixtures_and_null():
    # 100 paired votes: 45 yes-yes, 15 yes-no, 15 no-yes, 25 no-no.
    # Observed agreement 0.70, chance agreement 0.6*0.6 + 0.4*0.4 = 0.52,
    # kappa = 0.18 / 0.48 = 0.375.
    a = ["Y"] * 45 + ["Y"] * 15 + ["N"] * 15 + ["N"] * 25
    b = ["Y"] * 45 + ["N"] * 15 + ["Y"] * 15 + ["N"] * 25
    assert cohen_kappa(a, b) == pytest.approx(0.375, abs=1e-12)

    x = [1.0, 2.0, 3.0]
    # Covariance 3, sd_x sqrt(2), sd_y sqrt(42)/3, so r = 9 / (2 sqrt(21)).
    assert pearson_r(x, [1.0, 2.0, 4.0]) == pytest.approx(
        9 / (2 * math.sqrt(21)), abs=1e-12
    )
    assert pearson_r(x, [3.0, 5.0, 7.0]) == pytest.approx(1.0, abs=1e-12)
    assert pearson_r(x, [-1.0, -2.0, -3.0]) == pytest.approx(-1.0, abs=1e-12)

    rng = random.Random(1011)
    n = 100_000
    labels = ("eligible", "excluded", "unknown")
    stream_a = rng.choices(labels, k=n)
    stream_b = rng.choices(labels, k=n)
    null = cohen_kappa(stream_a, stream_b)
    assert abs(null) <= 0.01
    ok(11, f"kappa and pearson fixtures exact; independent-stream kappa {null:+.4f}")
