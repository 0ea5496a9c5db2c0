"""Benchmark generator tests: determinism, planted structure, file consistency."""

import json
import math

import pytest

from trialmatch.benchmark import (
    DF_VIOLATING_ROLES,
    GRADE_BY_ROLE,
    ROLE_AGE_VIOLATING,
    ROLE_CRITERIA_EXCLUDED,
    ROLE_ELIGIBLE,
    ROLE_GENDER_VIOLATING,
    ROLE_RING_DISTRACTOR,
    ROLE_RING_ELIGIBLE,
    generate_benchmark,
)
from trialmatch.evaluation import parse_qrels
from trialmatch.ontology import expand_concepts, load_ontology


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    return generate_benchmark(out, topics=4, seed=7)


def read_manifest(paths):
    with open(paths.manifest, encoding="utf-8") as fh:
        return json.load(fh)


def test_same_seed_same_bytes(tmp_path):
    a = generate_benchmark(tmp_path / "a", topics=3, seed=11)
    b = generate_benchmark(tmp_path / "b", topics=3, seed=11)
    for name in ("ontology", "corpus", "topics", "qrels", "manifest"):
        pa, pb = getattr(a, name), getattr(b, name)
        assert pa.read_bytes() == pb.read_bytes(), name


def test_different_seed_changes_output(tmp_path):
    a = generate_benchmark(tmp_path / "a", topics=3, seed=11)
    b = generate_benchmark(tmp_path / "b", topics=3, seed=12)
    assert a.corpus.read_bytes() != b.corpus.read_bytes()


def test_role_counts_per_topic(bench):
    manifest = read_manifest(bench)
    per_topic: dict[str, dict[str, int]] = {}
    for info in manifest["trials"].values():
        counts = per_topic.setdefault(info["topic"], {})
        counts[info["role"]] = counts.get(info["role"], 0) + 1
    assert len(per_topic) == 4
    for topic, counts in per_topic.items():
        assert counts[ROLE_ELIGIBLE] == 12, topic
        assert counts[ROLE_CRITERIA_EXCLUDED] == 4, topic
        assert counts[ROLE_AGE_VIOLATING] == 2, topic
        assert counts[ROLE_GENDER_VIOLATING] == 2, topic
        assert counts[ROLE_RING_ELIGIBLE] == 4, topic
        # Distractor rings hold 2h+2 trials for hops 1..4.
        assert counts[ROLE_RING_DISTRACTOR] == sum(2 * h + 2 for h in (1, 2, 3, 4)), topic


def test_ring_hops_cover_one_to_four(bench):
    manifest = read_manifest(bench)
    hops = {}
    for info in manifest["trials"].values():
        if info["role"] == ROLE_RING_ELIGIBLE:
            hops.setdefault(info["topic"], []).append(info["hop"])
    for topic, hop_list in hops.items():
        assert sorted(hop_list) == [1, 2, 3, 4], topic


def test_qrels_agree_with_manifest(bench):
    manifest = read_manifest(bench)
    qrels = parse_qrels(bench.qrels)
    judged = {
        (topic, tid): grade
        for topic in qrels.topics()
        for tid, grade in qrels.grades(topic).items()
    }
    assert len(judged) == len(manifest["trials"])
    for tid, info in manifest["trials"].items():
        assert judged[(info["topic"], tid)] == info["grade"]
        assert info["grade"] == GRADE_BY_ROLE[info["role"]]


def test_corpus_ids_match_manifest(bench):
    manifest = read_manifest(bench)
    with open(bench.corpus, encoding="utf-8") as fh:
        corpus_ids = [json.loads(line)["id"] for line in fh]
    assert sorted(corpus_ids) == sorted(manifest["trials"])
    assert len(set(corpus_ids)) == len(corpus_ids)


def test_id_order_carries_no_grade_signal(bench):
    """The shuffle must break any correlation between id rank and grade."""
    manifest = read_manifest(bench)
    ids = sorted(manifest["trials"])
    grades = [manifest["trials"][tid]["grade"] for tid in ids]
    n = len(ids)
    positions = list(range(n))
    mean_p = sum(positions) / n
    mean_g = sum(grades) / n
    cov = sum((p - mean_p) * (g - mean_g) for p, g in zip(positions, grades))
    var_p = sum((p - mean_p) ** 2 for p in positions)
    var_g = sum((g - mean_g) ** 2 for g in grades)
    r = cov / math.sqrt(var_p * var_g)
    assert abs(r) < 0.15


def test_ontology_loads_and_chains_are_separate(bench):
    graph = load_ontology(bench.ontology)
    # Expanding one topic's diagnosis never reaches another topic's chain.
    reach = expand_concepts(graph, {"C01-DIAG"}, 4)
    assert "C01-HOP4" in reach
    assert not any(cid.startswith("C02-") for cid in reach)
    # Hop depth gates reachability level by level.
    for level in range(0, 5):
        reach = expand_concepts(graph, {"C01-DIAG"}, level)
        for h in range(1, 5):
            assert (f"C01-HOP{h}" in reach) == (h <= level)


def test_topics_file_notes_mention_diagnosis(bench):
    manifest = read_manifest(bench)
    diag_by_topic = {t["topic_id"]: t for t in manifest["topics"]}
    with open(bench.topics, encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            topic = diag_by_topic[row["id"]]
            assert f"Diagnosis: primary condition {row['id'][1:]} alpha" in row["note"]
            assert str(topic["age"]) in row["note"]


def test_df_violating_roles_fail_demographics(bench):
    manifest = read_manifest(bench)
    with open(bench.corpus, encoding="utf-8") as fh:
        rows = {row["id"]: row for row in map(json.loads, fh)}
    topics = {t["topic_id"]: t for t in manifest["topics"]}
    for tid, info in manifest["trials"].items():
        row = rows[tid]
        topic = topics[info["topic"]]
        if info["role"] == ROLE_AGE_VIOLATING:
            assert row["age"]["max"] < topic["age"]
        elif info["role"] == ROLE_GENDER_VIOLATING:
            assert row["gender"] not in ("All", topic["gender"])
        else:
            assert row["age"]["min"] <= topic["age"] <= row["age"]["max"]
            assert row["gender"] in ("All", topic["gender"])
    assert set(DF_VIOLATING_ROLES) == {ROLE_AGE_VIOLATING, ROLE_GENDER_VIOLATING}


def test_distractors_have_three_concept_conditions(bench):
    manifest = read_manifest(bench)
    with open(bench.corpus, encoding="utf-8") as fh:
        rows = {json.loads(line)["id"]: json.loads(line) for line in fh}
    for tid, info in manifest["trials"].items():
        row = rows[tid]
        if info["role"] in (ROLE_RING_ELIGIBLE, ROLE_RING_DISTRACTOR):
            assert len(row["condition"]) == 3
            assert row["condition"][0].startswith("variant condition")
        else:
            assert len(row["condition"]) == 1


def test_topic_count_validation(tmp_path):
    with pytest.raises(ValueError):
        generate_benchmark(tmp_path, topics=0)


def test_config_points_at_generated_files(bench):
    text = bench.config.read_text(encoding="utf-8")
    assert f'ontology = "{bench.ontology}"' in text
    assert 'labeler = "rule-mock"' in text
    assert "seed = 7" in text
