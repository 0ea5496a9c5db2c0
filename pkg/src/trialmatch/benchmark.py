"""Synthetic benchmark with planted ground truth.

Generates a self-contained ontology, trial corpus, patient topics, graded
qrels, and a manifest recording every trial's planted role. The corpus is
sized around a thousand trials over twenty topics and is built so the ideal
ranking is known by construction:

* each topic gets a dedicated is-a chain (root, parent, diagnosis, then a
  four-deep descendant chain), so expansions never cross topics;
* 12 trials per topic target the diagnosis itself and accept the patient
  (grade 2); 4 more target it but carry a disqualifying exclusion criterion
  (grade 1); 2 demand an impossible age range and 2 the opposite gender
  (grade 1), which only the demographic filter can remove;
* each hop h in 1..4 down the chain gets one eligible trial (grade 2) and
  2h+2 uninformative distractors (grade 0), all with three-concept
  condition sets (the hop concept plus two far-away distractor concepts),
  so their overlap score is 1/3 against the diagnosis-targeting trials' 1.0
  and deeper hops only become reachable as the expansion level grows.

Trial ids are assigned by a seeded global shuffle so that id-order tie
breaking cannot correlate with relevance.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

ROLE_ELIGIBLE = "eligible"
ROLE_CRITERIA_EXCLUDED = "criteria_excluded"
ROLE_AGE_VIOLATING = "age_violating"
ROLE_GENDER_VIOLATING = "gender_violating"
ROLE_RING_ELIGIBLE = "ring_eligible"
ROLE_RING_DISTRACTOR = "ring_distractor"

GRADE_BY_ROLE = {
    ROLE_ELIGIBLE: 2,
    ROLE_CRITERIA_EXCLUDED: 1,
    ROLE_AGE_VIOLATING: 1,
    ROLE_GENDER_VIOLATING: 1,
    ROLE_RING_ELIGIBLE: 2,
    ROLE_RING_DISTRACTOR: 0,
}

DF_VIOLATING_ROLES = (ROLE_AGE_VIOLATING, ROLE_GENDER_VIOLATING)

_ELIGIBLE_PER_TOPIC = 12
_EXCLUDED_PER_TOPIC = 4
_CHAIN_HOPS = 4
_FAR_POOL_SIZE = 40


@dataclass(frozen=True)
class BenchmarkPaths:
    root: Path
    ontology: Path
    corpus: Path
    topics: Path
    qrels: Path
    manifest: Path
    config: Path


def _concept(concept_id: str, label: str, parents: list[str], synonyms: list[str] | None = None) -> dict:
    return {
        "id": concept_id,
        "label": label,
        "synonyms": synonyms or [],
        "parents": parents,
    }


def generate_benchmark(out_dir: str | Path, topics: int = 20, seed: int = 7) -> BenchmarkPaths:
    """Write the benchmark files under out_dir and return their paths."""
    if topics < 1:
        raise ValueError("need at least one topic")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)

    concepts: list[dict] = []
    far_ids = []
    concepts.append(_concept("C-FAR-ROOT", "unrelated finding pool", []))
    for j in range(_FAR_POOL_SIZE):
        cid = f"C-FAR-{j:03d}"
        far_ids.append(cid)
        concepts.append(_concept(cid, f"distractor finding {j:03d}", ["C-FAR-ROOT"]))

    topic_rows = []
    trial_specs: list[dict] = []

    for i in range(1, topics + 1):
        tag = f"{i:02d}"
        root_id = f"C{tag}-ROOT"
        parent_id = f"C{tag}-PARENT"
        diag_id = f"C{tag}-DIAG"
        diag_label = f"primary condition {tag} alpha"
        concepts.append(_concept(root_id, f"disorder family {tag}", []))
        concepts.append(_concept(parent_id, f"chronic disorder {tag}", [root_id]))
        concepts.append(
            _concept(diag_id, diag_label, [parent_id], [f"condition {tag} alpha form"])
        )
        hop_ids = []
        above = diag_id
        for h in range(1, _CHAIN_HOPS + 1):
            hid = f"C{tag}-HOP{h}"
            hop_ids.append(hid)
            concepts.append(_concept(hid, f"variant condition {tag} type {h}", [above]))
            above = hid

        age = rng.randint(35, 60)
        gender_word = "woman" if i % 2 else "man"
        gender = "Female" if i % 2 else "Male"
        opposite = "Male" if i % 2 else "Female"
        sign = f"persistent marker finding {tag}"
        treatment = f"maintenance regimen {tag}"
        topic_id = f"T{tag}"
        note = (
            f"Patient is a {age}-year-old {gender_word} presenting for trial screening. "
            f"Diagnosis: {diag_label}. "
            f"Signs: {diag_label}; {sign}; fatigue on exertion. "
            f"Treatments: {treatment}. "
            f"Demographics: {age}-year-old {gender_word}."
        )
        topic_rows.append(
            {
                "topic_id": topic_id,
                "note": note,
                "diagnosis_concept": diag_id,
                "age": age,
                "gender": gender,
            }
        )

        confirmed = f"Histologically confirmed {diag_label}"
        age_band = "age 18 - 70"
        unseen_exclusion = f"Prior chemotherapy with compound zx-{tag}"

        def plant(role: str, condition: list[str], inclusion: list[str],
                 exclusion: list[str], trial_age: dict, trial_gender: str,
                 hop: int | None = None) -> dict:
            return {
                "topic": topic_id,
                "role": role,
                "hop": hop,
                "grade": GRADE_BY_ROLE[role],
                "condition": condition,
                "inclusion": inclusion,
                "exclusion": exclusion,
                "age": trial_age,
                "gender": trial_gender,
            }

        open_age = {"min": 18, "max": 70}
        for _ in range(_ELIGIBLE_PER_TOPIC):
            trial_specs.append(
                plant(ROLE_ELIGIBLE, [diag_label], [confirmed, age_band],
                     [unseen_exclusion], open_age, "All")
            )
        for _ in range(_EXCLUDED_PER_TOPIC):
            trial_specs.append(
                plant(ROLE_CRITERIA_EXCLUDED, [diag_label], [confirmed, age_band],
                     [f"History of {sign}"], open_age, "All")
            )
        for _ in range(2):
            trial_specs.append(
                plant(ROLE_AGE_VIOLATING, [diag_label], [confirmed, age_band],
                     [unseen_exclusion], {"min": 1, "max": 10}, "All")
            )
        for _ in range(2):
            trial_specs.append(
                plant(ROLE_GENDER_VIOLATING, [diag_label], [confirmed, age_band],
                     [unseen_exclusion], open_age, opposite)
            )
        for h in range(1, _CHAIN_HOPS + 1):
            hop_label = f"variant condition {tag} type {h}"
            far = rng.sample(far_ids, 2)
            far_labels = [f"distractor finding {fid.split('-')[-1]}" for fid in far]
            trial_specs.append(
                plant(ROLE_RING_ELIGIBLE, [hop_label, *far_labels],
                     [confirmed, age_band], [unseen_exclusion], open_age, "All", hop=h)
            )
            for d in range(2 * h + 2):
                far = rng.sample(far_ids, 2)
                far_labels = [f"distractor finding {fid.split('-')[-1]}" for fid in far]
                trial_specs.append(
                    plant(ROLE_RING_DISTRACTOR, [hop_label, *far_labels],
                         [f"Positive serum biomarker panel qx-{tag}-{h}-{d}"],
                         [], open_age, "All", hop=h)
                )

    # Assign ids by a global shuffle so id order carries no role signal.
    id_pool = [f"NCT{n:07d}" for n in range(1, len(trial_specs) + 1)]
    rng.shuffle(id_pool)
    for s, trial_id in zip(trial_specs, id_pool):
        s["trial_id"] = trial_id

    ontology_path = root / "ontology.jsonl"
    with open(ontology_path, "w", encoding="utf-8") as fh:
        for c in concepts:
            fh.write(json.dumps(c) + "\n")

    corpus_path = root / "corpus.jsonl"
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for s in sorted(trial_specs, key=lambda s: s["trial_id"]):
            row = {
                "id": s["trial_id"],
                "condition": s["condition"],
                "eligibility": {"inclusion": s["inclusion"], "exclusion": s["exclusion"]},
                "age": s["age"],
                "gender": s["gender"],
                "text": (
                    f"A study of {s['condition'][0]} in adults. "
                    f"Inclusion: {'; '.join(s['inclusion'])}. "
                    f"Exclusion: {'; '.join(s['exclusion']) or 'none'}."
                ),
            }
            fh.write(json.dumps(row) + "\n")

    topics_path = root / "topics.jsonl"
    with open(topics_path, "w", encoding="utf-8") as fh:
        for t in topic_rows:
            fh.write(json.dumps({"id": t["topic_id"], "note": t["note"]}) + "\n")

    qrels_path = root / "qrels.txt"
    with open(qrels_path, "w", encoding="utf-8") as fh:
        for s in sorted(trial_specs, key=lambda s: (s["topic"], s["trial_id"])):
            fh.write(f"{s['topic']} 0 {s['trial_id']} {s['grade']}\n")

    manifest_path = root / "manifest.json"
    manifest = {
        "seed": seed,
        "topics": topic_rows,
        "trials": {
            s["trial_id"]: {
                "topic": s["topic"],
                "role": s["role"],
                "grade": s["grade"],
                "hop": s["hop"],
            }
            for s in trial_specs
        },
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    config_path = root / "benchmark.toml"
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(
            "\n".join(
                [
                    f'ontology = "{ontology_path}"',
                    f'corpus = "{corpus_path}"',
                    f'topics = "{topics_path}"',
                    f'qrels = "{qrels_path}"',
                    f'output_dir = "{root / "runs"}"',
                    'labeler = "rule-mock"',
                    f"seed = {seed}",
                    "",
                ]
            )
        )

    return BenchmarkPaths(
        root=root,
        ontology=ontology_path,
        corpus=corpus_path,
        topics=topics_path,
        qrels=qrels_path,
        manifest=manifest_path,
        config=config_path,
    )
