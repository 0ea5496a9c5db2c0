"""Second stage: criterion labeling, then the deontic gate and label-based scores.

One patient note and three trials run through the deterministic rule
labeler. The gate decides who may be scored at all; the scoring methods
then turn the surviving label sets into ranking scores.
"""

from trialmatch.labeling import RuleMock, categorize_trial, extract_patient, extract_trial, judge_trial
from trialmatch.rerank import (
    GateMode,
    Provenance,
    RelevanceSignal,
    deontic_gate,
    parse_method,
    rerank,
    score_judgments,
)
from trialmatch.retrieval import RankedList

NOTE = (
    "Patient is a 45-year-old woman presenting for screening. "
    "Diagnosis: allergic asthma. "
    "Signs: allergic asthma; wheezing at night. "
    "Treatments: albuterol inhaler. "
    "Demographics: 45-year-old woman."
)

TRIALS = [
    {
        "id": "NCT100",
        "condition": ["allergic asthma"],
        "eligibility": {
            "inclusion": ["Histologically confirmed allergic asthma", "age 18 - 70"],
            "exclusion": ["History of smoking"],
        },
        "age": {"min": 18, "max": 70},
        "gender": "All",
        "text": "biologic for allergic asthma",
    },
    {
        "id": "NCT101",
        "condition": ["allergic asthma"],
        "eligibility": {
            "inclusion": ["Confirmed allergic asthma"],
            "exclusion": ["History of wheezing at night"],
        },
        "age": {"min": 18, "max": 70},
        "gender": "All",
        "text": "trial excluding nocturnal symptoms",
    },
    {
        "id": "NCT102",
        "condition": ["allergic asthma"],
        "eligibility": {
            "inclusion": ["Positive serum biomarker panel qx77"],
            "exclusion": [],
        },
        "age": {"min": 18, "max": 70},
        "gender": "All",
        "text": "biomarker-gated study",
    },
]


def main() -> None:
    labeler = RuleMock()
    patient = extract_patient("P1", NOTE, labeler)
    print(f"patient: age {patient.age.intervals}, gender {patient.gender.token}, "
          f"disease {sorted(patient.disease)}\n")

    print("== Criterion labels ==")
    all_judgments = {}
    for raw in TRIALS:
        trial = categorize_trial(extract_trial(raw), labeler)
        j = judge_trial(patient, trial, labeler)
        all_judgments[trial.trial_id] = j
        print(f"{trial.trial_id}  coarse = {j.coarse.value}")
        for cj in j.fine:
            cats = ",".join(sorted(c.value for c in cj.criterion.categories))
            print(f"   [{cj.criterion.polarity.value:9}] {cj.criterion.text:45} "
                  f"-> {cj.label.value} ({cats})")
    print()

    print("== Gate decisions (relevance checks all pass here) ==")
    signal = RelevanceSignal(True, True, True)
    for tid, j in all_judgments.items():
        strict = deontic_gate(signal, j, GateMode.STRICT)
        lenient = deontic_gate(signal, j, GateMode.LENIENT)
        def word(d):
            return "admit" if d.admitted else f"reject ({d.reason.name})"
        print(f"{tid}  strict: {word(strict):35} lenient: {word(lenient)}")
    print()

    print("== Scores on NCT100's labels ==")
    j = all_judgments["NCT100"]
    for token in ("ie", "fie", "ee", "ge", "contrast", "wcontrast:1:2", "cg", "hybrid"):
        score = score_judgments(j, parse_method(token), prior_ov=0.8)
        print(f"{token:15} {score.value:+.3f}")
    print()

    print("== Reranking the three candidates with the hybrid method ==")
    first_stage = RankedList.from_scored(
        [(raw["id"], 1.0, Provenance.CONDITION) for raw in TRIALS]
    )
    relevance = {raw["id"]: signal for raw in TRIALS}
    ranked = rerank(first_stage, all_judgments, relevance, parse_method("hybrid"))
    for e in ranked:
        print(f"  rank {e.rank}  {e.trial_id}  score {e.score:.3f}")
    print("(the strictly gated exclusion hit and the evidence-free trial are gone)")


if __name__ == "__main__":
    main()
