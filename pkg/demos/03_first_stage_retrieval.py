"""First-stage retrieval: condition overlap, then the demographic cut and backfill.

A ten-trial corpus is ranked for one patient. The walk-through shows the
overlap scores, the demographic cut, and the backfill that tops the
shortlist back up to K from the corpus-wide pool. A BM25 ranking over the
trial texts is printed last as the text-only baseline.
"""

from trialmatch.model import AgeSet, Gender, PatientProfile, TrialRecord
from trialmatch.retrieval import (
    ConditionIndex,
    TextIndex,
    backfill_to_k,
    bm25_retrieve,
    demographic_filter,
    retrieve_by_condition,
)


def trial(tid, concepts, age, gender, text):
    return TrialRecord(
        trial_id=tid,
        age=AgeSet.span(*age),
        gender=Gender.parse(gender),
        condition_raw=frozenset({tid.lower()}),
        condition_norm=frozenset(concepts),
        text=text,
    )


TRIALS = {
    t.trial_id: t
    for t in [
        trial("NCT001", {"R04"}, (18, 99), "All", "allergic asthma biologic study"),
        trial("NCT002", {"R04", "R03"}, (18, 40), "All", "asthma inhaler comparison"),
        trial("NCT003", {"R03"}, (18, 99), "Male", "asthma exercise program for men"),
        trial("NCT004", {"R03", "R02"}, (18, 99), "All", "airway disease registry"),
        trial("NCT005", {"R05"}, (40, 80), "All", "copd rehabilitation"),
        trial("NCT006", {"R05", "R02"}, (50, 85), "All", "copd oxygen titration"),
        trial("NCT007", {"R06"}, (18, 99), "All", "interstitial lung disease imaging"),
        trial("NCT008", {"R01"}, (18, 99), "All", "respiratory disease cohort"),
        trial("NCT009", {"R04", "R02"}, (45, 99), "All", "late-onset allergic asthma"),
        trial("NCT010", {"R99"}, (18, 99), "All", "unrelated oncology study"),
    ]
}

PATIENT = PatientProfile(
    patient_id="P1",
    age=AgeSet.single(52),
    gender=Gender.parse("Female"),
    diagnosis_expanded=frozenset({"R04", "R03"}),
    note_text="52-year-old woman with long-standing allergic asthma",
)


def show(title, ranked):
    print(title)
    for e in ranked:
        print(f"  rank {e.rank:2d}  {e.trial_id}  score {e.score:.3f}  [{e.provenance.value}]")
    print()


def main() -> None:
    index = ConditionIndex(TRIALS.values())
    print(f"patient expanded diagnosis: {sorted(PATIENT.diagnosis_expanded)}\n")

    full = retrieve_by_condition(PATIENT, index)
    show("== Condition-overlap ranking (every trial with ov > 0) ==", full)

    shortlist = retrieve_by_condition(PATIENT, index, k=4)
    filtered = demographic_filter(shortlist, PATIENT, TRIALS)
    dropped = {e.trial_id for e in shortlist} - {e.trial_id for e in filtered}
    show(f"== Top 4 after the demographic filter (dropped {sorted(dropped)}) ==", filtered)

    refilled = backfill_to_k(filtered, full, PATIENT, TRIALS, k=4)
    show("== Backfilled to K = 4 from the corpus-wide pool ==", refilled)

    text_index = TextIndex({tid: t.text for tid, t in TRIALS.items()})
    show("== BM25 text baseline over the same corpus ==", bm25_retrieve(PATIENT, text_index, k=4))


if __name__ == "__main__":
    main()
