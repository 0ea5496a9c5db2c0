"""Typed attribute sets: interval ages and gender tokens, then concept overlap.

Every comparison the engine makes bottoms out in set operations over these
types, so this walk-through starts with them.
"""

from trialmatch.model import AgeSet, Gender, age_intersect, gender_match
from trialmatch.retrieval import overlap_coefficient


def main() -> None:
    print("== Age sets ==")
    adult = AgeSet.span(18, None)
    trial_window = AgeSet.span(45, 70)
    patient = AgeSet.single(52)
    print(f"adult window        {adult.intervals}")
    print(f"trial window        {trial_window.intervals}")
    print(f"patient             {patient.intervals}")
    both = age_intersect(patient, trial_window)
    print(f"patient ∩ trial     {both.intervals}  (non-empty means age-compatible)")
    print(f"52 in 45..70?       {trial_window.contains(52)}")
    print(f"toddler vs trial    {age_intersect(AgeSet.single(3), trial_window).intervals}")
    print()

    print("== Gender ==")
    woman = Gender.parse("female")
    print(f"'female' parses to  {woman.token}")
    print(f"Female vs All       {gender_match(woman, Gender.parse('All'))}")
    print(f"Female vs Male      {gender_match(woman, Gender.parse('Male'))}")
    print()

    print("== Condition overlap ==")
    patient_concepts = frozenset({"C001", "C002", "C003"})
    trial_concepts = frozenset({"C002", "C003", "C004", "C005"})
    ov = overlap_coefficient(patient_concepts, trial_concepts)
    print(f"patient {sorted(patient_concepts)}")
    print(f"trial   {sorted(trial_concepts)}")
    print(f"overlap = |∩| / min(|A|, |B|) = 2/3 = {ov:.3f}")
    subset = frozenset({"C002"})
    print(f"a one-concept subset saturates at {overlap_coefficient(subset, trial_concepts):.1f}")


if __name__ == "__main__":
    main()
