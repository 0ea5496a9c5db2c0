"""Ontology expansion and phrase-to-concept normalization.

A small respiratory is-a hierarchy is built inline, then a few free-text
diagnosis phrases are linked to their best concepts, first by exhaustive
Jaccard scan and then through the MinHash LSH shortcut.
"""

from trialmatch.normalize import best_match, build_index, normalize_terms
from trialmatch.ontology import (
    Concept,
    OntologyGraph,
    concept_depth,
    expand_concepts,
    expand_neighborhood,
)

CONCEPTS = [
    Concept("R01", "respiratory disease"),
    Concept("R02", "obstructive airway disease", parents=frozenset({"R01"})),
    Concept("R03", "asthma", synonyms=frozenset({"bronchial asthma"}), parents=frozenset({"R02"})),
    Concept("R04", "allergic asthma", parents=frozenset({"R03"})),
    Concept("R05", "copd", synonyms=frozenset({"chronic obstructive pulmonary disease"}), parents=frozenset({"R02"})),
    Concept("R06", "interstitial lung disease", parents=frozenset({"R01"})),
]


def main() -> None:
    graph = OntologyGraph(CONCEPTS)
    print("== Hierarchy ==")
    for cid in sorted(graph.concepts):
        c = graph.concepts[cid]
        print(f"{cid}  depth {concept_depth(graph, cid)}  {c.label!r}  parents {sorted(c.parents)}")
    print()

    print("== Neighborhood expansion from 'allergic asthma' ==")
    for n in range(4):
        reached = expand_neighborhood(graph, "R04", n)
        print(f"n = {n}: {sorted(reached)}")
    print("multi-concept start expands each seed and unions the results:")
    print(f"{{R04, R06}} at 1: {sorted(expand_concepts(graph, {'R04', 'R06'}, 1))}")
    print()

    print("== Normalization, exact scan ==")
    phrases = [
        "diagnosed with bronchial asthma",
        "severe allergic asthma flare",
        "chronic obstructive pulmonary disease",
    ]
    for phrase in phrases:
        match = best_match(phrase, graph, mode="exact")
        label = graph.concepts[match.concept_id].label
        print(f"{phrase!r:45} -> {match.concept_id} ({label}), sim {match.score:.2f}")
    print()

    print("== Normalization through the LSH index ==")
    index = build_index(graph)
    mapping = normalize_terms(phrases, graph, mode="approx", index=index)
    for phrase, cid in mapping.items():
        print(f"{phrase!r:45} -> {cid}")
    print("(the approx path falls back to the exact scan when no bucket collides)")


if __name__ == "__main__":
    main()
