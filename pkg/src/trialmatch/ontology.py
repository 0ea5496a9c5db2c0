"""Is-a concept graph: loading, validation, neighborhood expansion, depth.

The ontology is a DAG of concepts connected by is-a edges (child ->
parent). Expansion walks the graph in both directions, so an n-level
neighborhood covers ancestors and descendants within n hops, and sibling
concepts become reachable at n=2 through the shared parent.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .model import ConceptSet


class OntologyError(Exception):
    """Base class for ontology validation and lookup failures."""


class DuplicateIdError(OntologyError):
    pass


class DanglingParentError(OntologyError):
    pass


class CycleDetectedError(OntologyError):
    pass


class UnknownConceptError(OntologyError):
    pass


class EmptyOntologyError(OntologyError):
    pass


@dataclass(frozen=True)
class Concept:
    """One ontology node: an id, a preferred label, synonyms, parent ids."""

    concept_id: str
    label: str
    synonyms: frozenset[str] = frozenset()
    parents: frozenset[str] = frozenset()

    @property
    def surface_forms(self) -> tuple[str, ...]:
        """Preferred label plus synonyms, the strings matching runs against."""
        return (self.label, *sorted(self.synonyms))


class OntologyGraph:
    """Validated concept DAG with child links precomputed for traversal."""

    def __init__(self, concepts: Iterable[Concept]):
        self.concepts: dict[str, Concept] = {}
        for c in concepts:
            if c.concept_id in self.concepts:
                raise DuplicateIdError(f"duplicate concept id: {c.concept_id}")
            self.concepts[c.concept_id] = c
        self._children: dict[str, set[str]] = {cid: set() for cid in self.concepts}
        for c in self.concepts.values():
            for p in c.parents:
                if p not in self.concepts:
                    raise DanglingParentError(
                        f"concept {c.concept_id} lists unknown parent {p}"
                    )
                if p == c.concept_id:
                    raise CycleDetectedError(f"concept {c.concept_id} is its own parent")
                self._children[p].add(c.concept_id)
        self._check_acyclic()
        self.roots: frozenset[str] = frozenset(
            cid for cid, c in self.concepts.items() if not c.parents
        )

    def _check_acyclic(self) -> None:
        # Kahn's algorithm over child -> parent edges; leftovers mean a cycle.
        out_degree = {cid: len(c.parents) for cid, c in self.concepts.items()}
        queue = deque(cid for cid, d in out_degree.items() if d == 0)
        seen = 0
        while queue:
            cid = queue.popleft()
            seen += 1
            for child in self._children[cid]:
                out_degree[child] -= 1
                if out_degree[child] == 0:
                    queue.append(child)
        if seen != len(self.concepts):
            cyclic = sorted(cid for cid, d in out_degree.items() if d > 0)
            raise CycleDetectedError(f"is-a cycle involving: {', '.join(cyclic)}")

    def __len__(self) -> int:
        return len(self.concepts)

    def __contains__(self, concept_id: str) -> bool:
        return concept_id in self.concepts

    def __getitem__(self, concept_id: str) -> Concept:
        try:
            return self.concepts[concept_id]
        except KeyError:
            raise UnknownConceptError(f"unknown concept id: {concept_id}") from None

    def parents_of(self, concept_id: str) -> frozenset[str]:
        return self[concept_id].parents

    def children_of(self, concept_id: str) -> frozenset[str]:
        self[concept_id]
        return frozenset(self._children[concept_id])

    def neighbors_of(self, concept_id: str) -> frozenset[str]:
        """Parents and children together: the undirected adjacency."""
        return self.parents_of(concept_id) | self.children_of(concept_id)


def load_ontology(path: str | Path) -> OntologyGraph:
    """Load a JSONL concept file into a validated graph.

    Each line is an object with "id", "label", optional "synonyms" (list of
    strings), and optional "parents" (list of concept ids). Raises
    DuplicateIdError, DanglingParentError, or CycleDetectedError when the
    file violates the graph contract.
    """
    concepts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise OntologyError(f"{path}:{lineno}: bad JSON ({exc})") from exc
            concepts.append(
                Concept(
                    concept_id=str(row["id"]),
                    label=str(row["label"]),
                    synonyms=frozenset(str(s) for s in row.get("synonyms", [])),
                    parents=frozenset(str(p) for p in row.get("parents", [])),
                )
            )
    return OntologyGraph(concepts)


def dump_ontology(graph: OntologyGraph, path: str | Path) -> None:
    """Write a graph back out in the JSONL concept format."""
    with open(path, "w", encoding="utf-8") as fh:
        for cid in sorted(graph.concepts):
            c = graph.concepts[cid]
            fh.write(
                json.dumps(
                    {
                        "id": c.concept_id,
                        "label": c.label,
                        "synonyms": sorted(c.synonyms),
                        "parents": sorted(c.parents),
                    }
                )
                + "\n"
            )


def expand_neighborhood(graph: OntologyGraph, concept_id: str, n: int) -> ConceptSet:
    """All concepts within n is-a hops of concept_id, in either direction.

    Breadth-first over the undirected adjacency (parents plus children),
    bounded at depth n. The result always contains concept_id itself;
    n=0 returns exactly {concept_id}.
    """
    if n < 0:
        raise ValueError(f"neighborhood level must be >= 0, got {n}")
    graph[concept_id]
    seen = {concept_id}
    frontier = [concept_id]
    for _ in range(n):
        nxt = []
        for cid in frontier:
            for nb in graph.neighbors_of(cid):
                if nb not in seen:
                    seen.add(nb)
                    nxt.append(nb)
        if not nxt:
            break
        frontier = nxt
    return frozenset(seen)


def expand_concepts(graph: OntologyGraph, concept_ids: Iterable[str], n: int) -> ConceptSet:
    """Union of n-level neighborhoods over a set of concepts."""
    out: set[str] = set()
    for cid in concept_ids:
        out |= expand_neighborhood(graph, cid, n)
    return frozenset(out)


def concept_depth(graph: OntologyGraph, concept_id: str) -> int:
    """Length of the shortest parent chain from concept_id to any root."""
    graph[concept_id]
    depth = 0
    frontier = {concept_id}
    seen = set(frontier)
    while frontier:
        if any(not graph[cid].parents for cid in frontier):
            return depth
        nxt = set()
        for cid in frontier:
            nxt |= graph[cid].parents - seen
        seen |= nxt
        frontier = nxt
        depth += 1
    raise OntologyError(f"no root reachable from {concept_id}")


def concept_depths(graph: OntologyGraph, concept_ids: Iterable[str]) -> Mapping[str, int]:
    return {cid: concept_depth(graph, cid) for cid in concept_ids}
