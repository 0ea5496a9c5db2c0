"""TREC-style evaluation: qrels and run files, ranking metrics, agreement stats.

Graded relevance uses 0 (not relevant), 1 (excluded), 2 (eligible). Binary
metrics (precision, recall, MRR) treat grade >= rel_threshold as relevant,
with threshold 2 by default. NDCG uses graded gains, linear by default.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

VALID_GRADES = (0, 1, 2)


class EvaluationError(Exception):
    pass


class ZeroVarianceError(EvaluationError):
    """Pearson correlation is undefined when either input is constant."""


class UnknownTopicWarning(UserWarning):
    """A run contains a topic absent from the qrels; it is skipped."""


# ---------------------------------------------------------------------------
# Qrels and run files
# ---------------------------------------------------------------------------


@dataclass
class Qrels:
    """Graded judgments keyed by topic, then trial id."""

    by_topic: dict[str, dict[str, int]] = field(default_factory=dict)

    def add(self, topic: str, trial_id: str, grade: int) -> None:
        if grade not in VALID_GRADES:
            raise ValueError(f"grade {grade} for {topic}/{trial_id} not in {VALID_GRADES}")
        grades = self.by_topic.setdefault(topic, {})
        if trial_id in grades:
            raise ValueError(f"duplicate qrels pair {topic}/{trial_id}")
        grades[trial_id] = grade

    def topics(self) -> list[str]:
        return sorted(self.by_topic)

    def grades(self, topic: str) -> Mapping[str, int]:
        return self.by_topic.get(topic, {})

    def relevant_count(self, topic: str, rel_threshold: int = 2) -> int:
        return sum(1 for g in self.grades(topic).values() if g >= rel_threshold)


class RunEntry(NamedTuple):
    trial_id: str
    rank: int
    score: float
    tag: str


@dataclass
class Run:
    """Per-topic ordered rankings in TREC run form."""

    by_topic: dict[str, tuple[RunEntry, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for topic, entries in self.by_topic.items():
            last = math.inf
            for i, e in enumerate(entries):
                if e.rank != i + 1:
                    raise ValueError(f"topic {topic}: rank {e.rank} at position {i}")
                if e.score > last:
                    raise ValueError(
                        f"topic {topic}: score increases at rank {e.rank}"
                    )
                last = e.score

    def topics(self) -> list[str]:
        return sorted(self.by_topic)

    def ranking(self, topic: str) -> list[str]:
        return [e.trial_id for e in self.by_topic.get(topic, ())]


def parse_qrels(path: str) -> Qrels:
    """Read whitespace-separated "topic 0 trialid grade" lines."""
    qrels = Qrels()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            topic, _, trial_id, grade = parts
            qrels.add(topic, trial_id, int(grade))
    return qrels


def write_qrels(qrels: Qrels, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for topic in qrels.topics():
            for trial_id, grade in sorted(qrels.by_topic[topic].items()):
                fh.write(f"{topic} 0 {trial_id} {grade}\n")


def parse_run(path: str) -> Run:
    """Read whitespace-separated "topic Q0 trialid rank score tag" lines."""
    collected: dict[str, list[RunEntry]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            topic, _, trial_id, rank, score, tag = parts
            collected.setdefault(topic, []).append(
                RunEntry(trial_id, int(rank), float(score), tag)
            )
    by_topic = {}
    for topic, entries in collected.items():
        entries.sort(key=lambda e: e.rank)
        by_topic[topic] = tuple(entries)
    return Run(by_topic)


def write_run(run: Run, path: str) -> None:
    """Write a run file; float scores use repr() so a round-trip is exact."""
    with open(path, "w", encoding="utf-8") as fh:
        for topic in run.topics():
            for e in run.by_topic[topic]:
                fh.write(f"{topic} Q0 {e.trial_id} {e.rank} {e.score!r} {e.tag}\n")


# ---------------------------------------------------------------------------
# Ranking metrics
# ---------------------------------------------------------------------------


def _gain(grade: int, exponential: bool) -> float:
    return float(2**grade - 1) if exponential else float(grade)


def ndcg_at_k(
    ranking: Sequence[str],
    qrels: Mapping[str, int],
    k: int,
    exponential: bool = False,
) -> float:
    """Normalized discounted cumulative gain over the first k positions.

    Gain is the grade itself (or 2^grade - 1 when exponential), discount is
    1/log2(rank + 1). Topics with no positive grades score 0.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    dcg = 0.0
    for i, trial_id in enumerate(ranking[:k], start=1):
        dcg += _gain(qrels.get(trial_id, 0), exponential) / math.log2(i + 1)
    ideal = sorted(qrels.values(), reverse=True)[:k]
    idcg = sum(
        _gain(g, exponential) / math.log2(i + 1)
        for i, g in enumerate(ideal, start=1)
    )
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def precision_at_k(
    ranking: Sequence[str],
    qrels: Mapping[str, int],
    k: int,
    rel_threshold: int = 2,
) -> float:
    """Fraction of the first k slots holding a relevant trial.

    Rankings shorter than k leave the missing slots non-relevant, so the
    denominator is always k.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    hits = sum(
        1 for trial_id in ranking[:k] if qrels.get(trial_id, 0) >= rel_threshold
    )
    return hits / k


def recall_at_n(
    ranking: Sequence[str],
    qrels: Mapping[str, int],
    n: int,
    rel_threshold: int = 2,
) -> float | None:
    """Fraction of the topic's relevant trials found in the first n slots.

    Returns None when the topic has no relevant trials at the threshold;
    such topics are excluded from macro averages.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    total = sum(1 for g in qrels.values() if g >= rel_threshold)
    if total == 0:
        return None
    hits = sum(
        1 for trial_id in ranking[:n] if qrels.get(trial_id, 0) >= rel_threshold
    )
    return hits / total


def mrr(
    ranking: Sequence[str],
    qrels: Mapping[str, int],
    rel_threshold: int = 2,
) -> float:
    """Reciprocal rank of the first relevant trial, 0 when none appears."""
    for i, trial_id in enumerate(ranking, start=1):
        if qrels.get(trial_id, 0) >= rel_threshold:
            return 1.0 / i
    return 0.0


# ---------------------------------------------------------------------------
# Classification and agreement statistics
# ---------------------------------------------------------------------------


class ClassificationMetrics(NamedTuple):
    precision: float
    recall: float
    f1: float
    accuracy: float


def classification_metrics(
    pred: Sequence[int], truth: Sequence[int]
) -> ClassificationMetrics:
    """Binary precision/recall/F1/accuracy with 1 as the positive class.

    Undefined ratios (no predicted positives, no actual positives, empty
    input) come back as 0.0.
    """
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(truth)} truths")
    tp = fp = fn = tn = 0
    for p, t in zip(pred, truth):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and t:
            fn += 1
        else:
            tn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total else 0.0
    return ClassificationMetrics(precision, recall, f1, accuracy)


def cohen_kappa(a: Sequence[str], b: Sequence[str]) -> float | None:
    """Chance-corrected agreement between two label streams.

    Returns None when expected agreement is exactly 1 (both raters constant
    on the same label), where the statistic is undefined.
    """
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("empty label streams")
    n = len(a)
    observed = sum(1 for x, y in zip(a, b) if x == y) / n
    labels = set(a) | set(b)
    count_a = {lab: 0 for lab in labels}
    count_b = {lab: 0 for lab in labels}
    for x in a:
        count_a[x] += 1
    for y in b:
        count_b[y] += 1
    expected = sum(count_a[lab] * count_b[lab] for lab in labels) / (n * n)
    if expected == 1.0:
        return None
    return (observed - expected) / (1.0 - expected)


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("need at least 2 points")
    n = len(x)
    mean_x = math.fsum(x) / n
    mean_y = math.fsum(y) / n
    dx = [v - mean_x for v in x]
    dy = [v - mean_y for v in y]
    var_x = math.fsum(d * d for d in dx)
    var_y = math.fsum(d * d for d in dy)
    if var_x == 0.0 or var_y == 0.0:
        raise ZeroVarianceError("correlation is undefined for a constant input")
    cov = math.fsum(a * b for a, b in zip(dx, dy))
    return cov / math.sqrt(var_x * var_y)


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    ndcg_ks: tuple[int, ...] = (10, 25)
    precision_ks: tuple[int, ...] = (10, 25)
    recall_ns: tuple[int, ...] = (10, 25, 500)
    rel_threshold: int = 2
    exponential_gain: bool = False

    def __post_init__(self) -> None:
        if self.rel_threshold not in (1, 2):
            raise ValueError("rel_threshold must be 1 or 2")


@dataclass
class MetricReport:
    """Per-topic metric values plus macro averages.

    Per-topic values may be None where a metric is undefined for the topic
    (recall with zero relevant trials); those topics are skipped in the
    corresponding macro average.
    """

    per_topic: dict[str, dict[str, float | None]]
    macro: dict[str, float]

    def as_dict(self) -> dict:
        return {"macro": dict(self.macro), "per_topic": {
            t: dict(vals) for t, vals in self.per_topic.items()
        }}


def evaluate_ranking(
    ranking: Sequence[str],
    qrels: Mapping[str, int],
    config: EvalConfig = EvalConfig(),
) -> dict[str, float | None]:
    """All configured metrics for one topic's ranking."""
    out: dict[str, float | None] = {}
    for k in config.ndcg_ks:
        out[f"ndcg@{k}"] = ndcg_at_k(ranking, qrels, k, config.exponential_gain)
    for k in config.precision_ks:
        out[f"p@{k}"] = precision_at_k(ranking, qrels, k, config.rel_threshold)
    out["mrr"] = mrr(ranking, qrels, config.rel_threshold)
    for n in config.recall_ns:
        out[f"recall@{n}"] = recall_at_n(ranking, qrels, n, config.rel_threshold)
    return out


def evaluate_run(
    run: Run,
    qrels: Qrels,
    config: EvalConfig = EvalConfig(),
) -> MetricReport:
    """Score every qrels topic and macro-average across them.

    Run topics without qrels raise UnknownTopicWarning and are skipped.
    Qrels topics missing from the run are scored against an empty ranking.
    """
    for topic in run.topics():
        if topic not in qrels.by_topic:
            warnings.warn(
                f"run topic {topic} has no qrels; skipped", UnknownTopicWarning
            )
    per_topic: dict[str, dict[str, float | None]] = {}
    for topic in qrels.topics():
        per_topic[topic] = evaluate_ranking(
            run.ranking(topic), qrels.grades(topic), config
        )
    macro: dict[str, float] = {}
    if per_topic:
        names = next(iter(per_topic.values())).keys()
        for name in names:
            defined = [
                vals[name] for vals in per_topic.values() if vals[name] is not None
            ]
            macro[name] = math.fsum(defined) / len(defined) if defined else 0.0
    return MetricReport(per_topic, macro)


def macro_average(values: Iterable[float | None]) -> float:
    """Mean of the defined entries; 0.0 when none are defined."""
    defined = [v for v in values if v is not None]
    return math.fsum(defined) / len(defined) if defined else 0.0
