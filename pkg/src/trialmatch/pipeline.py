"""End-to-end orchestration.

Stages: ingest the corpus and topics into a fingerprinted store, normalize
and expand patient diagnoses against the ontology, retrieve by condition
overlap, apply the demographic filter, backfill to the re-rank cut, label
the shortlist, gate, re-score, and evaluate. Every run writes its run
files, metric report, and effective config under one run directory; the
store and the label cache make reruns pure replays with no labeler calls.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from .evaluation import (
    EvalConfig,
    MetricReport,
    Run,
    RunEntry,
    ZeroVarianceError,
    evaluate_run,
    parse_qrels,
    pearson_r,
    write_run,
)
from .labeling import (
    BaseLabeler,
    ExternalServiceLabeler,
    LabelCache,
    NoisyLabeler,
    RuleMock,
    categorize_trial,
    extract_patient,
    extract_trial,
    judge_trial,
    load_template,
)
from .labeling.templates import PATIENT_EXTRACTION
from .model import (
    AgeSet,
    AttributeCategory,
    Criterion,
    Gender,
    PatientProfile,
    Polarity,
    TrialRecord,
)
from .normalize import MinHashIndex, build_index, normalize_terms
from .ontology import OntologyGraph, concept_depth, expand_concepts, load_ontology
from .rerank import (
    GateMode,
    RelevanceSignal,
    ScoringMethod,
    parse_method,
    rerank,
)
from .retrieval import (
    ConditionIndex,
    Provenance,
    RankedList,
    backfill_to_k,
    demographic_filter,
    retrieve_by_condition,
)

log = logging.getLogger("trialmatch")

# Condition-sourced entries get this score band in run files so that file
# scores stay non-increasing even when a backfilled trial outscores a
# condition-sourced one under the re-ranking method. The band changes no
# ordering; it only encodes the provenance precedence the ranking already
# has.
PROVENANCE_SCORE_BAND = 1e9


class PipelineStageError(Exception):
    """A stage failed; carries the stage name and the topic if per-topic."""

    def __init__(self, stage: str, message: str, topic: str | None = None):
        self.stage = stage
        self.topic = topic
        where = f"{stage}[{topic}]" if topic else stage
        super().__init__(f"{where}: {message}")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    """Flat key-value run configuration.

    Loadable from a TOML file of the same keys; string overrides from the
    command line are coerced to each field's type.
    """

    ontology: str = ""
    corpus: str = ""
    topics: str = ""
    qrels: str = ""
    output_dir: str = "runs"
    store_dir: str = ""
    cache_path: str = ""
    run_name: str = ""
    run_tag: str = "trialmatch"
    labeler: str = "rule-mock"
    service_url: str = ""
    service_model: str = ""
    api_key_env: str = "TRIALMATCH_API_KEY"
    noise_rate: float = 0.0
    n_level: int = 1
    first_stage_k: int = 500
    rerank_k: int = 25
    method: str = "hybrid"
    gate: str = "strict"
    rel_threshold: int = 2
    multi_category: str = "per-bucket"
    approx_normalization: bool = False
    lsh_num_perm: int = 128
    lsh_bands: int = 32
    lsh_rows: int = 4
    lsh_seed: int = 13
    seed: int = 0
    workers: int = 1
    exponential_gain: bool = False

    def __post_init__(self) -> None:
        if self.n_level < 0:
            raise ValueError("n_level must be >= 0")
        if self.first_stage_k < 1 or self.rerank_k < 1:
            raise ValueError("first_stage_k and rerank_k must be >= 1")
        if self.gate not in ("strict", "lenient"):
            raise ValueError(f"gate must be strict or lenient, got {self.gate!r}")
        if self.rel_threshold not in (1, 2):
            raise ValueError("rel_threshold must be 1 or 2")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must be in [0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def resolved_store_dir(self) -> Path:
        return Path(self.store_dir) if self.store_dir else Path(self.output_dir) / "store"

    @property
    def resolved_cache_path(self) -> Path:
        return Path(self.cache_path) if self.cache_path else self.resolved_store_dir / "labels.jsonl"


def _coerce(value: str, kind: type):
    if kind is bool:
        lowered = value.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    return value


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, str] | None = None,
) -> PipelineConfig:
    """Build a config from an optional TOML file plus string overrides."""
    data: dict = {}
    if path:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    defaults = PipelineConfig()
    types = {f.name: type(getattr(defaults, f.name)) for f in fields(PipelineConfig)}
    for key in data:
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
    for key, value in (overrides or {}).items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        data[key] = _coerce(value, types[key]) if isinstance(value, str) else value
    return PipelineConfig(**data)


def write_config(cfg: PipelineConfig, path: str | Path) -> None:
    """Write the effective config as flat TOML."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, (int, float)):
            rendered = repr(value)
        else:
            rendered = json.dumps(str(value))
        lines.append(f"{f.name} = {rendered}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Record serialization and the store
# ---------------------------------------------------------------------------


def _trial_to_dict(t: TrialRecord) -> dict:
    return {
        "trial_id": t.trial_id,
        "age": [list(iv) for iv in t.age.intervals],
        "gender": t.gender.token,
        "condition_raw": sorted(t.condition_raw),
        "condition_norm": sorted(t.condition_norm),
        "criteria": [
            {
                "text": c.text,
                "polarity": c.polarity.value,
                "categories": sorted(cat.value for cat in c.categories),
            }
            for c in t.criteria
        ],
        "text": t.text,
    }


def _trial_from_dict(d: dict) -> TrialRecord:
    return TrialRecord(
        trial_id=d["trial_id"],
        age=AgeSet(tuple((int(lo), int(hi)) for lo, hi in d["age"])),
        gender=Gender(d["gender"]),
        condition_raw=frozenset(d["condition_raw"]),
        condition_norm=frozenset(d["condition_norm"]),
        criteria=tuple(
            Criterion(
                c["text"],
                Polarity(c["polarity"]),
                frozenset(AttributeCategory(v) for v in c["categories"]),
            )
            for c in d["criteria"]
        ),
        text=d["text"],
    )


def _patient_to_dict(p: PatientProfile) -> dict:
    return {
        "patient_id": p.patient_id,
        "age": [list(iv) for iv in p.age.intervals],
        "gender": p.gender.token,
        "treatment": sorted(p.treatment),
        "demographics": sorted(p.demographics),
        "disease": sorted(p.disease),
        "diagnosis_raw": sorted(p.diagnosis_raw),
        "note_text": p.note_text,
    }


def _patient_from_dict(d: dict) -> PatientProfile:
    return PatientProfile(
        patient_id=d["patient_id"],
        age=AgeSet(tuple((int(lo), int(hi)) for lo, hi in d["age"])),
        gender=Gender(d["gender"]),
        treatment=frozenset(d["treatment"]),
        demographics=frozenset(d["demographics"]),
        disease=frozenset(d["disease"]),
        diagnosis_raw=frozenset(d["diagnosis_raw"]),
        note_text=d["note_text"],
    )


def fingerprint_record(raw: dict) -> str:
    """Content hash of a raw input row, for ingestion idempotency."""
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class CorpusStore:
    """Append-only store of extracted trials and patient profiles.

    Rows are JSONL records of (id, input fingerprint, provenance, payload);
    the last row per id wins on load, so interrupted ingestion resumes
    cleanly and in-place updates are plain appends. Writes are serialized
    by a lock; reads see the in-memory view.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._trials_path = self.root / "trials.jsonl"
        self._patients_path = self.root / "patients.jsonl"
        self._lock = threading.Lock()
        self._trials: dict[str, tuple[str, TrialRecord]] = {}
        self._patients: dict[str, tuple[str, PatientProfile]] = {}
        self._load(self._trials_path, self._trials, _trial_from_dict)
        self._load(self._patients_path, self._patients, _patient_from_dict)

    @staticmethod
    def _load(path: Path, into: dict, decode) -> None:
        if not path.exists():
            return
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    into[row["id"]] = (row["fingerprint"], decode(row["record"]))
                except (ValueError, KeyError):
                    # A torn final line from an interrupted write is
                    # rebuilt on the next put; anything readable after it
                    # would be suspect, so stop here.
                    log.warning("%s:%d: unreadable store row, ignoring rest", path, lineno)
                    return

    def _append(self, path: Path, row: dict) -> None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
            fh.flush()

    def trial_fingerprint(self, trial_id: str) -> str | None:
        entry = self._trials.get(trial_id)
        return entry[0] if entry else None

    def patient_fingerprint(self, patient_id: str) -> str | None:
        entry = self._patients.get(patient_id)
        return entry[0] if entry else None

    def put_trial(self, fingerprint: str, trial: TrialRecord, provenance: dict | None = None) -> None:
        with self._lock:
            self._append(
                self._trials_path,
                {
                    "id": trial.trial_id,
                    "fingerprint": fingerprint,
                    "provenance": provenance or {},
                    "record": _trial_to_dict(trial),
                },
            )
            self._trials[trial.trial_id] = (fingerprint, trial)

    def update_trial(self, trial: TrialRecord) -> None:
        """Replace a stored trial's payload, keeping its fingerprint."""
        fingerprint = self.trial_fingerprint(trial.trial_id) or ""
        self.put_trial(fingerprint, trial, {"updated": True})

    def put_patient(self, fingerprint: str, profile: PatientProfile, provenance: dict | None = None) -> None:
        with self._lock:
            self._append(
                self._patients_path,
                {
                    "id": profile.patient_id,
                    "fingerprint": fingerprint,
                    "provenance": provenance or {},
                    "record": _patient_to_dict(profile),
                },
            )
            self._patients[profile.patient_id] = (fingerprint, profile)

    def get_trial(self, trial_id: str) -> TrialRecord | None:
        entry = self._trials.get(trial_id)
        return entry[1] if entry else None

    def get_patient(self, patient_id: str) -> PatientProfile | None:
        entry = self._patients.get(patient_id)
        return entry[1] if entry else None

    def trials(self) -> dict[str, TrialRecord]:
        return {tid: rec for tid, (_, rec) in self._trials.items()}

    def patients(self) -> dict[str, PatientProfile]:
        return {pid: rec for pid, (_, rec) in self._patients.items()}


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def build_labeler(cfg: PipelineConfig) -> BaseLabeler:
    if cfg.labeler == "rule-mock":
        inner: BaseLabeler = RuleMock()
    elif cfg.labeler == "service":
        if not cfg.service_url or not cfg.service_model:
            raise ValueError("service labeler needs service_url and service_model")
        inner = ExternalServiceLabeler(cfg.service_url, cfg.service_model, cfg.api_key_env)
    else:
        raise ValueError(f"unknown labeler {cfg.labeler!r}")
    if cfg.noise_rate > 0:
        return NoisyLabeler(inner, cfg.noise_rate, cfg.seed)
    return inner


def ingest_corpus(path: str | Path, labeler: BaseLabeler | None, store: CorpusStore) -> int:
    """Stream raw trial rows into the store; returns how many were new.

    Rows whose fingerprint is already stored are skipped, so re-running
    after an interruption is safe. Malformed rows are logged and skipped,
    never aborting the stream.
    """
    new = 0
    failures = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                trial_id = str(raw["id"])
            except (ValueError, KeyError) as exc:
                log.warning("%s:%d: unreadable corpus row (%s), skipped", path, lineno, exc)
                failures += 1
                continue
            fingerprint = fingerprint_record(raw)
            if store.trial_fingerprint(trial_id) == fingerprint:
                continue
            try:
                trial = extract_trial(raw)
            except Exception as exc:
                log.warning("%s:%d: trial %s rejected (%s), skipped", path, lineno, trial_id, exc)
                failures += 1
                continue
            store.put_trial(
                fingerprint, trial, {"labeler": labeler.name if labeler else None}
            )
            new += 1
    if failures:
        log.warning("ingestion skipped %d unusable rows from %s", failures, path)
    return new


def extract_topics(path: str | Path, labeler: BaseLabeler, store: CorpusStore) -> int:
    """Extract patient profiles for new topic rows; returns how many were new.

    The fingerprint covers the raw row, the extraction template, and the
    labeler, so a warm store answers repeat runs without labeler calls.
    """
    template_hash = load_template(PATIENT_EXTRACTION).sha256
    new = 0
    failures = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                patient_id = str(raw["id"])
                note = str(raw["note"])
            except (ValueError, KeyError) as exc:
                log.warning("%s:%d: unreadable topic row (%s), skipped", path, lineno, exc)
                failures += 1
                continue
            fingerprint = fingerprint_record(
                {"row": raw, "template": template_hash, "labeler": labeler.name}
            )
            if store.patient_fingerprint(patient_id) == fingerprint:
                continue
            try:
                profile = extract_patient(patient_id, note, labeler)
            except Exception as exc:
                log.warning("%s:%d: topic %s rejected (%s), skipped", path, lineno, patient_id, exc)
                failures += 1
                continue
            store.put_patient(
                fingerprint, profile,
                {"labeler": labeler.name, "template": template_hash},
            )
            new += 1
    if failures:
        log.warning("topic extraction skipped %d unusable rows from %s", failures, path)
    return new


def _topic_ids(path: str | Path) -> list[str]:
    ids = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                try:
                    ids.append(str(json.loads(line)["id"]))
                except (ValueError, KeyError):
                    continue
    return sorted(set(ids))


# ---------------------------------------------------------------------------
# Shared run context
# ---------------------------------------------------------------------------


class _Categorizer:
    """Categorizes trial criteria once, persisting the result to the store."""

    def __init__(self, store: CorpusStore, labeler: BaseLabeler):
        self._store = store
        self._labeler = labeler
        self._lock = threading.Lock()
        self._done: dict[str, TrialRecord] = {}

    def categorized(self, trial: TrialRecord) -> TrialRecord:
        if all(c.categories for c in trial.criteria):
            return trial
        with self._lock:
            got = self._done.get(trial.trial_id)
            if got is None:
                got = categorize_trial(trial, self._labeler)
                self._store.update_trial(got)
                self._done[trial.trial_id] = got
            return got


class PipelineContext:
    """Loaded ontology, stores, normalized trials, and patient profiles."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        if not cfg.ontology:
            raise PipelineStageError("setup", "config sets no ontology path")
        self.ontology: OntologyGraph = load_ontology(cfg.ontology)
        self.store = CorpusStore(cfg.resolved_store_dir)
        self.labeler = build_labeler(cfg)
        self.cache = LabelCache(cfg.resolved_cache_path)
        if cfg.corpus:
            ingest_corpus(cfg.corpus, self.labeler, self.store)
        if cfg.topics:
            extract_topics(cfg.topics, self.labeler, self.store)

        self._index: MinHashIndex | None = None
        self._mode = "exact"
        if cfg.approx_normalization:
            self._mode = "approx"
            self._index = build_index(
                self.ontology,
                num_perm=cfg.lsh_num_perm,
                num_bands=cfg.lsh_bands,
                rows_per_band=cfg.lsh_rows,
                seed=cfg.lsh_seed,
            )

        trials = self.store.trials()
        if not trials:
            raise PipelineStageError("ingest", "store holds no trials")
        phrases = sorted({p for t in trials.values() for p in t.condition_raw})
        mapping = normalize_terms(phrases, self.ontology, self._mode, self._index)
        self.trials: dict[str, TrialRecord] = {
            tid: dataclasses.replace(
                t,
                condition_norm=frozenset(
                    mapping[p] for p in t.condition_raw if p in mapping
                ),
            )
            for tid, t in trials.items()
        }
        self.condition_index = ConditionIndex(self.trials.values())
        self.categorizer = _Categorizer(self.store, self.labeler)

        if cfg.topics:
            wanted = _topic_ids(cfg.topics)
        else:
            wanted = sorted(self.store.patients())
        self.topic_ids: list[str] = []
        self._profiles: dict[str, PatientProfile] = {}
        for pid in wanted:
            profile = self.store.get_patient(pid)
            if profile is None:
                log.warning("topic %s not in store, skipped", pid)
                continue
            self.topic_ids.append(pid)
            self._profiles[pid] = profile
        if not self.topic_ids:
            raise PipelineStageError("extract-topics", "store holds no topics")
        self._norm_cache: dict[str, frozenset[str]] = {}

    def profile_at(self, patient_id: str, n_level: int) -> PatientProfile:
        """The stored profile with diagnoses normalized and expanded."""
        profile = self._profiles[patient_id]
        norm = self._norm_cache.get(patient_id)
        if norm is None:
            mapping = normalize_terms(
                profile.diagnosis_raw, self.ontology, self._mode, self._index
            )
            norm = frozenset(mapping.values())
            self._norm_cache[patient_id] = norm
        return dataclasses.replace(
            profile,
            diagnosis_norm=norm,
            diagnosis_expanded=expand_concepts(self.ontology, norm, n_level),
        )


# ---------------------------------------------------------------------------
# Pipeline runs
# ---------------------------------------------------------------------------


@dataclass
class PipelineResult:
    run_dir: Path
    first_stage: Run
    reranked: Run
    first_stage_report: MetricReport | None
    report: MetricReport | None
    first_stage_path: Path
    reranked_path: Path


def _run_from_rankings(rankings: Mapping[str, RankedList], tag: str) -> Run:
    by_topic = {}
    for topic in sorted(rankings):
        entries = []
        for e in rankings[topic]:
            band = PROVENANCE_SCORE_BAND if e.provenance is Provenance.CONDITION else 0.0
            entries.append(RunEntry(e.trial_id, e.rank, e.score + band, tag))
        by_topic[topic] = tuple(entries)
    return Run(by_topic)


def _retrieve_topic(
    ctx: PipelineContext, profile: PatientProfile
) -> tuple[RankedList, RankedList]:
    """First stage for one topic: (full ov ranking, DF'd backfilled shortlist)."""
    cfg = ctx.cfg
    full = retrieve_by_condition(profile, ctx.condition_index)
    candidates = full.truncated(cfg.first_stage_k)
    filtered = demographic_filter(candidates, profile, ctx.trials)
    shortlist = backfill_to_k(filtered, full, profile, ctx.trials, cfg.rerank_k)
    return full, shortlist


def _rerank_topic(
    ctx: PipelineContext,
    topic_id: str,
    method: ScoringMethod,
    gate_mode: GateMode,
) -> tuple[RankedList, RankedList]:
    cfg = ctx.cfg
    try:
        profile = ctx.profile_at(topic_id, cfg.n_level)
    except Exception as exc:
        raise PipelineStageError("normalize", str(exc), topic_id) from exc
    try:
        _, shortlist = _retrieve_topic(ctx, profile)
    except Exception as exc:
        raise PipelineStageError("retrieve", str(exc), topic_id) from exc
    judgments = {}
    signals = {}
    try:
        for entry in shortlist:
            trial = ctx.categorizer.categorized(ctx.trials[entry.trial_id])
            judgments[entry.trial_id] = judge_trial(
                profile, trial, ctx.labeler, ctx.cache
            )
            signals[entry.trial_id] = RelevanceSignal.from_pair(profile, trial)
    except Exception as exc:
        raise PipelineStageError("label", str(exc), topic_id) from exc
    try:
        reranked = rerank(
            shortlist, judgments, signals, method, gate_mode, cfg.multi_category
        )
    except Exception as exc:
        raise PipelineStageError("rerank", str(exc), topic_id) from exc
    return shortlist, reranked


def _safe_label(label: str) -> str:
    return label.replace(":", "-")


def run_pipeline(cfg: PipelineConfig, run_dir: str | Path | None = None) -> PipelineResult:
    """Execute the full pipeline and write artifacts under the run directory.

    Emits two run files: the demographically filtered first-stage overlap
    ranking and the gated re-ranking, both evaluated against the qrels when
    one is configured. A topic failure is raised as PipelineStageError
    after the completed topics' partial run files are flushed.
    """
    method = parse_method(cfg.method)
    gate_mode = GateMode(cfg.gate)
    ctx = PipelineContext(cfg)

    if run_dir is None:
        stamp = cfg.run_name or datetime.now(timezone.utc).strftime("run-%Y%m%d-%H%M%S")
        run_dir = Path(cfg.output_dir) / stamp
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config(cfg, run_dir / "config.toml")

    outcomes: dict[str, tuple[RankedList, RankedList] | PipelineStageError] = {}

    def work(topic_id: str) -> None:
        try:
            outcomes[topic_id] = _rerank_topic(ctx, topic_id, method, gate_mode)
        except PipelineStageError as exc:
            outcomes[topic_id] = exc

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(work, ctx.topic_ids))
    else:
        for topic_id in ctx.topic_ids:
            work(topic_id)

    done = {t: r for t, r in outcomes.items() if not isinstance(r, PipelineStageError)}
    first_stage = _run_from_rankings(
        {t: r[0] for t, r in done.items()}, f"{cfg.run_tag}-ov"
    )
    reranked = _run_from_rankings(
        {t: r[1] for t, r in done.items()}, f"{cfg.run_tag}-{method.label}"
    )
    first_stage_path = run_dir / "run_ov.txt"
    reranked_path = run_dir / f"run_{_safe_label(method.label)}.txt"
    write_run(first_stage, first_stage_path)
    write_run(reranked, reranked_path)

    for topic_id in ctx.topic_ids:
        outcome = outcomes[topic_id]
        if isinstance(outcome, PipelineStageError):
            raise outcome

    first_stage_report = report = None
    if cfg.qrels:
        qrels = parse_qrels(cfg.qrels)
        eval_cfg = EvalConfig(
            rel_threshold=cfg.rel_threshold, exponential_gain=cfg.exponential_gain
        )
        first_stage_report = evaluate_run(first_stage, qrels, eval_cfg)
        report = evaluate_run(reranked, qrels, eval_cfg)
        with open(run_dir / "metrics.json", "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "ov": first_stage_report.as_dict(),
                    _safe_label(method.label): report.as_dict(),
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")

    return PipelineResult(
        run_dir=run_dir,
        first_stage=first_stage,
        reranked=reranked,
        first_stage_report=first_stage_report,
        report=report,
        first_stage_path=first_stage_path,
        reranked_path=reranked_path,
    )


def run_retrieval(cfg: PipelineConfig, run_dir: str | Path | None = None) -> PipelineResult:
    """First stage only: retrieve, filter, backfill, and write the ov run."""
    ctx = PipelineContext(cfg)
    if run_dir is None:
        stamp = cfg.run_name or datetime.now(timezone.utc).strftime("run-%Y%m%d-%H%M%S")
        run_dir = Path(cfg.output_dir) / stamp
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config(cfg, run_dir / "config.toml")

    rankings: dict[str, RankedList] = {}
    for topic_id in ctx.topic_ids:
        try:
            profile = ctx.profile_at(topic_id, cfg.n_level)
        except Exception as exc:
            raise PipelineStageError("normalize", str(exc), topic_id) from exc
        try:
            _, shortlist = _retrieve_topic(ctx, profile)
        except Exception as exc:
            raise PipelineStageError("retrieve", str(exc), topic_id) from exc
        rankings[topic_id] = shortlist

    first_stage = _run_from_rankings(rankings, f"{cfg.run_tag}-ov")
    first_stage_path = run_dir / "run_ov.txt"
    write_run(first_stage, first_stage_path)
    report = None
    if cfg.qrels:
        qrels = parse_qrels(cfg.qrels)
        eval_cfg = EvalConfig(
            rel_threshold=cfg.rel_threshold, exponential_gain=cfg.exponential_gain
        )
        report = evaluate_run(first_stage, qrels, eval_cfg)
    return PipelineResult(
        run_dir=run_dir,
        first_stage=first_stage,
        reranked=first_stage,
        first_stage_report=report,
        report=report,
        first_stage_path=first_stage_path,
        reranked_path=first_stage_path,
    )


# ---------------------------------------------------------------------------
# Experiment sweeps
# ---------------------------------------------------------------------------


def _retrieval_stats(
    retrieved: Sequence[str], grades: Mapping[str, int], rel_threshold: int
) -> tuple[float | None, float | None]:
    """(recall, precision) of a retrieved set, None where undefined."""
    relevant = {tid for tid, g in grades.items() if g >= rel_threshold}
    hits = sum(1 for tid in retrieved if tid in relevant)
    recall = hits / len(relevant) if relevant else None
    precision = hits / len(retrieved) if retrieved else None
    return recall, precision


def sweep_n_level(
    cfg: PipelineConfig,
    levels: Sequence[int],
    out_path: str | Path | None = None,
) -> list[tuple[int, float, float, float]]:
    """Retrieval-only sweep over expansion levels.

    For each level, every topic's full condition-overlap retrieval (no
    demographic filter, no cut) is scored against the qrels; rows are
    (level, macro recall, macro precision, mean trials per patient).
    """
    if not levels:
        raise ValueError("levels must be non-empty")
    if not cfg.qrels:
        raise ValueError("sweep needs a qrels path in the config")
    ctx = PipelineContext(cfg)
    qrels = parse_qrels(cfg.qrels)
    rows: list[tuple[int, float, float, float]] = []
    for level in levels:
        recalls: list[float] = []
        precisions: list[float] = []
        sizes: list[int] = []
        for topic_id in ctx.topic_ids:
            profile = ctx.profile_at(topic_id, level)
            retrieved = retrieve_by_condition(profile, ctx.condition_index).trial_ids()
            recall, precision = _retrieval_stats(
                retrieved, qrels.grades(topic_id), cfg.rel_threshold
            )
            if recall is not None:
                recalls.append(recall)
            if precision is not None:
                precisions.append(precision)
            sizes.append(len(retrieved))
        rows.append(
            (
                level,
                sum(recalls) / len(recalls) if recalls else 0.0,
                sum(precisions) / len(precisions) if precisions else 0.0,
                sum(sizes) / len(sizes) if sizes else 0.0,
            )
        )
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("level\trecall\tprecision\tmean_trials_per_patient\n")
            for level, recall, precision, mean_size in rows:
                fh.write(f"{level}\t{recall!r}\t{precision!r}\t{mean_size!r}\n")
    return rows


@dataclass(frozen=True)
class TopicRetrieval:
    """One topic's retrieval outcome, the input row for depth analysis."""

    topic_id: str
    diagnosis: frozenset[str]
    recall: float
    precision: float


def depth_analysis(
    results: Sequence[TopicRetrieval],
    ontology: OntologyGraph,
    out_path: str | Path | None = None,
) -> tuple[float, float, list[tuple[str, float, float, float]]]:
    """Correlate retrieval quality with diagnosis depth in the ontology.

    Depth per topic is the mean shortest root distance over its diagnosis
    concepts. Returns (pearson of recall vs depth, pearson of precision vs
    depth, scatter rows); fewer than two topics or constant columns raise
    ZeroVarianceError.
    """
    rows: list[tuple[str, float, float, float]] = []
    for r in results:
        if not r.diagnosis:
            continue
        depth = sum(concept_depth(ontology, cid) for cid in r.diagnosis) / len(r.diagnosis)
        rows.append((r.topic_id, depth, r.recall, r.precision))
    if len(rows) < 2:
        raise ZeroVarianceError("depth correlation needs at least two topics")
    depths = [row[1] for row in rows]
    recalls = [row[2] for row in rows]
    precisions = [row[3] for row in rows]
    recall_r = pearson_r(depths, recalls)
    precision_r = pearson_r(depths, precisions)
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("topic\tdepth\trecall\tprecision\n")
            for topic_id, depth, recall, precision in rows:
                fh.write(f"{topic_id}\t{depth!r}\t{recall!r}\t{precision!r}\n")
    return recall_r, precision_r, rows


def run_depth_analysis(
    cfg: PipelineConfig, out_path: str | Path | None = None
) -> tuple[float, float, list[tuple[str, float, float, float]]]:
    """Retrieval pass at the configured level, then depth correlation."""
    if not cfg.qrels:
        raise ValueError("depth analysis needs a qrels path in the config")
    ctx = PipelineContext(cfg)
    qrels = parse_qrels(cfg.qrels)
    results = []
    for topic_id in ctx.topic_ids:
        profile = ctx.profile_at(topic_id, cfg.n_level)
        retrieved = retrieve_by_condition(profile, ctx.condition_index).trial_ids()
        recall, precision = _retrieval_stats(
            retrieved, qrels.grades(topic_id), cfg.rel_threshold
        )
        if recall is None or precision is None:
            continue
        results.append(
            TopicRetrieval(topic_id, profile.diagnosis_norm, recall, precision)
        )
    return depth_analysis(results, ctx.ontology, out_path)
