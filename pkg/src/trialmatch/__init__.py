"""Ontology-guided clinical trial retrieval and re-ranking.

Patients and trials are modeled as typed attribute sets (age intervals,
gender, phrases, ontology concepts). Retrieval ranks trials by condition
overlap between a patient's hop-expanded diagnoses and trial conditions,
filters on demographics, then re-ranks a labeled shortlist behind an
admission gate that checks relevance first, rejects exclusion evidence
in strict mode, and finally requires some eligible evidence.
"""

from .evaluation import (
    ClassificationMetrics,
    EvalConfig,
    MetricReport,
    Qrels,
    Run,
    RunEntry,
    ZeroVarianceError,
    classification_metrics,
    cohen_kappa,
    evaluate_ranking,
    evaluate_run,
    mrr,
    ndcg_at_k,
    parse_qrels,
    parse_run,
    pearson_r,
    precision_at_k,
    recall_at_n,
    write_qrels,
    write_run,
)
from .benchmark import BenchmarkPaths, generate_benchmark
from .labeling import (
    BaseLabeler,
    CriterionJudgment,
    ExternalServiceLabeler,
    LabelCache,
    NoisyLabeler,
    RuleMock,
    TrialJudgments,
    extract_patient,
    extract_trial,
    judge_trial,
)
from .model import (
    AGE_MAX,
    AgeSet,
    AttributeCategory,
    Criterion,
    EligibilityLabel,
    Gender,
    PatientProfile,
    Polarity,
    TrialRecord,
    age_intersect,
    gender_match,
    normalize_phrase,
    phrase_set,
)
from .normalize import (
    MinHashIndex,
    NoCandidateError,
    best_match,
    build_index,
    mean_normalization_similarity,
    normalize_term,
    normalize_terms,
    phrase_similarity,
    shingles,
)
from .ontology import (
    Concept,
    CycleDetectedError,
    DanglingParentError,
    DuplicateIdError,
    EmptyOntologyError,
    OntologyError,
    OntologyGraph,
    UnknownConceptError,
    concept_depth,
    concept_depths,
    dump_ontology,
    expand_concepts,
    expand_neighborhood,
    load_ontology,
)
from .pipeline import (
    CorpusStore,
    PipelineConfig,
    PipelineResult,
    PipelineStageError,
    TopicRetrieval,
    build_labeler,
    depth_analysis,
    extract_topics,
    ingest_corpus,
    load_config,
    run_depth_analysis,
    run_pipeline,
    run_retrieval,
    sweep_n_level,
    write_config,
)
from .rerank import (
    GateDecision,
    GateMode,
    LabelCounts,
    MissingJudgmentsError,
    RejectReason,
    RelevanceSignal,
    ScoringMethod,
    count_labels,
    deontic_gate,
    parse_method,
    rerank,
    score_judgments,
)
from .retrieval import (
    ConditionIndex,
    Provenance,
    RankedEntry,
    RankedList,
    TextIndex,
    backfill_to_k,
    bm25_retrieve,
    demographic_filter,
    demographics_compatible,
    overlap_coefficient,
    retrieve_by_condition,
    tokenize,
)

__version__ = "0.1.0"
