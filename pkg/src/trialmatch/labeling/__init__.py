"""Labeling stage: prompt templates, labelers, parsing, caching, extraction."""

from .cache import COARSE_INDEX, CachedLabel, CacheIoError, CacheKey, LabelCache
from .extract import (
    categorize_trial,
    coarse_label_trial,
    extract_patient,
    extract_trial,
    fine_label_trial,
    judge_trial,
    scan_age,
    scan_gender,
)
from .judgments import (
    CriterionJudgment,
    EmptyNoteError,
    LabelingError,
    LabelingServiceError,
    MalformedLabelerOutput,
    MissingCriteriaSectionError,
    TrialJudgments,
)
from .labelers import (
    BaseLabeler,
    ExternalServiceLabeler,
    LabelRequest,
    NoisyLabeler,
    RuleMock,
    rule_categories,
    rule_fine_label,
)
from .parsing import (
    parse_categories_response,
    parse_coarse_response,
    parse_fine_response,
    parse_patient_extraction,
)
from .templates import (
    COARSE_LABEL,
    CRITERION_CATEGORIES,
    EXCLUSION_LABELS,
    INCLUSION_LABELS,
    PATIENT_EXTRACTION,
    TEMPLATE_NAMES,
    PromptTemplate,
    load_all_templates,
    load_template,
)

__all__ = [
    "BaseLabeler",
    "COARSE_INDEX",
    "COARSE_LABEL",
    "CRITERION_CATEGORIES",
    "CacheIoError",
    "CacheKey",
    "CachedLabel",
    "CriterionJudgment",
    "EXCLUSION_LABELS",
    "EmptyNoteError",
    "ExternalServiceLabeler",
    "INCLUSION_LABELS",
    "LabelCache",
    "LabelRequest",
    "LabelingError",
    "LabelingServiceError",
    "MalformedLabelerOutput",
    "MissingCriteriaSectionError",
    "NoisyLabeler",
    "PATIENT_EXTRACTION",
    "PromptTemplate",
    "RuleMock",
    "TEMPLATE_NAMES",
    "TrialJudgments",
    "categorize_trial",
    "coarse_label_trial",
    "extract_patient",
    "extract_trial",
    "fine_label_trial",
    "judge_trial",
    "load_all_templates",
    "load_template",
    "parse_categories_response",
    "parse_coarse_response",
    "parse_fine_response",
    "parse_patient_extraction",
    "rule_categories",
    "rule_fine_label",
    "scan_age",
    "scan_gender",
]
