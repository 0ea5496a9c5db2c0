"""Prompt templates shipped with the package.

The five template bodies live as text assets next to this module. They are
the exact strings sent to the labeling service (modulo the payload appended
at render time), so they are versioned by content hash and the hash is part
of every label-cache key: editing a template invalidates cached labels.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

PATIENT_EXTRACTION = "patient_extraction"
CRITERION_CATEGORIES = "criterion_categories"
INCLUSION_LABELS = "inclusion_labels"
EXCLUSION_LABELS = "exclusion_labels"
COARSE_LABEL = "coarse_label"

TEMPLATE_NAMES = (
    PATIENT_EXTRACTION,
    CRITERION_CATEGORIES,
    INCLUSION_LABELS,
    EXCLUSION_LABELS,
    COARSE_LABEL,
)


@dataclass(frozen=True)
class PromptTemplate:
    """A named prompt body, versioned by its sha256 content hash."""

    name: str
    body: str

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.body.encode("utf-8")).hexdigest()

    @property
    def short_hash(self) -> str:
        return self.sha256[:12]


def load_template(name: str) -> PromptTemplate:
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown template {name!r}; expected one of {TEMPLATE_NAMES}")
    body = (
        resources.files("trialmatch.labeling")
        .joinpath(f"assets/{name}.txt")
        .read_text(encoding="utf-8")
    )
    return PromptTemplate(name=name, body=body)


def load_all_templates() -> dict[str, PromptTemplate]:
    return {name: load_template(name) for name in TEMPLATE_NAMES}


def _bullets(items: Sequence[str]) -> str:
    return "\n".join(f"- {item}" for item in items)


def render_patient_extraction(template: PromptTemplate, note: str) -> str:
    return f'{template.body}\nInput: "{note}"\n\nOutput:'


def render_criterion_categories(
    template: PromptTemplate, criteria: Sequence[str]
) -> str:
    return f'{template.body}\nInput: "{_bullets(criteria)}"\n\nOutput:'


def render_fine_labels(
    template: PromptTemplate,
    criteria: Sequence[str],
    patient_characteristics: Sequence[str],
) -> str:
    # The fine-label template bodies end with the "Input:" header and the
    # polarity-specific criteria heading; the payload continues from there.
    return (
        f"{template.body}"
        f"{_bullets(criteria)}\n\n"
        f"(Patient Characteristics - DO NOT LABEL):\n"
        f"{_bullets(patient_characteristics)}\n"
    )


def render_coarse_label(
    template: PromptTemplate,
    inclusion: Sequence[str],
    exclusion: Sequence[str],
    patient_profile: str,
) -> str:
    parts = [template.body, ""]
    if inclusion:
        parts.append("(Inclusion Criteria):")
        parts.extend(inclusion)
        parts.append("")
    if exclusion:
        parts.append("(Exclusion Criteria):")
        parts.extend(exclusion)
        parts.append("")
    parts.append("(Patient Profile):")
    parts.append(f'"{patient_profile}"')
    parts.append("")
    parts.append("Output:")
    return "\n".join(parts)
