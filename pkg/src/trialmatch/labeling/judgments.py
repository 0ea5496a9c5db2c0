"""Judgment records produced by the labeling stage."""

from __future__ import annotations

from dataclasses import dataclass

from ..model import Criterion, EligibilityLabel


class LabelingError(Exception):
    """Base class for labeling failures."""


class EmptyNoteError(LabelingError):
    """The patient note is empty or whitespace."""


class MissingCriteriaSectionError(LabelingError):
    """The trial record lists no inclusion and no exclusion criteria."""


class MalformedLabelerOutput(LabelingError):
    """The labeler response failed schema validation after retries."""


class LabelingServiceError(LabelingError):
    """The external labeling service failed after transport retries."""


@dataclass(frozen=True)
class CriterionJudgment:
    """One criterion's eligibility verdict for one patient.

    degraded marks judgments that fell back to NOT_ENOUGH_INFO because the
    labeler output stayed unparseable after a repair attempt.
    """

    criterion: Criterion
    label: EligibilityLabel
    degraded: bool = False


@dataclass(frozen=True)
class TrialJudgments:
    """All labels collected for one (patient, trial) pair.

    coarse, when present, is the whole-trial binary call and must be
    ELIGIBLE or EXCLUDED; fine judgments carry the three-valued labels.
    """

    patient_id: str
    trial_id: str
    fine: tuple[CriterionJudgment, ...] = ()
    coarse: EligibilityLabel | None = None
    coarse_degraded: bool = False

    def __post_init__(self) -> None:
        if self.coarse is not None and self.coarse is EligibilityLabel.NOT_ENOUGH_INFO:
            raise ValueError("coarse label must be binary (eligible or excluded)")

    def fine_labels(self) -> tuple[EligibilityLabel, ...]:
        return tuple(j.label for j in self.fine)

    def has_label(self, label: EligibilityLabel) -> bool:
        return any(j.label is label for j in self.fine)
