"""
Cohort container - one JSON object per line

Line 1 is a header with the feature widths, names and age normalisation
constants; every following line is one patient record. Floats are written with
the shortest repr that round-trips, so write -> read -> write is byte-identical.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from dualseq.data.records import (
    ClinicianVisit,
    Cohort,
    PatientAnswer,
    PatientRecord,
    StaticInfo,
    validate_record,
)
from dualseq.errors import CohortValidationError, ConfigurationError
from dualseq.settings import CLINICAL_AGE_MEAN, CLINICAL_AGE_STD

logger = logging.getLogger(__name__)

FORMATS = ("jsonl",)


class _Line(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CohortHeader(_Line):
    k_c: int
    k_p: int
    feature_names_c: List[str]
    feature_names_p: List[str]
    age_mean: float = CLINICAL_AGE_MEAN
    age_std: float = CLINICAL_AGE_STD


class VisitLine(_Line):
    t: float
    x: List[float]
    y: int


class AnswerLine(_Line):
    t: float
    x: List[float]


class RecordLine(_Line):
    id: str
    sex: int
    age: float
    visits: List[VisitLine]
    answers: List[AnswerLine] = []


def _check_format(fmt: str) -> None:
    if fmt not in FORMATS:
        raise ConfigurationError(f"unsupported cohort format '{fmt}', expected one of {FORMATS}")


def _dumps(obj: Dict[str, Any]) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def record_to_dict(record: PatientRecord) -> Dict[str, Any]:
    return {
        "id": record.id,
        "sex": int(record.static.sex),
        "age": float(record.static.age),
        "visits": [
            {"t": float(v.t), "x": np.asarray(v.x, dtype=np.float64).tolist(), "y": int(v.y)} for v in record.visits
        ],
        "answers": [{"t": float(a.t), "x": np.asarray(a.x, dtype=np.float64).tolist()} for a in record.answers],
    }


def record_from_line(line: RecordLine) -> PatientRecord:
    return PatientRecord(
        id=line.id,
        static=StaticInfo(sex=line.sex, age=line.age),
        visits=tuple(ClinicianVisit(t=v.t, x=np.array(v.x, dtype=np.float64), y=v.y) for v in line.visits),
        answers=tuple(PatientAnswer(t=a.t, x=np.array(a.x, dtype=np.float64)) for a in line.answers),
    )


def write_cohort(cohort: Cohort, path: Union[str, Path], format: str = "jsonl") -> Path:
    """
    Serialise a cohort

    Args:
        cohort: Cohort to write
        path: Destination file (parent directories are created)
        format: Container format; only "jsonl"

    Returns:
        The written path
    """
    _check_format(format)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "k_c": cohort.k_c,
        "k_p": cohort.k_p,
        "feature_names_c": list(cohort.feature_names_c),
        "feature_names_p": list(cohort.feature_names_p),
        "age_mean": float(cohort.age_mean),
        "age_std": float(cohort.age_std),
    }
    lines = [_dumps(header)] + [_dumps(record_to_dict(r)) for r in cohort.records]
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except ValueError as e:
        raise CohortValidationError(f"cannot serialise cohort: {e}") from e
    logger.info(f"Wrote {len(cohort)} records to {path}")
    return path


def read_cohort(path: Union[str, Path], format: str = "jsonl") -> Cohort:
    """
    Load and validate a cohort file

    Raises:
        CohortValidationError: malformed line or record, with its 1-based line number
    """
    _check_format(format)
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CohortValidationError(f"cannot read cohort {path}: {e}") from e

    lines = text.splitlines()
    if not lines:
        raise CohortValidationError(f"{path} is empty", line=1)
    try:
        header = CohortHeader.model_validate_json(lines[0])
    except ValidationError as e:
        raise CohortValidationError(f"malformed header: {e.errors()[0]['msg']}", line=1) from e

    records: List[PatientRecord] = []
    for number, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            record = record_from_line(RecordLine.model_validate_json(raw))
        except ValidationError as e:
            raise CohortValidationError(f"malformed record: {e.errors()[0]['msg']}", line=number) from e
        violations = validate_record(record, header.k_c, header.k_p)
        if violations:
            raise CohortValidationError(f"record {record.id} is invalid", violations, line=number)
        records.append(record)

    cohort = Cohort(
        records=tuple(records),
        k_c=header.k_c,
        k_p=header.k_p,
        feature_names_c=tuple(header.feature_names_c),
        feature_names_p=tuple(header.feature_names_p),
        age_mean=header.age_mean,
        age_std=header.age_std,
    )
    logger.debug(f"Read {len(cohort)} records from {path}")
    return cohort
