"""
Domain records for paired clinician/patient event sequences

A patient carries two independently timed sequences: clinician visits, each with
a binary label, and patient questionnaire answers without labels. Times are
real-valued days from the patient's first recorded event.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from dualseq.errors import CohortValidationError
from dualseq.settings import CLINICAL_AGE_MEAN, CLINICAL_AGE_STD

Bucket = Literal["1", "2", "3", "4+"]
BUCKETS: Tuple[Bucket, ...] = ("1", "2", "3", "4+")
ALL_BUCKETS = "all"


@dataclass(frozen=True, eq=False)
class ClinicianVisit:
    """One follow-up visit; the label is never part of x"""

    t: float
    x: np.ndarray
    y: int


@dataclass(frozen=True, eq=False)
class PatientAnswer:
    """One self-reported questionnaire"""

    t: float
    x: np.ndarray


@dataclass(frozen=True)
class StaticInfo:
    sex: int
    age: float

    def as_vector(self, age_mean: float = CLINICAL_AGE_MEAN, age_std: float = CLINICAL_AGE_STD) -> np.ndarray:
        """[sex, normalised age]"""
        return np.array([float(self.sex), (self.age - age_mean) / age_std])


@dataclass(frozen=True, eq=False)
class PatientRecord:
    """
    One subject: static covariates plus the two event sequences

    Both sequences are expected strictly time-sorted with at least one visit;
    `validate_record` reports violations instead of raising here so a reader
    can collect every problem of a file.
    """

    id: str
    static: StaticInfo
    visits: Tuple[ClinicianVisit, ...]
    answers: Tuple[PatientAnswer, ...] = field(default_factory=tuple)

    @property
    def n_visits(self) -> int:
        return len(self.visits)

    @property
    def n_answers(self) -> int:
        return len(self.answers)

    @cached_property
    def visit_times(self) -> np.ndarray:
        return np.array([v.t for v in self.visits], dtype=np.float64)

    @cached_property
    def visit_features(self) -> np.ndarray:
        """(T_c x k_c); shape (0, 0) without visits"""
        if not self.visits:
            return np.zeros((0, 0))
        return np.vstack([np.asarray(v.x, dtype=np.float64) for v in self.visits])

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([v.y for v in self.visits], dtype=np.int64)

    @cached_property
    def answer_times(self) -> np.ndarray:
        return np.array([a.t for a in self.answers], dtype=np.float64)

    @cached_property
    def answer_features(self) -> np.ndarray:
        """(T_p x k_p); shape (0, 0) without answers, reshape with the cohort width"""
        if not self.answers:
            return np.zeros((0, 0))
        return np.vstack([np.asarray(a.x, dtype=np.float64) for a in self.answers])

    def truncated(self, n_visits: int) -> "PatientRecord":
        """Copy keeping the first n visits and only the answers at or before the last kept visit"""
        if not 1 <= n_visits <= self.n_visits:
            raise CohortValidationError(f"{self.id}: cannot keep {n_visits} of {self.n_visits} visits")
        horizon = self.visits[n_visits - 1].t
        return PatientRecord(
            id=self.id,
            static=self.static,
            visits=self.visits[:n_visits],
            answers=tuple(a for a in self.answers if a.t <= horizon),
        )


def _times(answers: Union[Sequence[PatientAnswer], np.ndarray]) -> np.ndarray:
    if isinstance(answers, np.ndarray):
        return answers.astype(np.float64, copy=False)
    return np.array([a.t for a in answers], dtype=np.float64)


def align_visits(answer_times: np.ndarray, visit_times: np.ndarray) -> np.ndarray:
    """
    Most recent answer index for every visit at once

    Returns:
        int array of length T_c; -1 where no answer precedes the visit
    """
    answer_times = np.asarray(answer_times, dtype=np.float64)
    if answer_times.size > 1 and np.any(np.diff(answer_times) <= 0):
        raise CohortValidationError("answers not time-sorted")
    # an answer given at exactly the visit time counts
    return np.searchsorted(answer_times, np.asarray(visit_times, dtype=np.float64), side="right") - 1


def most_recent_answer_index(
    answers: Union[Sequence[PatientAnswer], np.ndarray], t: float
) -> Optional[int]:
    """
    Index of the latest answer with time <= t

    Args:
        answers: Time-sorted answers (or their times)
        t: Query time, usually a visit time

    Returns:
        The index, or None when every answer is later than t
    """
    j = int(align_visits(_times(answers), np.array([t]))[0])
    return j if j >= 0 else None


def length_bucket(n_visits: int) -> Bucket:
    """Reporting stratum of a clinician sequence length"""
    if n_visits < 1:
        raise CohortValidationError(f"clinician sequence length must be at least 1, got {n_visits}")
    return BUCKETS[min(n_visits, 4) - 1]


def elapsed_channel(times: np.ndarray) -> np.ndarray:
    """log(1 + days since the previous event of the same sequence); 0 for the first event"""
    times = np.asarray(times, dtype=np.float64)
    if times.size == 0:
        return np.zeros(0)
    return np.log1p(np.diff(times, prepend=times[0]))


def _check_events(
    violations: List[str], kind: str, times: np.ndarray, xs: Sequence[np.ndarray], width: int
) -> None:
    if times.size and not np.all(np.isfinite(times)):
        violations.append(f"{kind}: non-finite time")
    elif times.size and np.any(times < 0):
        violations.append(f"{kind}: negative time")
    if times.size > 1 and np.any(np.diff(times) <= 0):
        violations.append(f"{kind} not time-sorted")
    for i, x in enumerate(xs):
        x = np.asarray(x)
        if x.ndim != 1 or x.shape[0] != width:
            violations.append(f"{kind}[{i}].x: width {x.shape[-1] if x.ndim else 0} != {width}")
        elif not np.all(np.isfinite(x)):
            violations.append(f"{kind}[{i}].x: non-finite value")


def validate_record(record: PatientRecord, k_c: int, k_p: int) -> List[str]:
    """
    Check a record against the data model

    Returns:
        Every violation prefixed by its field path; empty when the record is valid
    """
    violations: List[str] = []
    if not record.visits:
        violations.append("visits: at least one visit required")
    _check_events(violations, "visits", record.visit_times, [v.x for v in record.visits], k_c)
    _check_events(violations, "answers", record.answer_times, [a.x for a in record.answers], k_p)
    for i, v in enumerate(record.visits):
        if v.y not in (0, 1):
            violations.append(f"visits[{i}].y: label {v.y} not in {{0, 1}}")
    if record.static.sex not in (0, 1):
        violations.append(f"static.sex: {record.static.sex} not in {{0, 1}}")
    if not (np.isfinite(record.static.age) and record.static.age > 0):
        violations.append(f"static.age: {record.static.age} must be positive")
    return violations


@dataclass(frozen=True, eq=False)
class Cohort:
    """Immutable collection of records sharing feature widths and names"""

    records: Tuple[PatientRecord, ...]
    k_c: int
    k_p: int
    feature_names_c: Tuple[str, ...]
    feature_names_p: Tuple[str, ...]
    age_mean: float = CLINICAL_AGE_MEAN
    age_std: float = CLINICAL_AGE_STD

    def __post_init__(self) -> None:
        if len(self.feature_names_c) != self.k_c or len(self.feature_names_p) != self.k_p:
            raise CohortValidationError(
                f"feature names ({len(self.feature_names_c)}, {len(self.feature_names_p)}) "
                f"do not match widths ({self.k_c}, {self.k_p})"
            )
        for record in self.records:
            violations = validate_record(record, self.k_c, self.k_p)
            if violations:
                raise CohortValidationError(f"record {record.id} is invalid", violations)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[PatientRecord]:
        return iter(self.records)

    def subset(self, indices: Sequence[int]) -> "Cohort":
        return Cohort(
            records=tuple(self.records[i] for i in indices),
            k_c=self.k_c,
            k_p=self.k_p,
            feature_names_c=self.feature_names_c,
            feature_names_p=self.feature_names_p,
            age_mean=self.age_mean,
            age_std=self.age_std,
        )

    def buckets(self) -> List[Bucket]:
        """Length bucket of every record, in record order"""
        return [length_bucket(r.n_visits) for r in self.records]

    @property
    def n_visits(self) -> int:
        return sum(r.n_visits for r in self.records)
