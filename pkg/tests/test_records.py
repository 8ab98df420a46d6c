"""
Patient records, visit alignment, length buckets and validation
"""

import numpy as np
import pytest

from dualseq.data.records import (
    BUCKETS,
    ClinicianVisit,
    Cohort,
    PatientAnswer,
    PatientRecord,
    StaticInfo,
    align_visits,
    elapsed_channel,
    length_bucket,
    most_recent_answer_index,
    validate_record,
)
from dualseq.errors import CohortValidationError

from . import make_record
from .conftest import K_C, K_P


def _answers(*times: float) -> tuple:
    return tuple(PatientAnswer(t=t, x=np.zeros(K_P)) for t in times)


class TestAlignment:
    """Most recent answer for a visit"""

    def test_answer_at_visit_time_counts(self):
        assert most_recent_answer_index(_answers(1.0, 5.0, 9.0), 5.0) == 1

    def test_no_earlier_answer(self):
        assert most_recent_answer_index(_answers(3.0, 4.0), 2.0) is None
        assert most_recent_answer_index((), 10.0) is None

    def test_accepts_plain_times(self):
        assert most_recent_answer_index(np.array([0.0, 2.0, 4.0]), 3.5) == 1

    def test_matches_linear_scan(self):
        gen = np.random.default_rng(11)
        for _ in range(10_000):
            times = np.unique(gen.integers(0, 30, size=int(gen.integers(0, 8))).astype(float))
            t = float(gen.integers(-2, 33))
            earlier = [i for i, a in enumerate(times) if a <= t]
            expected = earlier[-1] if earlier else None
            assert most_recent_answer_index(times, t) == expected

    def test_whole_sequence_alignment(self):
        idx = align_visits(np.array([1.0, 4.0, 6.0]), np.array([0.5, 4.0, 5.0, 10.0]))
        assert idx.tolist() == [-1, 1, 1, 2]

    def test_unsorted_answers_rejected(self):
        with pytest.raises(CohortValidationError, match="not time-sorted"):
            align_visits(np.array([3.0, 1.0]), np.array([2.0]))


class TestBucketsAndElapsed:
    """Length buckets and the elapsed-time channel"""

    @pytest.mark.parametrize("n, bucket", [(1, "1"), (2, "2"), (3, "3"), (4, "4+"), (17, "4+")])
    def test_length_bucket(self, n, bucket):
        assert length_bucket(n) == bucket

    def test_empty_sequence_has_no_bucket(self):
        with pytest.raises(CohortValidationError):
            length_bucket(0)

    def test_bucket_order(self):
        assert BUCKETS == ("1", "2", "3", "4+")

    def test_elapsed_channel(self):
        out = elapsed_channel(np.array([0.0, 1.0, 4.0]))
        np.testing.assert_allclose(out, [0.0, np.log(2.0), np.log(4.0)])
        assert elapsed_channel(np.zeros(0)).shape == (0,)


class TestValidation:
    """validate_record and Cohort construction"""

    def test_valid_record(self, rng):
        assert validate_record(make_record(rng, 3, 4, K_C, K_P), K_C, K_P) == []

    def test_every_violation_reported(self):
        record = PatientRecord(
            id="bad",
            static=StaticInfo(sex=2, age=-1.0),
            visits=(
                ClinicianVisit(t=5.0, x=np.zeros(K_C), y=0),
                ClinicianVisit(t=2.0, x=np.zeros(K_C + 1), y=3),
            ),
        )
        violations = validate_record(record, K_C, K_P)
        assert "visits not time-sorted" in violations
        assert f"visits[1].x: width {K_C + 1} != {K_C}" in violations
        assert any(v.startswith("visits[1].y") for v in violations)
        assert any(v.startswith("static.sex") for v in violations)
        assert any(v.startswith("static.age") for v in violations)

    def test_at_least_one_visit(self):
        record = PatientRecord(id="empty", static=StaticInfo(0, 40.0), visits=())
        assert "visits: at least one visit required" in validate_record(record, K_C, K_P)

    def test_duplicate_answer_times_rejected(self):
        record = PatientRecord(
            id="dup",
            static=StaticInfo(0, 40.0),
            visits=(ClinicianVisit(t=1.0, x=np.zeros(K_C), y=0),),
            answers=_answers(0.5, 0.5),
        )
        assert "answers not time-sorted" in validate_record(record, K_C, K_P)

    def test_cohort_rejects_invalid_record(self, rng):
        good = make_record(rng, 2, 1, K_C, K_P)
        bad = make_record(rng, 2, 1, K_C + 1, K_P, record_id="p00001")
        with pytest.raises(CohortValidationError) as info:
            Cohort((good, bad), K_C, K_P, ("a",) * K_C, ("b",) * K_P)
        assert "p00001" in str(info.value)
        assert info.value.violations

    def test_cohort_checks_feature_names(self, rng):
        with pytest.raises(CohortValidationError):
            Cohort((make_record(rng, 1, 0, K_C, K_P),), K_C, K_P, ("a",), ("b",) * K_P)


class TestRecordViews:
    """Derived arrays, truncation and subsets"""

    def test_feature_matrices(self, rng):
        record = make_record(rng, 3, 2, K_C, K_P)
        assert record.visit_features.shape == (3, K_C)
        assert record.answer_features.shape == (2, K_P)
        assert record.labels.dtype == np.int64

    def test_truncated_drops_later_answers(self):
        record = PatientRecord(
            id="p",
            static=StaticInfo(1, 50.0),
            visits=tuple(ClinicianVisit(t=t, x=np.zeros(K_C), y=0) for t in (1.0, 3.0, 8.0)),
            answers=_answers(0.0, 3.0, 5.0),
        )
        short = record.truncated(2)
        assert short.n_visits == 2
        assert short.answer_times.tolist() == [0.0, 3.0]
        with pytest.raises(CohortValidationError):
            record.truncated(0)

    def test_subset_and_buckets(self, tiny_cohort):
        sub = tiny_cohort.subset([3, 0])
        assert [r.id for r in sub] == ["p00003", "p00000"]
        assert sub.buckets() == ["4+", "1"]
        assert tiny_cohort.buckets().count("4+") == 4
        assert tiny_cohort.n_visits == 4 * (1 + 2 + 3 + 5)
