"""
JSONL cohort container
"""

import json

import numpy as np
import pytest

from dualseq.data.cohort_io import read_cohort, write_cohort
from dualseq.errors import CohortValidationError, ConfigurationError


class TestCohortRoundTrip:
    """write -> read keeps every value"""

    def test_values_are_bit_exact(self, tiny_cohort, tmp_path):
        path = write_cohort(tiny_cohort, tmp_path / "cohort.jsonl")
        loaded = read_cohort(path)
        assert loaded.k_c == tiny_cohort.k_c
        assert loaded.feature_names_p == tiny_cohort.feature_names_p
        for a, b in zip(tiny_cohort, loaded):
            assert a.id == b.id
            assert a.static == b.static
            np.testing.assert_array_equal(a.visit_times, b.visit_times)
            np.testing.assert_array_equal(a.visit_features, b.visit_features)
            np.testing.assert_array_equal(a.labels, b.labels)
            np.testing.assert_array_equal(a.answer_times, b.answer_times)
            np.testing.assert_array_equal(a.answer_features, b.answer_features)

    def test_rewrite_is_byte_identical(self, tiny_cohort, tmp_path):
        first = write_cohort(tiny_cohort, tmp_path / "a.jsonl")
        second = write_cohort(read_cohort(first), tmp_path / "b.jsonl")
        assert first.read_bytes() == second.read_bytes()

    def test_header_on_first_line(self, tiny_cohort, tmp_path):
        path = write_cohort(tiny_cohort, tmp_path / "cohort.jsonl")
        lines = path.read_text().splitlines()
        assert json.loads(lines[0])["k_p"] == tiny_cohort.k_p
        assert len(lines) == len(tiny_cohort) + 1


class TestCohortErrors:
    """Malformed files report where they broke"""

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"k_c": "four"}\n')
        with pytest.raises(CohortValidationError) as info:
            read_cohort(path)
        assert info.value.line == 1

    def test_invalid_record_line_number(self, tiny_cohort, tmp_path):
        path = write_cohort(tiny_cohort, tmp_path / "cohort.jsonl")
        lines = path.read_text().splitlines()
        record = json.loads(lines[3])
        record["visits"][0]["y"] = 7
        lines[3] = json.dumps(record)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(CohortValidationError) as info:
            read_cohort(path)
        assert info.value.line == 4
        assert any("visits[0].y" in v for v in info.value.violations)
        assert str(info.value).startswith("line 4: ")

    def test_truncated_json(self, tiny_cohort, tmp_path):
        path = write_cohort(tiny_cohort, tmp_path / "cohort.jsonl")
        path.write_text(path.read_text()[:-40])
        with pytest.raises(CohortValidationError) as info:
            read_cohort(path)
        assert info.value.line == len(tiny_cohort) + 1

    def test_unknown_field_rejected(self, tiny_cohort, tmp_path):
        path = write_cohort(tiny_cohort, tmp_path / "cohort.jsonl")
        lines = path.read_text().splitlines()
        record = json.loads(lines[1])
        record["label"] = 1
        lines[1] = json.dumps(record)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(CohortValidationError) as info:
            read_cohort(path)
        assert info.value.line == 2

    def test_unknown_format(self, tiny_cohort, tmp_path):
        with pytest.raises(ConfigurationError):
            write_cohort(tiny_cohort, tmp_path / "cohort.parquet", format="parquet")
        with pytest.raises(ConfigurationError):
            read_cohort(tmp_path / "cohort.parquet", format="parquet")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CohortValidationError):
            read_cohort(tmp_path / "missing.jsonl")
