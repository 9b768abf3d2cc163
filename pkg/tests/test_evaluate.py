import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semfda.core import KeyKind, conditional
from semfda.errors import DataQualityError, SemError
from semfda.evaluate import (
    MSE_COLUMNS,
    MseReport,
    evaluate_cohort,
    evaluation_range,
    mse,
    recondition,
    render_table,
    write_mse,
)
from semfda.hmd import CohortMortality
from semfda.tsv import read_tsv

curves = arrays(np.float64, 20, elements=st.floats(0, 1))


class TestMse:
    def test_equal_is_zero(self):
        q = np.linspace(0, 1, 81)
        assert mse(q, q, 30, 110) == 0.0

    @pytest.mark.parametrize("lo,hi", [(30, 110), (100, 110), (110, 110)])
    def test_constant_offset(self, lo, hi):
        q = np.linspace(0, 0.5, hi - lo + 1)
        assert mse(q + 0.01, q, lo, hi) == pytest.approx(1e-4, rel=1e-10)

    def test_length_mismatch(self):
        with pytest.raises(SemError, match="length mismatch"):
            mse(np.zeros(10), np.zeros(11), 100, 110)

    @settings(max_examples=50)
    @given(curves, curves)
    def test_symmetric_and_zero_iff_equal(self, a, b):
        assert mse(a, b, 91, 110) == mse(b, a, 91, 110)
        assert mse(a, b, 91, 110) >= 0
        assert (mse(a, b, 91, 110) == 0) == bool(np.array_equal(a, b))


class TestRanges:
    def test_displayed_formula(self):
        assert evaluation_range(1910, 1940, 110) == (30, 110)

    def test_first_forecast_age_switch(self):
        assert evaluation_range(1910, 1940, 110, first_forecast_age=True) == (31, 110)

    def test_empty(self):
        with pytest.raises(SemError):
            evaluation_range(1820, 1940, 110)


class TestRecondition:
    def test_chain_identity(self):
        ages = np.arange(20, 111)
        q = np.linspace(0.001, 0.99, ages.size) ** 2
        cond20 = conditional(q, q[0])
        got = recondition(cond20, ages, 30)
        np.testing.assert_allclose(got, conditional(q[10:], q[10]), atol=1e-14)

    def test_missing_age(self):
        with pytest.raises(SemError):
            recondition([0.0, 0.1], [20, 21], 30)


class TestEvaluateCohort:
    def _holdout(self, cohort=1910):
        ages = np.arange(0, 111)
        return CohortMortality(cohort, 1 - np.exp(-((ages / 85.0) ** 6)))

    def test_self_evaluation_is_zero(self):
        h = self._holdout()
        ages = np.arange(20, 111)
        pred = conditional(h.q_data[20:], h.q_data[20])
        rep = evaluate_cohort("IG", "unmodified", ages, pred, h, 30, 1940, 110)
        assert rep.mse < 1e-28
        assert rep.age_range == (30, 110) and rep.n_ages == 81

    def test_offset(self):
        h = self._holdout(1870)
        ages = np.arange(20, 111)
        pred = conditional(h.q_data[20:], h.q_data[20])
        rep = evaluate_cohort("ID", "modified", ages, np.clip(pred * 1.05, 0, 1), h, 30, 1940, 110, delta=0.95)
        assert rep.age_range == (70, 110)
        assert rep.mse > 0 and rep.label == "ID modified d=0.95"

    def test_no_overlap(self):
        h = CohortMortality(1910, np.zeros(30))
        with pytest.raises(DataQualityError, match="share no ages"):
            evaluate_cohort("IG", "unmodified", np.arange(20, 111), np.zeros(91), h, 30, 1940, 110)

    def test_bad_variant(self):
        with pytest.raises(SemError):
            evaluate_cohort("IG", "other", np.arange(20, 111), np.zeros(91), self._holdout(), 30, 1940, 110)


def _rep(kind, cohort, variant, value, delta=None):
    return MseReport(KeyKind(kind), cohort, variant, value, (30, 110), 81, delta)


class TestTable:
    def test_single_report(self):
        text, header, rows = render_table([_rep("IG", 1870, "unmodified", 7.3466e-6)], ["IG"])
        assert len(rows) == 1 and header == ("cohort", "IG unmodified")
        assert "7.3466E-06" in text
        assert "no results for: IG modified" in text

    def test_id_before_ig(self):
        reports = [
            _rep("IG", 1870, "unmodified", 1e-5),
            _rep("ID", 1870, "modified", 2e-5, 0.95),
            _rep("ID", 1870, "unmodified", 3e-5),
            _rep("IG", 1870, "modified", 4e-5, 0.95),
            _rep("IG", 1890, "unmodified", 5e-5),
        ]
        text, header, rows = render_table(reports)
        assert header == (
            "cohort",
            "ID unmodified",
            "ID modified d=0.95",
            "IG unmodified",
            "IG modified d=0.95",
        )
        assert [r[0] for r in rows] == [1870, 1890]
        assert np.isnan(rows[1][1]) and "no results" not in text

    def test_empty_variant_footer(self):
        text, header, _ = render_table([_rep("ID", 1870, "unmodified", 1e-5), _rep("IG", 1870, "unmodified", 1e-5)])
        assert all("modified d" not in h for h in header)
        assert "no results for: ID modified, IG modified" in text

    def test_empty(self):
        with pytest.raises(SemError):
            render_table([])


def test_mse_dump(tmp_path):
    path = tmp_path / "mse.tsv"
    write_mse(path, [_rep("IG", 1870, "modified", 1.5e-6, 0.8), _rep("IG", 1870, "unmodified", 2e-6)])
    rows = read_tsv(path, "mse", MSE_COLUMNS)
    assert rows[0][3] == "0.8" and rows[1][3] == "" and float(rows[0][-1]) == 1.5e-6
