import io

import numpy as np
import pytest

from semfda.core import SemParams, conditional, q_ig
from semfda.errors import DataQualityError, DegenerateConditioningError, ParseError
from semfda.hmd import (
    CohortMortality,
    CohortPanel,
    build_mortality,
    conditional_data,
    parse_cohort_lifetable,
    read_normalized,
    write_normalized,
)

HEADER = (
    "Sweden, Life tables (cohort 1x1), Males\tLast modified: 01 Jan 2020\n"
    "\n"
    "  Year          Age         mx       qx    ax      lx      dx      Lx       Tx     ex\n"
)


def _table(rows):
    return io.StringIO(HEADER + "".join(rows))


def test_row_mapping():
    rows = parse_cohort_lifetable(
        _table(["  1781   30   0.01  0.00995  0.5  80000  796  79602  3000000  37.5\n"])
    )
    r = rows[0]
    assert (r.cohort, r.age, r.lx, r.qx) == (1781, 30, 80000.0, 0.00995)


def test_missing_flagged():
    rows = parse_cohort_lifetable(_table(["1781 30 . . . . . . . .\n"]))
    assert rows[0].qx is None and rows[0].missing


def test_open_age_group():
    rows = parse_cohort_lifetable(_table(["1781 110+ 0.9 1.0 0.5 10 10 10 10 1.0\n"]))
    assert rows[0].age == 110


def test_two_line_preamble_without_column_header():
    text = io.StringIO("title\nsubtitle\n1781 0 0.1 0.1 0.5 100000 10000 95000 3e6 30\n")
    assert parse_cohort_lifetable(text)[0].lx == 100000.0


def test_malformed_row_reports_line():
    with pytest.raises(ParseError) as err:
        parse_cohort_lifetable(_table(["1781 0 0.1 0.1\n"]))
    assert err.value.line == 4


def test_empty_file():
    with pytest.raises(ParseError):
        parse_cohort_lifetable(io.StringIO(""))


def _rows(qx=None, lx=None):
    lines = []
    n = len(qx) if qx is not None else len(lx)
    for a in range(n):
        q = "." if qx is None else str(qx[a])
        l = "." if lx is None else str(lx[a])
        lines.append(f"1800 {a} 0.1 {q} 0.5 {l} 1 1 1 1\n")
    return parse_cohort_lifetable(_table(lines))


def test_build_from_lx():
    cm = build_mortality(_rows(lx=[100000, 90000, 81000]), 1800, SemParams())
    np.testing.assert_allclose(cm.q_data, [0, 0.1, 0.19], atol=1e-15)


def test_build_zero_qx():
    cm = build_mortality(_rows(qx=[0.0, 0.0, 0.0]), 1800, SemParams())
    assert np.all(cm.q_data == 0)


def test_qx_route_equals_lx_route():
    qx_cm = build_mortality(_rows(qx=[0.1, 0.1]), 1800, SemParams())
    lx_cm = build_mortality(_rows(lx=[100000, 90000, 81000]), 1800, SemParams())
    np.testing.assert_allclose(qx_cm.q_data, [0, 0.1, 0.19], atol=1e-15)
    np.testing.assert_allclose(qx_cm.q_data, lx_cm.q_data, atol=1e-15)


def test_gap_error():
    rows = [r for r in _rows(lx=[100000, 90000, 81000, 70000]) if r.age != 2]
    with pytest.raises(DataQualityError, match=r"\[2\]"):
        build_mortality(rows, 1800, SemParams())


def test_degenerate_cohort():
    with pytest.raises(DataQualityError):
        build_mortality(_rows(lx=[0, 0]), 1800, SemParams())


def test_terminal_missing_truncates():
    lines = [f"1900 {a} 0.1 0.1 0.5 {100000 - 1000 * a} 1 1 1 1\n" for a in range(5)]
    lines.append("1900 5 . . . . . . . .\n")
    cm = build_mortality(parse_cohort_lifetable(_table(lines)), 1900, SemParams())
    assert cm.w_avail == 4


def test_conditional_data():
    cm = CohortMortality(1, np.array([0.0, 0.1, 0.2, 0.6]))
    cond = conditional_data(cm, 2)
    assert cond[0] == 0.0
    assert cond[1] == pytest.approx(0.5, abs=1e-15)


def test_conditional_data_degenerate():
    with pytest.raises(DegenerateConditioningError):
        conditional_data(CohortMortality(1, np.array([0.0, 1.0, 1.0])), 1)


def test_conditional_matches_closed_form(params):
    ages = np.arange(0, 111)
    lam = np.exp(0.07 * ages) + 0.5 * ages - 1
    q = q_ig(lam, params)
    cm = CohortMortality(1800, q)
    ref = conditional(q[20:], q[20])
    np.testing.assert_allclose(conditional_data(cm, 20), ref, atol=1e-12, rtol=0)


def test_normalized_round_trip(tmp_path, rng):
    p = SemParams()
    curves = {}
    for c in range(1781, 1786):
        q = np.sort(rng.uniform(0, 1, 111))
        q[0] = 0.0
        curves[c] = CohortMortality(c, q)
    panel = CohortPanel(curves, p)
    path = tmp_path / "mortality.tsv"
    write_normalized(panel, path)
    back = read_normalized(path, p)
    assert back.cohorts == panel.cohorts
    for c in panel.cohorts:
        assert np.array_equal(back[c].q_data, panel[c].q_data)
    first = path.read_bytes()
    write_normalized(back, path)
    assert path.read_bytes() == first


def test_normalized_version_header(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("cohort\tage\tq\n1\t0\t0.0\n")
    with pytest.raises(ParseError):
        read_normalized(path, SemParams())
