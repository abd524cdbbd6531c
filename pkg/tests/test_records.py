from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sepsis_vote.errors import FormatError
from sepsis_vote.records import (
    MAX_HOURS, VARIABLES, EventTimeline, PatientRecord, PredictionStream,
    empirical_cdf, format_event_file, format_patient_file, format_prediction_file,
    parse_event_file, parse_patient_file, parse_prediction_file, read_patient,
)

DATA = Path(__file__).parent / "data"


def test_missing_values_preserved():
    rec = parse_patient_file(b"HR|ICULOS\n80|1\nNaN|2\n")
    assert len(rec) == 2
    hr = rec.get("HR")
    assert hr[0] == 80 and np.isnan(hr[1])
    assert rec.row(1)["HR"] is None


def test_columns_bound_by_header_name():
    a = parse_patient_file("HR|Temp|ICULOS\n80|37|1\n")
    b = parse_patient_file("ICULOS|Temp|HR\n1|37|80\n")
    for name in ("HR", "Temp", "ICULOS"):
        assert a.get(name)[0] == b.get(name)[0]


def test_unknown_column_named_in_error():
    with pytest.raises(FormatError, match="Heartrate"):
        parse_patient_file("Heartrate|ICULOS\n80|1\n")


def test_non_numeric_token_reports_line():
    with pytest.raises(FormatError) as info:
        parse_patient_file("HR|ICULOS\n80|1\nabc|2\n")
    assert info.value.line == 3


@pytest.mark.parametrize("token", ["nan", "inf", "1,5", "", "NA"])
def test_only_literal_nan_means_missing(token):
    with pytest.raises(FormatError):
        parse_patient_file(f"HR\n{token}\n")


def test_empty_data_section():
    with pytest.raises(FormatError, match="no hourly rows"):
        parse_patient_file("HR|ICULOS\n")


def test_two_week_truncation():
    rows = "".join(f"80|{h}\n" for h in range(1, 401))
    rec = parse_patient_file("HR|ICULOS\n" + rows)
    assert len(rec) == MAX_HOURS == 336
    with pytest.raises(FormatError):
        parse_patient_file("HR|ICULOS\n" + rows, truncate=False)


def test_full_precision_kept():
    rec = parse_patient_file("Lactate\n1.23456789012345\n")
    assert rec.get("Lactate")[0] == 1.23456789012345


@pytest.mark.parametrize("body", ["Gender\n2\n", "Unit1\n0.5\n", "Age\n-1\n", "ICULOS\n0\n", "ICULOS\n1\n3\n"])
def test_row_invariants(body):
    with pytest.raises(FormatError):
        parse_patient_file(body)


def test_golden_round_trip():
    text = (DATA / "golden_patient.psv").read_text()
    rec = parse_patient_file(text)
    assert format_patient_file(rec) == text
    again = parse_patient_file(format_patient_file(rec))
    np.testing.assert_array_equal(again.values, rec.values)


def test_read_patient_with_sidecar():
    rec = read_patient(DATA / "golden_patient.psv")
    assert rec.patient_id == "golden_patient"
    assert rec.events.antibiotic_intervals == ((10, 82),)
    assert rec.events.culture_hours == (20,)
    assert rec.events.sofa_series == ((0, 2), (10, 5))
    assert format_event_file(rec.events) == (DATA / "golden_patient.evt.psv").read_text()


@pytest.mark.parametrize("line", ["abx|5|2", "abx|1", "infusion|1|2", "culture|x|", "sofa|-1|3"])
def test_bad_event_lines(line):
    with pytest.raises(FormatError):
        parse_event_file(line + "\n")


def test_event_timeline_invariants():
    with pytest.raises(ValueError):
        EventTimeline(antibiotic_intervals=((5, 1),))
    with pytest.raises(ValueError):
        EventTimeline(culture_hours=(-2,))


def test_prediction_file():
    s = parse_prediction_file("0.7|1\n0.2|0\n")
    np.testing.assert_array_equal(s.labels, [1, 0])
    np.testing.assert_array_equal(s.probabilities, [0.7, 0.2])


def test_prediction_missing_probability():
    s = parse_prediction_file("NaN|1\n")
    assert s.labels[0] == 1 and np.isnan(s.probabilities[0])


def test_prediction_bad_label():
    with pytest.raises(FormatError, match="label must be 0 or 1"):
        parse_prediction_file("0.5|2\n")


def test_prediction_round_trip_bit_exact():
    text = (DATA / "golden_pred.psv").read_text()
    assert format_prediction_file(parse_prediction_file(text)) == text


def test_stream_invariants():
    with pytest.raises(ValueError):
        PredictionStream("a", "p", [0, 1], [0.5])
    with pytest.raises(ValueError):
        PredictionStream("a", "p", [0, 3])


def _cohort(*columns):
    return [PatientRecord(f"p{i}", ("HR",), np.array(c, dtype=float)[:, None]) for i, c in enumerate(columns)]


@pytest.mark.parametrize(
    "columns, expected",
    [
        (([1, 2], [2, 3]), [(1, 0.25), (2, 0.75), (3, 1.0)]),
        (([np.nan, np.nan],), []),
        (([5],), [(5, 1.0)]),
    ],
)
def test_empirical_cdf(columns, expected):
    assert empirical_cdf(_cohort(*columns), "HR") == expected


def test_cdf_ignores_records_without_column():
    rec = PatientRecord("x", ("Temp",), np.array([[37.0]]))
    assert empirical_cdf([rec], "HR") == []


values = st.one_of(st.none(), st.integers(-500, 500), st.floats(-1e3, 1e3, allow_nan=False).map(lambda v: round(v, 3)))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(values, min_size=3, max_size=3), min_size=1, max_size=30))
def test_parse_never_imputes(rows):
    text = "HR|Temp|Lactate\n" + "".join("|".join("NaN" if v is None else repr(v) for v in r) + "\n" for r in rows)
    rec = parse_patient_file(text)
    missing_in = sum(v is None for r in rows for v in r)
    assert int(np.isnan(rec.values).sum()) == missing_in
    again = parse_patient_file(format_patient_file(rec))
    np.testing.assert_array_equal(again.values, rec.values)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.one_of(st.none(), st.integers(0, 20)), min_size=1, max_size=20), min_size=1, max_size=5))
def test_cdf_monotone_right_continuous(columns):
    cohort = _cohort(*[[np.nan if v is None else v for v in c] for c in columns])
    cdf = empirical_cdf(cohort, "HR")
    observed = [v for c in columns for v in c if v is not None]
    if not observed:
        assert cdf == []
        return
    xs = [v for v, _ in cdf]
    fs = [f for _, f in cdf]
    assert xs == sorted(set(observed))
    assert all(a < b for a, b in zip(fs, fs[1:]))
    assert fs[-1] == 1.0
    # right-continuous step: F(x) counts values <= x
    for x, f in cdf:
        assert f == pytest.approx(sum(v <= x for v in observed) / len(observed))


def test_all_variables_present():
    assert len(VARIABLES) == 40 and len(set(VARIABLES)) == 40
    assert VARIABLES[0] == "HR" and VARIABLES[-1] == "ICULOS"
