import math

import numpy as np
import pytest

from nowcast.epi_calendar import EpiWeek, week_range
from nowcast.errors import InputError
from nowcast.signals import (RegressorSet, SignalSeries, align, build_regressors, ingest_signal_csv, kendall_tau,
                             log_regressor, write_signal_csv)

W1, W2, W3 = EpiWeek(2012, 1), EpiWeek(2012, 2), EpiWeek(2012, 3)


def test_weekly_rows(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("year,week,value\n2012,1,5.0\n2012,2,7.5\n")
    s = ingest_signal_csv(path, "google_dengue")
    assert len(s) == 2
    assert s.values[W2] == 7.5
    assert s.kind == "probability"


def test_daily_rows_are_summed_by_week(tmp_path):
    path = tmp_path / "t.csv"
    days = [f"2012-01-0{d}" for d in range(1, 8)]
    path.write_text("date,value\n" + "".join(f"{d},1.0\n" for d in days))
    s = ingest_signal_csv(path, "twitter")
    assert dict(s.values) == {W1: 7.0}
    assert s.kind == "count"


def test_row_order_does_not_matter(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("year,week,value\n2012,1,1\n2012,2,2\n2012,3,3\n")
    b.write_text("year,week,value\n2012,3,3\n2012,1,1\n2012,2,2\n")
    assert list(ingest_signal_csv(a, "x").values.items()) == list(ingest_signal_csv(b, "x").values.items())


@pytest.mark.parametrize("body, match", [
    ("year,week,value\n2012,1,1\n2012,1,2\n", "duplicate"),
    ("year,week,value\n2012,1,-1\n", "negative"),
    ("year,week,value\n2012,1,abc\n", "non-numeric"),
    ("day,value\n2012-01-01,1\n", "header"),
    ("date,value\n2012-01-41,1\n", "malformed"),
])
def test_ingest_errors(tmp_path, body, match):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(InputError, match=match):
        ingest_signal_csv(path, "twitter")


def test_signal_csv_written_then_read(tmp_path):
    s = SignalSeries("twitter", {W1: 3.0, W2: 0.0, W3: 12.5})
    write_signal_csv(s, tmp_path / "s.csv")
    again = ingest_signal_csv(tmp_path / "s.csv", "twitter")
    assert dict(again.values) == dict(s.values)


@pytest.mark.parametrize("value, expected", [(0.0, 0.0), (math.e - 1, 1.0), (99.0, 4.605170185988092)])
def test_log_regressor(value, expected):
    s = log_regressor(SignalSeries("twitter", {W1: value}), epsilon=1.0)
    assert s.values[W1] == pytest.approx(expected, abs=1e-12)
    assert s.kind == "log"


def test_log_regressor_monotone_and_finite():
    raw = {EpiWeek(2012, i + 1): v for i, v in enumerate([0.0, 1e-6, 0.5, 3.0, 1e6])}
    for kind in ("count", "probability"):
        logged = list(log_regressor(SignalSeries("x", raw, kind=kind)).values.values())
        assert all(math.isfinite(v) for v in logged)
        assert all(a < b for a, b in zip(logged, logged[1:]))


def test_align_declaration_order_and_bitwise_values():
    g = SignalSeries("google_dengue", {W1: 1.0, W2: 2.0, W3: 3.0}, kind="log")
    t = SignalSeries("twitter", {W1: 10.0, W2: 20.0, W3: 30.0}, kind="log")
    r = RegressorSet(((g, "gamma_d"), (t, "delta")))
    matrix = align(r, (W1, W3))
    assert matrix.tolist() == [[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]]


def test_align_gap_policies():
    s = SignalSeries("twitter", {W1: 1.0, W3: 3.0}, kind="log")
    r = RegressorSet(((s, "delta"),))
    with pytest.raises(InputError, match="2012-W02"):
        align(r, week_range(W1, W3))
    assert align(r, week_range(W1, W3), fill="previous")[:, 0].tolist() == [1.0, 1.0, 3.0]
    assert align(r, week_range(W1, W3), fill="zero")[:, 0].tolist() == [1.0, 0.0, 3.0]


def test_build_regressors_names_missing_signals():
    g = SignalSeries("google_dengue", {W1: 0.1})
    with pytest.raises(InputError, match="twitter"):
        build_regressors(("gamma_d", "delta"), {"google_dengue": g})
    r = build_regressors(("gamma_d",), {"google_dengue": g})
    assert r.labels == ("gamma_d",)
    assert r.columns[0][0].kind == "log"


def test_regressor_set_rejects_unknown_and_duplicate_labels():
    s = SignalSeries("twitter", {W1: 1.0}, kind="log")
    with pytest.raises(InputError):
        RegressorSet(((s, "beta"),))
    with pytest.raises(InputError):
        RegressorSet(((s, "delta"), (s, "delta")))


def test_kendall_tau():
    x = [1, 2, 3, 4]
    assert kendall_tau(x, x) == (pytest.approx(1.0), 4)
    assert kendall_tau(x, x[::-1])[0] == pytest.approx(-1.0)
    assert kendall_tau(x, [1, 3, 2, 4])[0] == pytest.approx(4 / 6)
    with pytest.raises(InputError):
        kendall_tau([1, 2], [1, 2, 3])


@pytest.mark.parametrize("x, y", [
    ([1, 1, 1], [1, 2, 3]),
    ([1, 2, 3], [5, 5, 5]),
    ([1, 2, float("nan")], [1, 2, 3]),
    ([1], [1]),
])
def test_kendall_tau_undefined_inputs(x, y):
    with pytest.raises(InputError):
        kendall_tau(x, y)


def test_kendall_tau_invariant_under_increasing_transform():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=40), rng.normal(size=40)
    tau, n = kendall_tau(x, y)
    assert -1.0 <= tau <= 1.0 and n == 40
    assert kendall_tau(np.exp(x), y ** 3)[0] == pytest.approx(tau, abs=1e-12)
