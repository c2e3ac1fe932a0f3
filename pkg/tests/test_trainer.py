import math

import numpy as np
import pytest

from nowcast.config.run_config import DataConfig
from nowcast.dataset import build_triangle
from nowcast.epi_calendar import EpiWeek
from nowcast.errors import InputError
from nowcast.metrics import build_report, relative_metric
from nowcast.models.delay_model import ModelSpec
from nowcast.signals import build_regressors
from nowcast.simulator import DelayRegime, SignalLaw, SimConfig, simulate
from nowcast.trainer import rolling_evaluate, week_seed, window_start

FIRST = EpiWeek(2012, 1)


def test_window_start():
    t = EpiWeek(2014, 30)
    assert window_start(t, "full", FIRST) == FIRST
    assert window_start(t, "6m", FIRST) == t - 25
    assert window_start(t, "2y", FIRST) == t - 103
    assert window_start(EpiWeek(2012, 10), "1y", FIRST) == FIRST
    with pytest.raises(InputError):
        window_start(t, "3y", FIRST)


def test_week_seed():
    assert week_seed(7, FIRST) == week_seed(7, FIRST)
    assert week_seed(7, FIRST) != week_seed(7, FIRST + 1)
    assert week_seed(7, FIRST) != week_seed(8, FIRST)


def test_short_history_in_window_gives_only_gaps(make_linelist):
    linelist = make_linelist(FIRST, np.full((10, 1), 5))
    out = rolling_evaluate(ModelSpec("baseline"), linelist, None, FIRST + 2, FIRST + 9, window="6m",
                           n_samples=10, progress=False)
    assert len(out) == 0
    assert [w for w, _ in out.gaps] == [FIRST + i for i in range(2, 10)]
    assert out.leakage_violations == 0


def test_range_checks(make_linelist):
    linelist = make_linelist(FIRST, np.full((30, 1), 5))
    with pytest.raises(InputError):
        rolling_evaluate(ModelSpec("baseline"), linelist, None, FIRST + 25, FIRST + 35, progress=False)
    with pytest.raises(InputError):
        rolling_evaluate(ModelSpec("baseline"), linelist, None, FIRST + 25, FIRST + 24, progress=False)


def test_perfect_information_is_recovered_exactly(fast_inference):
    d = simulate(SimConfig(first_week="2012-W01", n_weeks=40, delay_regimes=[DelayRegime(law=[1.0])], seed=6))
    data = DataConfig(dmax_floor=0, min_training_weeks=5, completeness_horizon=0)
    start, end = d.first_week + 20, d.first_week + 23
    out = rolling_evaluate(ModelSpec("baseline"), d.linelist, None, start, end, n_samples=20, seed=1, data=data,
                           inference=fast_inference, recent_weeks=2, progress=False)
    assert out.weeks == [start + i for i in range(4)]
    assert out.d_max == [0] * 4
    assert out.truths == [float(v) for v in d.truths[20:24]]
    assert out.combined().point.tolist() == out.truths
    assert out.leakage_violations == 0
    assert all(math.isfinite(v) for v in out.waic)
    assert len(out.recent[start]) == 3
    assert out.complete.all()


def test_naive_uses_the_previous_week_as_known_then(small_scenario):
    d = simulate(small_scenario)
    start, end = d.first_week + 40, d.first_week + 45
    out = rolling_evaluate(ModelSpec("naive"), d.linelist, None, start, end, progress=False)
    assert out.d_max == [8] * 6
    for t, result in zip(out.weeks, out.results):
        triangle = build_triangle(d.linelist.as_of(t), t, d.first_week, 8)
        assert result.point[0] == triangle.counts[triangle.week_index(t - 1)].sum()
        assert not result.has_intervals
    assert out.waic == [None] * 6
    # a 26 week horizon leaves the last weeks of the data without truth
    late = rolling_evaluate(ModelSpec("naive"), d.linelist, None, d.last_week - 3, d.last_week, progress=False)
    assert not late.complete.any()


def _calibration_world():
    cfg = SimConfig(first_week="2010-W01", n_weeks=340, amplitudes=[1200.0, 2500.0, 900.0, 3000.0, 1800.0, 1500.0,
                                                                      2200.0],
                    delay_regimes=[DelayRegime(law=[0.1, 0.15, 0.2, 0.2, 0.15, 0.1, 0.05, 0.03, 0.02])],
                    signals=[SignalLaw(name="google_dengue", coefficient=0.9, intercept=-5.0, noise_sd=0.05)],
                    seed=2024)
    return simulate(cfg)


@pytest.mark.slow
def test_baseline_intervals_are_calibrated():
    d = _calibration_world()
    start = d.first_week + 104
    end = start + 199
    data = DataConfig(completeness_horizon=8)
    rolling = {
        "baseline": rolling_evaluate(ModelSpec("baseline"), d.linelist, None, start, end, window="2y",
                                     n_samples=1000, seed=3, data=data, progress=False),
        "naive": rolling_evaluate(ModelSpec("naive"), d.linelist, None, start, end, window="2y", data=data,
                                  progress=False),
    }
    report = build_report(rolling)
    assert len(report.weeks) >= 200
    assert 90.0 <= report.models["baseline"].coverage_all <= 98.0
    assert report.models["naive"].rmae > 1.0


@pytest.mark.slow
def test_informative_signal_lowers_waic():
    d = _calibration_world()
    start = d.first_week + 104
    end = start + 39
    regressors = build_regressors(("gamma_d",), d.signals)
    runs = {
        name: rolling_evaluate(spec, d.linelist, None, start, end, window="2y", n_samples=200, seed=3,
                               progress=False)
        for name, spec in (("baseline", ModelSpec("baseline")),
                           ("google_dengue", ModelSpec("google_dengue", regressors)))
    }
    base = runs["baseline"].waic_by_week()
    signal = runs["google_dengue"].waic_by_week()
    wins = sum(signal[w] < base[w] for w in base)
    assert wins >= 0.7 * len(base)


@pytest.mark.slow
def test_true_regressor_beats_baseline_every_complete_year():
    d = _calibration_world()
    start = d.first_week + 104
    end = start + 155
    regressors = build_regressors(("gamma_d",), d.signals)
    rolling = {
        name: rolling_evaluate(spec, d.linelist, None, start, end, window="2y", n_samples=200, seed=5,
                               progress=False)
        for name, spec in (("baseline", ModelSpec("baseline")),
                           ("google_dengue", ModelSpec("google_dengue", regressors)))
    }
    report = build_report(rolling)
    signal, base = report.models["google_dengue"], report.models["baseline"]
    assert relative_metric(signal.mae, base.mae) < 1.0
    assert signal.rmae < 1.0

    complete = report.per_year[~report.per_year["partial"].astype(bool)]
    assert len(complete) >= 2
    assert (complete["google_dengue"] < 1.0).all()
