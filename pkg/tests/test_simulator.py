import json

import numpy as np
import pandas as pd
import pytest

from nowcast.dataset import build_triangle, delay_completeness_series, observation_mask
from nowcast.errors import InputError
from nowcast.simulator import (DelayRegime, SignalLaw, SimConfig, load_sim_config, replay_as_of, simulate,
                               validate_sim_config)


def test_same_seed_same_world(small_scenario):
    a, b = simulate(small_scenario), simulate(small_scenario)
    assert np.array_equal(a.truths, b.truths)
    assert np.array_equal(a.matrix, b.matrix)
    assert np.array_equal(a.linelist.entry_dates, b.linelist.entry_dates)
    assert a.signals["google_dengue"].values == b.signals["google_dengue"].values


def test_cases_are_conserved(small_scenario):
    d = simulate(small_scenario)
    assert np.array_equal(d.matrix.sum(axis=1), d.truths)
    assert len(d.linelist) == int(d.truths.sum())
    assert np.array_equal(d.linelist.final_counts(d.first_week, d.last_week), d.truths)
    assert (d.linelist.entry_dates >= d.linelist.notification_dates).all()


def test_point_mass_at_zero():
    d = simulate(SimConfig(n_weeks=30, delay_regimes=[DelayRegime(law=[1.0])], seed=2))
    assert d.max_delay == 0
    assert not d.linelist.delays.any()
    assert (d.linelist.entry_dates >= d.linelist.notification_dates).all()


def test_empirical_delay_law():
    d = simulate(SimConfig(n_weeks=500, amplitudes=[], delay_regimes=[DelayRegime(law=[0.25, 0.25, 0.5])], seed=5))
    shares = np.bincount(d.linelist.delays, minlength=3) / len(d.linelist)
    assert shares == pytest.approx([0.25, 0.25, 0.5], abs=0.03)


def test_regime_shift_moves_completeness():
    cfg = SimConfig(n_weeks=200, amplitudes=[],
                    delay_regimes=[DelayRegime(start=0, law=[1.0]), DelayRegime(start=100, law=[0.0, 0.0, 0.0, 1.0])],
                    seed=8)
    d = simulate(cfg)
    before = delay_completeness_series(d.linelist, 0.95, (d.first_week, d.first_week + 99))
    after = delay_completeness_series(d.linelist, 0.95, (d.first_week + 100, d.last_week))
    assert before.mean == pytest.approx(0.0, abs=0.5)
    assert after.mean == pytest.approx(3.0, abs=0.5)
    assert d.regime_index(99) == 0 and d.regime_index(100) == 1


def test_replay_as_of(small_scenario):
    d = simulate(small_scenario)
    as_of = d.first_week + 30
    seen = replay_as_of(d, as_of)
    assert (seen.entry_ordinals <= as_of.ordinal).all()
    tri = build_triangle(seen, as_of, d.first_week, d.max_delay)
    mask = observation_mask(31, d.max_delay)
    assert np.array_equal(tri.counts, np.where(mask, d.matrix[:31], 0))
    assert len(replay_as_of(d, d.final_week)) == len(d.linelist)
    with pytest.raises(InputError):
        replay_as_of(d, d.first_week - 1)
    with pytest.raises(InputError):
        replay_as_of(d, d.final_week + 1)


def test_signal_tracks_truth():
    cfg = SimConfig(n_weeks=312, amplitudes=[1500.0, 3000.0, 800.0, 2500.0, 1200.0, 2000.0],
                    signals=[SignalLaw(name="twitter", coefficient=0.7, intercept=1.0, noise_sd=0.2)], seed=3)
    d = simulate(cfg)
    signal = np.array(list(d.signals["twitter"].values.values()))
    slope, _ = np.polyfit(np.log(d.truths + 1.0), np.log(signal), 1)
    assert slope == pytest.approx(0.7, rel=0.2)
    assert d.signals["twitter"].kind == "count"


def test_lagged_signal_without_noise():
    cfg = SimConfig(n_weeks=20, signals=[SignalLaw(coefficient=1.0, noise_sd=0.0, lag=2)], seed=1)
    d = simulate(cfg)
    values = list(d.signals["google_dengue"].values.values())
    assert values[5] == pytest.approx(d.truths[3] + 1.0)
    assert values[0] == pytest.approx(d.truths[0] + 1.0)


def test_leading_signal_without_noise():
    cfg = SimConfig(n_weeks=20, signals=[SignalLaw(coefficient=1.0, noise_sd=0.0, lag=-3)], seed=1)
    d = simulate(cfg)
    values = list(d.signals["google_dengue"].values.values())
    assert values[5] == pytest.approx(d.truths[8] + 1.0)
    assert values[-1] == pytest.approx(d.truths[-1] + 1.0)


@pytest.mark.parametrize("change", [
    {"delay_regimes": [DelayRegime(law=[0.5, 0.4])]},
    {"delay_regimes": [DelayRegime(start=3)]},
    {"delay_regimes": [DelayRegime(), DelayRegime(start=5), DelayRegime(start=5)]},
    {"n_weeks": 0},
    {"dispersion": -1.0},
    {"signals": [SignalLaw(), SignalLaw()]},
    {"first_week": "yesterday"},
    {"n_weeks": 120, "amplitudes": [900.0, 1200.0]},
    {"n_weeks": 20, "signals": [SignalLaw(lag=-20)]},
])
def test_invalid_scenarios(change):
    cfg = SimConfig(**change)
    with pytest.raises(InputError):
        validate_sim_config(cfg)


def test_write_and_reload(small_scenario, tmp_path):
    d = simulate(small_scenario)
    d.write(tmp_path)
    assert load_sim_config(tmp_path / "scenario.json") == small_scenario
    truth = pd.read_csv(tmp_path / "truth.csv")
    assert list(truth.columns) == ["year", "week", "total"]
    assert truth["total"].tolist() == d.truths.tolist()
    assert (tmp_path / "linelist.csv").exists() and (tmp_path / "signal_google_dengue.csv").exists()
    assert json.loads((tmp_path / "scenario.json").read_text())["seed"] == 11
    with pytest.raises(InputError):
        load_sim_config(tmp_path / "missing.json")
