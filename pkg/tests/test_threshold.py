import math

import numpy as np
import pytest
from scipy import stats

from nowcast.epi_calendar import EpiWeek
from nowcast.errors import InputError
from nowcast.threshold import epidemic_threshold, epidemic_window, group_seasons, pre_epidemic_values


def plateau_season(c, peak=1000, lead=10, peak_weeks=10, length=52):
    season = np.zeros(length)
    season[:lead] = c
    season[lead:lead + peak_weeks] = peak
    return season


def brute_force_threshold(seasons, coverage=0.85, top_k=5, confidence=0.95):
    pooled = []
    for season in seasons:
        season = [int(v) for v in season]
        total = sum(season)
        best = None
        for start in range(len(season)):
            for end in range(start + 1, len(season) + 1):
                if 100 * sum(season[start:end]) >= round(100 * coverage) * total:
                    if best is None or end - start < best[1] - best[0]:
                        best = (start, end)
                    break
        pooled += sorted(season[:best[0]], reverse=True)[:top_k]
    logs = [math.log(v) for v in pooled if v > 0]
    n = len(logs)
    mean = sum(logs) / n
    sd = math.sqrt(sum((x - mean) ** 2 for x in logs) / (n - 1))
    return math.exp(mean + stats.t.ppf(confidence, n - 1) * sd / math.sqrt(n))


def test_identical_plateaus_give_the_plateau():
    seasons = [plateau_season(20), plateau_season(20)]
    assert epidemic_window(seasons[0], 0.85) == (10, 19)
    assert pre_epidemic_values(seasons[0]).tolist() == [20.0] * 5
    assert epidemic_threshold(seasons) == pytest.approx(20.0, rel=1e-12)


def test_matches_brute_force_on_random_histories():
    rng = np.random.default_rng(17)
    for _ in range(20):
        seasons = []
        for _ in range(rng.integers(2, 5)):
            lead = int(rng.integers(8, 20))
            season = rng.integers(1, 60, size=52).astype(float)
            season[lead:lead + 12] += rng.integers(200, 3000, size=12)
            seasons.append(season)
        assert epidemic_threshold(seasons) == pytest.approx(brute_force_threshold(seasons), rel=1e-9)


def test_earliest_window_on_ties():
    assert epidemic_window(np.array([0, 5, 0, 5, 0]), 0.5) == (1, 2)


def test_single_pooled_value():
    a = np.array([0, 0, 7, 100, 0])
    b = np.array([0, 0, 0, 100, 0])
    assert epidemic_threshold([a, b], top_k=1) == 7.0


@pytest.mark.parametrize("seasons", [
    [plateau_season(20)],
    [plateau_season(20), np.zeros(52)],
    [plateau_season(20), -plateau_season(20)],
    [np.r_[1000.0, np.zeros(51)], np.r_[500.0, np.zeros(51)]],
])
def test_threshold_errors(seasons):
    with pytest.raises(InputError):
        epidemic_threshold(seasons)


def test_group_seasons_drops_partial_seasons():
    counts = np.arange(150, dtype=float)
    seasons = group_seasons(EpiWeek(2012, 40), counts)
    assert [s.size for s in seasons] == [52, 53]
    assert seasons[0][0] == 13.0
    with pytest.raises(InputError):
        group_seasons(EpiWeek(2012, 40), counts, season_start_week=60)
