import numpy as np
import pytest

from nowcast.config.run_config import InferenceConfig, PriorConfig
from nowcast.dataset import LineList
from nowcast.epi_calendar import EpiWeek
from nowcast.simulator import DelayRegime, SimConfig, SignalLaw


def linelist_from_matrix(first_week: EpiWeek, matrix) -> LineList:
    """Cases notified on the Sunday of week t and entered tau weeks later, one per count."""
    matrix = np.asarray(matrix, dtype=np.int64)
    t, tau = np.nonzero(matrix)
    reps = matrix[t, tau]
    t, tau = np.repeat(t, reps), np.repeat(tau, reps)
    start = np.datetime64(first_week.start_date(), "D")
    notification = start + (7 * t).astype("timedelta64[D]")
    entry = notification + (7 * tau).astype("timedelta64[D]")
    return LineList(notification, entry)


@pytest.fixture
def make_linelist():
    return linelist_from_matrix


@pytest.fixture
def fast_inference():
    return InferenceConfig(grid_points=3, map_sweeps=2)


@pytest.fixture
def priors():
    return PriorConfig()


@pytest.fixture
def small_scenario():
    """Two seasons, a short delay law within the d_max floor and one informative signal."""
    return SimConfig(
        first_week="2012-W01",
        n_weeks=104,
        baseline=80.0,
        amplitudes=[900.0, 1400.0],
        peak_width=4.0,
        dispersion=40.0,
        delay_regimes=[DelayRegime(start=0, law=[0.3, 0.3, 0.2, 0.1, 0.05, 0.05])],
        signals=[SignalLaw(name="google_dengue", coefficient=0.8, intercept=-6.0, noise_sd=0.05)],
        seed=11,
    )
