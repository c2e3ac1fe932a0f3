import math
from typing import List, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import stats

from .epi_calendar import EpiWeek, week_range
from .errors import InputError

DEFAULT_THRESHOLD = 550.0


def group_seasons(first_week: EpiWeek, counts: Sequence[float], season_start_week: int = 1) -> List[np.ndarray]:
    """
    Splits consecutive weekly counts starting at ``first_week`` into complete seasons,
    each opening at ``season_start_week`` of a year. Leading and trailing partial
    seasons are dropped.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if not 1 <= season_start_week <= 52:
        raise InputError(f"season start week must lie in 1..52, got {season_start_week}")
    if counts.size == 0:
        return []
    weeks = week_range(first_week, first_week + (counts.size - 1))
    starts = [i for i, w in enumerate(weeks) if w.week == season_start_week]
    seasons = [counts[a:b] for a, b in zip(starts, starts[1:])]
    logger.debug(f"grouped {counts.size} weeks into {len(seasons)} complete season(s)")
    return seasons


def epidemic_window(season: np.ndarray, coverage: float) -> Tuple[int, int]:
    """Shortest contiguous [start, end) holding at least ``coverage`` of the season's cases, earliest on ties."""
    season = np.asarray(season, dtype=np.float64)
    total = season.sum()
    target = coverage * total - 1e-9 * max(total, 1.0)
    cumulative = np.concatenate([[0.0], np.cumsum(season)])
    n = season.size
    for length in range(1, n + 1):
        sums = cumulative[length:] - cumulative[:n - length + 1]
        hits = np.flatnonzero(sums >= target)
        if hits.size:
            return int(hits[0]), int(hits[0]) + length
    return 0, n


def pre_epidemic_values(season: np.ndarray, coverage: float = 0.85, top_k: int = 5) -> np.ndarray:
    start, _ = epidemic_window(season, coverage)
    before = np.sort(np.asarray(season, dtype=np.float64)[:start])[::-1]
    return before[:top_k]


def epidemic_threshold(seasons: Sequence[Sequence[float]], coverage: float = 0.85, top_k: int = 5,
                       confidence: float = 0.95) -> float:
    """
    Simplified moving-epidemic-method threshold: the upper one-sided ``confidence``
    limit of the geometric mean of the ``top_k`` largest pre-epidemic weekly counts
    pooled over seasons. Zero counts carry no log and are left out of the pool.
    """
    seasons = [np.asarray(s, dtype=np.float64) for s in seasons]
    if len(seasons) < 2:
        raise InputError(f"need at least two complete seasons, got {len(seasons)}")
    if not 0.0 < coverage < 1.0 or not 0.0 < confidence < 1.0 or top_k < 1:
        raise InputError("need 0 < coverage < 1, 0 < confidence < 1 and top_k >= 1")
    for i, season in enumerate(seasons):
        if season.size == 0 or not season.any():
            raise InputError(f"season {i} has no cases")
        if (season < 0).any():
            raise InputError(f"season {i} has negative counts")

    pooled = np.concatenate([pre_epidemic_values(s, coverage, top_k) for s in seasons])
    pooled = pooled[pooled > 0]
    if pooled.size == 0:
        raise InputError("no pre-epidemic activity to set a threshold from")

    logs = np.log(pooled)
    n = logs.size
    mean = float(logs.mean())
    if n == 1:
        return float(pooled[0])
    sd = float(logs.std(ddof=1))
    if sd == 0.0:
        return math.exp(mean)
    return math.exp(mean + stats.t.ppf(confidence, n - 1) * sd / math.sqrt(n))
