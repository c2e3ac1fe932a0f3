from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..dataset import ReportingTriangle
from ..epi_calendar import EpiWeek
from ..errors import InputError
from ..utils import nearest_rank, substream
from .inference import PosteriorSamples

NOWCAST_COLUMNS = ["year", "week", "observed_partial", "point", "lo80", "hi80", "lo95", "hi95"]
# percentile pairs of the reported intervals
INTERVALS = {"80": (10.0, 90.0), "95": (2.5, 97.5)}
# p of numpy's negative binomial must stay positive when lambda overflows
_MIN_SUCCESS = 1e-300


@dataclass(frozen=True, eq=False)
class NowcastResult:
    """
    Point nowcasts and prediction intervals for total weekly counts. ``sample_totals``
    is weeks x draws; the naive model carries a single degenerate draw per week.
    """
    model: str
    as_of: EpiWeek
    weeks: List[EpiWeek]
    observed_partial: np.ndarray
    point: np.ndarray
    lo80: np.ndarray
    hi80: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray
    sample_totals: np.ndarray
    has_intervals: bool = True
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.weeks)

    def interval_80(self, i: int):
        return float(self.lo80[i]), float(self.hi80[i])

    def interval_95(self, i: int):
        return float(self.lo95[i]), float(self.hi95[i])

    def index(self, week: EpiWeek) -> int:
        try:
            return self.weeks.index(week)
        except ValueError:
            raise InputError(f"no nowcast for week {week}") from None

    def select(self, weeks: Sequence[EpiWeek]) -> "NowcastResult":
        idx = [self.index(w) for w in weeks]
        return NowcastResult(model=self.model, as_of=self.as_of, weeks=[self.weeks[i] for i in idx],
                             observed_partial=self.observed_partial[idx], point=self.point[idx],
                             lo80=self.lo80[idx], hi80=self.hi80[idx], lo95=self.lo95[idx], hi95=self.hi95[idx],
                             sample_totals=self.sample_totals[idx], has_intervals=self.has_intervals,
                             extra=dict(self.extra))


def summarize(model: str, as_of: EpiWeek, weeks: List[EpiWeek], observed_partial: np.ndarray,
              sample_totals: np.ndarray, has_intervals: bool = True, extra: Optional[dict] = None) -> NowcastResult:
    """Nearest-rank median and interval bounds of the sampled totals of each week."""
    ordered = np.sort(sample_totals, axis=1)
    bounds = {q: nearest_rank(ordered, q, axis=1).astype(np.float64) for pair in INTERVALS.values() for q in pair}
    return NowcastResult(model=model, as_of=as_of, weeks=list(weeks),
                         observed_partial=np.asarray(observed_partial, dtype=np.int64),
                         point=nearest_rank(ordered, 50.0, axis=1).astype(np.float64),
                         lo80=bounds[10.0], hi80=bounds[90.0], lo95=bounds[2.5], hi95=bounds[97.5],
                         sample_totals=sample_totals, has_intervals=has_intervals, extra=extra or {})


def sample_cell(lam: np.ndarray, phi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One NB(lam[s], phi[s]) count per draw s."""
    p = np.clip(phi / (phi + lam), _MIN_SUCCESS, 1.0)
    return rng.negative_binomial(phi, p).astype(np.int64)


def nowcast(samples: PosteriorSamples, triangle: ReportingTriangle,
            weeks: Optional[Sequence[EpiWeek]] = None) -> NowcastResult:
    """
    Sampled weekly totals: observed cells plus an NB draw for every unobserved cell.
    Cell (t, tau) draws from substream (seed, 2, ordinal of t, tau).

    :param weeks: weeks to nowcast, the last ``d_max + 1`` triangle weeks by default
    """
    if triangle.first_week != samples.first_week or triangle.as_of != samples.as_of:
        raise InputError("samples were fitted on a different triangle")
    if weeks is None:
        weeks = triangle.weeks[max(0, triangle.n_weeks - triangle.d_max - 1):]
    weeks = list(weeks)
    lam, phi = samples.lam, samples.phi
    seed = 0 if samples.seed is None else samples.seed

    totals = np.zeros((len(weeks), len(samples)), dtype=np.int64)
    partial = np.zeros(len(weeks), dtype=np.int64)
    for i, week in enumerate(weeks):
        t = triangle.week_index(week)
        observed = triangle.observed_mask[t]
        partial[i] = int(triangle.counts[t, observed].sum())
        totals[i] = partial[i]
        for tau in np.nonzero(~observed)[0]:
            totals[i] += sample_cell(lam[:, t, tau], phi, substream(seed, 2, week.ordinal, int(tau)))
    return summarize(samples.spec.variant, triangle.as_of, weeks, partial, totals)


def naive_nowcast(triangle: ReportingTriangle, t: EpiWeek) -> NowcastResult:
    """Count known at ``as_of`` for the week before ``t``, with zero-width intervals."""
    previous = t - 1
    if not triangle.first_week <= previous <= triangle.as_of:
        raise InputError(f"week {previous} is outside triangle {triangle.first_week}..{triangle.as_of}")
    point = int(triangle.counts[triangle.week_index(previous)].sum())
    partial = int(triangle.counts[triangle.week_index(t)].sum()) if t <= triangle.as_of else 0
    return summarize("naive", triangle.as_of, [t], np.array([partial]), np.array([[point]], dtype=np.int64),
                     has_intervals=False)


def concat_results(results: Sequence[NowcastResult]) -> NowcastResult:
    """Stacks single-week results of consecutive refits; draws are truncated to the smallest count."""
    if not results:
        raise InputError("no nowcasts to combine")
    n_draws = min(r.sample_totals.shape[1] for r in results)
    stack = lambda name: np.concatenate([getattr(r, name) for r in results])
    return NowcastResult(model=results[0].model, as_of=results[-1].as_of,
                         weeks=[w for r in results for w in r.weeks],
                         observed_partial=stack("observed_partial"), point=stack("point"),
                         lo80=stack("lo80"), hi80=stack("hi80"), lo95=stack("lo95"), hi95=stack("hi95"),
                         sample_totals=np.concatenate([r.sample_totals[:, :n_draws] for r in results]),
                         has_intervals=all(r.has_intervals for r in results))


def nowcast_to_frame(result: NowcastResult) -> pd.DataFrame:
    return pd.DataFrame({
        "year": [w.year for w in result.weeks],
        "week": [w.week for w in result.weeks],
        "observed_partial": result.observed_partial,
        "point": result.point,
        "lo80": result.lo80,
        "hi80": result.hi80,
        "lo95": result.lo95,
        "hi95": result.hi95,
    }, columns=NOWCAST_COLUMNS)


def write_nowcast_csv(result: NowcastResult, path: Union[str, Path]):
    nowcast_to_frame(result).to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
