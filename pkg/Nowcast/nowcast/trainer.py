from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from tqdm import tqdm

from .config.run_config import WINDOWS, DataConfig, InferenceConfig, PriorConfig
from .dataset import LineList, build_triangle, select_max_delay
from .epi_calendar import EpiWeek, parse_epi_week, week_range
from .errors import DataError, FitError, InputError
from .metrics import waic
from .models.delay_model import ModelSpec
from .models.inference import fit, pointwise_log_likelihood
from .models.nowcaster import NowcastResult, concat_results, naive_nowcast, nowcast
from .signals import RegressorSet, align


@dataclass
class RollingResult:
    """
    One model's weekly refits. ``truths`` is NaN where the week is not yet fully
    reported at the end of the data; those weeks stay out of the metrics.
    """
    model: str
    window: str
    weeks: List[EpiWeek] = field(default_factory=list)
    results: List[NowcastResult] = field(default_factory=list)
    truths: List[float] = field(default_factory=list)
    waic: List[Optional[float]] = field(default_factory=list)
    d_max: List[int] = field(default_factory=list)
    recent: Dict[EpiWeek, NowcastResult] = field(default_factory=dict)
    gaps: List[Tuple[EpiWeek, str]] = field(default_factory=list)
    leakage_violations: int = 0
    seed: Optional[int] = None

    def __len__(self):
        return len(self.weeks)

    @property
    def complete(self) -> np.ndarray:
        return np.isfinite(np.asarray(self.truths, dtype=np.float64))

    def combined(self) -> NowcastResult:
        return concat_results(self.results)

    def waic_by_week(self) -> Dict[EpiWeek, float]:
        return {w: v for w, v in zip(self.weeks, self.waic) if v is not None}


def window_start(t: EpiWeek, window: str, training_start: EpiWeek) -> EpiWeek:
    """First training week for a fit at ``t``: the window reaches back from t, never before the training start."""
    if window not in WINDOWS:
        raise InputError(f"unknown window {window!r}, expected one of {', '.join(WINDOWS)}")
    length = WINDOWS[window]
    if length is None:
        return training_start
    return max(training_start, t - (length - 1))


def week_seed(seed: int, t: EpiWeek) -> int:
    return int(np.random.SeedSequence([int(seed), t.ordinal]).generate_state(1)[0])


def rolling_evaluate(spec: ModelSpec, linelist: LineList, regressors: Optional[RegressorSet], start: EpiWeek,
                     end: EpiWeek, window: str = "full", n_samples: int = 1000, seed: int = 0,
                     data: DataConfig = None, priors: PriorConfig = None, inference: InferenceConfig = None,
                     recent_weeks: int = 0, data_end: Optional[EpiWeek] = None,
                     progress: bool = True) -> RollingResult:
    """
    Refits ``spec`` every week from ``start`` to ``end`` on what was known at the end
    of that week and nowcasts it. D_max is re-selected on each training slice, so
    ``spec.d_max`` is ignored.

    :param data_end: last week of data; weeks within ``completeness_horizon`` of it have no truth
    """
    data = data or DataConfig()
    regressors = spec.regressors if regressors is None else regressors
    if end < start:
        raise InputError(f"empty evaluation range {start}..{end}")
    if len(linelist) == 0:
        raise DataError("line list is empty")
    data_end = data_end or linelist.last_entry_week()
    if end > data_end:
        raise InputError(f"evaluation end {end} lies beyond the last week of data {data_end}")
    training_start = parse_epi_week(data.training_start) if data.training_start else linelist.first_week()
    horizon = data.max_delay_cap if data.completeness_horizon is None else data.completeness_horizon

    out = RollingResult(model=spec.variant, window=window, seed=seed)
    finals = linelist.final_counts(start, end)
    for i, t in enumerate(tqdm(week_range(start, end), desc=f"rolling {spec.variant}", disable=not progress)):
        first_week = window_start(t, window, training_start)
        n_weeks = t - first_week + 1
        if n_weeks < max(data.min_training_weeks, 2):
            out.gaps.append((t, f"only {max(n_weeks, 0)} training week(s)"))
            continue

        view = linelist.as_of(t).notified_between(first_week, t)
        leaked = int((view.entry_ordinals > t.ordinal).sum())
        out.leakage_violations += leaked
        assert leaked == 0, f"{leaked} case(s) entered after {t} reached its training slice"
        try:
            d_max = select_max_delay(view, data.max_delay_cap, data.dmax_floor, data.dmax_coverage)
        except DataError as e:
            out.gaps.append((t, str(e)))
            continue
        if n_weeks <= d_max:
            out.gaps.append((t, f"{n_weeks} training weeks do not cover d_max {d_max}"))
            continue
        triangle = build_triangle(view, t, first_week, d_max)

        weekly_waic = None
        if spec.is_naive:
            result = naive_nowcast(triangle, t)
        else:
            X = align(regressors, triangle.weeks, fill=data.signal_fill) if len(regressors) else None
            try:
                samples = fit(ModelSpec(spec.variant, regressors, d_max), triangle, X, n_samples,
                              week_seed(seed, t), priors=priors, inference=inference)
            except FitError as e:
                logger.warning(f"{spec.variant} fit at {t} failed: {e}")
                out.gaps.append((t, f"fit failed: {e}"))
                continue
            targets = triangle.weeks[max(0, triangle.n_weeks - 1 - recent_weeks):]
            full = nowcast(samples, triangle, targets)
            result = full.select([t])
            if recent_weeks:
                out.recent[t] = full
            weekly_waic = waic(pointwise_log_likelihood(samples, triangle))

        out.weeks.append(t)
        out.results.append(result)
        out.d_max.append(d_max)
        out.waic.append(weekly_waic)
        out.truths.append(float(finals[i]) if t + horizon <= data_end else float("nan"))

    if out.gaps:
        logger.warning(f"{spec.variant}: {len(out.gaps)} of {end - start + 1} week(s) skipped")
    logger.info(f"{spec.variant}: {len(out.weeks)} weekly nowcasts {start}..{end} ({window} window), "
                f"{int(out.complete.sum())} fully reported")
    return out
