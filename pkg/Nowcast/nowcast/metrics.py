import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.special import logsumexp

from .epi_calendar import EpiWeek, weeks_in_year
from .errors import InputError, MetricError
from .models.nowcaster import NowcastResult
from .utils import ensure_dir, save_json

if TYPE_CHECKING:
    from .trainer import RollingResult

EPIDEMIC_THRESHOLD = 550.0
HIGH_THRESHOLD = 4000.0
REGIMES = ("below", "epidemic", "high")


def _pair(points, truths) -> Tuple[np.ndarray, np.ndarray]:
    points = np.asarray(points, dtype=np.float64).reshape(-1)
    truths = np.asarray(truths, dtype=np.float64).reshape(-1)
    if points.shape != truths.shape:
        raise InputError(f"length mismatch: {points.size} estimates vs {truths.size} truths")
    return points, truths


def mae(points: Sequence[float], truths: Sequence[float]) -> float:
    points, truths = _pair(points, truths)
    if points.size == 0:
        raise InputError("MAE of an empty sequence")
    return float(np.mean(np.abs(points - truths)))


def epidemic_mae(points: Sequence[float], truths: Sequence[float], threshold: float = EPIDEMIC_THRESHOLD) -> float:
    """MAE over the weeks whose final count is at or above ``threshold``; NaN when there are none."""
    points, truths = _pair(points, truths)
    keep = truths >= threshold
    return mae(points[keep], truths[keep]) if keep.any() else float("nan")


def relative_metric(model_value: float, reference_value: float) -> float:
    if not reference_value > 0:
        raise MetricError(f"reference value must be positive, got {reference_value}")
    return float(model_value) / float(reference_value)


def _as_results(results) -> List[NowcastResult]:
    return [results] if isinstance(results, NowcastResult) else list(results)


def mpi(results: Union[NowcastResult, Sequence[NowcastResult]]) -> float:
    """Mean width of the 95% prediction interval."""
    results = _as_results(results)
    widths = np.concatenate([r.hi95 - r.lo95 for r in results]) if results else np.zeros(0)
    if widths.size == 0:
        raise InputError("MPI of an empty result set")
    return float(widths.mean())


def coverage(results: Union[NowcastResult, Sequence[NowcastResult]], truths: Sequence[float],
             level: Union[str, int] = "95", threshold_split: Optional[float] = None) -> Dict[str, Optional[float]]:
    """
    Percent of weeks whose truth lies in the closed interval at ``level`` (80 or 95).
    With ``threshold_split`` also reports the weeks at or above it (``epidemic``)
    and below it (``nonepidemic``); a regime without weeks maps to None.
    """
    results = _as_results(results)
    level = str(level)
    if level not in ("80", "95"):
        raise InputError(f"coverage level must be 80 or 95, got {level}")
    lo = np.concatenate([getattr(r, f"lo{level}") for r in results]) if results else np.zeros(0)
    hi = np.concatenate([getattr(r, f"hi{level}") for r in results]) if results else np.zeros(0)
    lo, truths = _pair(lo, truths)
    inside = (truths >= lo) & (truths <= hi)

    percent = lambda mask: float(100.0 * inside[mask].mean()) if mask.any() else None
    out = {"all": percent(np.ones_like(inside))}
    if threshold_split is not None:
        out["epidemic"] = percent(truths >= threshold_split)
        out["nonepidemic"] = percent(truths < threshold_split)
    return out


def waic(loglik_matrix: np.ndarray) -> float:
    """
    -2 * sum_i (lppd_i - p_i) over the columns of a draws x cells matrix; p_i is the
    unbiased variance of column i, zero with a single draw.
    """
    ll = np.asarray(loglik_matrix, dtype=np.float64)
    if ll.ndim != 2 or ll.shape[0] < 1 or ll.shape[1] < 1:
        raise InputError(f"WAIC needs a non-empty draws x cells matrix, got shape {ll.shape}")
    if not np.isfinite(ll).all():
        raise InputError("WAIC needs finite log-likelihoods")
    n_draws = ll.shape[0]
    lppd = logsumexp(ll, axis=0) - math.log(n_draws)
    penalty = ll.var(axis=0, ddof=1) if n_draws > 1 else np.zeros(ll.shape[1])
    return float(-2.0 * np.sum(lppd - penalty))


def log_error(estimate: float, truth: float) -> float:
    if not estimate > 0 or not truth > 0:
        raise MetricError(f"logarithmic error needs positive values, got estimate {estimate} and truth {truth}")
    return math.log10(estimate / truth)


def regime_of(truth: float, thresholds: Tuple[float, float] = (EPIDEMIC_THRESHOLD, HIGH_THRESHOLD)) -> str:
    epidemic, high = thresholds
    if truth >= high:
        return "high"
    return "epidemic" if truth >= epidemic else "below"


def regime_split(weeks: Sequence[EpiWeek], truths: Sequence[float],
                 thresholds: Tuple[float, float] = (EPIDEMIC_THRESHOLD, HIGH_THRESHOLD)) -> Dict[str, List[EpiWeek]]:
    """below < 550 <= epidemic < 4000 <= high"""
    weeks = list(weeks)
    if len(weeks) != len(truths):
        raise InputError(f"length mismatch: {len(weeks)} weeks vs {len(truths)} truths")
    out = {name: [] for name in REGIMES}
    for week, truth in zip(weeks, truths):
        out[regime_of(truth, thresholds)].append(week)
    return out


def log_error_sets(points: Sequence[float], truths: Sequence[float],
                   thresholds: Tuple[float, float] = (EPIDEMIC_THRESHOLD, HIGH_THRESHOLD)):
    """
    Logarithmic errors grouped by regime, plus the number of weeks left out because
    the truth or the estimate was zero.
    """
    points, truths = _pair(points, truths)
    sets = {name: [] for name in REGIMES}
    excluded = 0
    for point, truth in zip(points, truths):
        if point <= 0 or truth <= 0:
            excluded += 1
            continue
        sets[regime_of(truth, thresholds)].append(log_error(point, truth))
    return {name: np.array(v) for name, v in sets.items()}, excluded


def per_year_table(results: Mapping[str, Tuple[Sequence[EpiWeek], Sequence[float]]], truths: Mapping[EpiWeek, float],
                   reference: str = "baseline") -> pd.DataFrame:
    """
    Relative MAE of every model against the reference's MAE of the same epidemiological
    year. ``results`` maps a model to its (weeks, points); years the evaluation does not
    cover in full are flagged ``partial``.
    """
    if reference not in results:
        raise InputError(f"reference model {reference!r} has no results")
    frames = []
    for model, (weeks, points) in results.items():
        frames.append(pd.DataFrame({"model": model, "year": [w.year for w in weeks], "point": list(points),
                                    "truth": [truths[w] for w in weeks]}))
    frame = pd.concat(frames, ignore_index=True)
    frame["abs_error"] = (frame["point"] - frame["truth"]).abs()
    table = frame.pivot_table(index="year", columns="model", values="abs_error", aggfunc="mean")

    rows = []
    for year, row in table.iterrows():
        entry = {"year": int(year)}
        for model in results:
            value = row.get(model, float("nan"))
            entry[model] = relative_metric(value, row[reference]) if row[reference] > 0 else float("nan")
        n_weeks = int((frame[frame["model"] == reference]["year"] == year).sum())
        entry["weeks"] = n_weeks
        entry["partial"] = n_weeks < weeks_in_year(int(year))
        rows.append(entry)
    return pd.DataFrame(rows, columns=["year", *results, "weeks", "partial"])


@dataclass
class ModelMetrics:
    mae: float
    rmae: float
    epidemic_mae: float
    mpi: Optional[float] = None
    rmpi: Optional[float] = None
    coverage_all: Optional[float] = None
    coverage_epidemic: Optional[float] = None
    coverage_nonepidemic: Optional[float] = None
    coverage80_all: Optional[float] = None
    waic_weekly: List[Optional[float]] = field(default_factory=list)
    waic_relative: List[Optional[float]] = field(default_factory=list)
    log_errors: Dict[str, np.ndarray] = field(default_factory=dict)
    log_errors_excluded: int = 0
    per_year: Dict[int, float] = field(default_factory=dict)
    n_weeks: int = 0
    gaps: int = 0
    leakage_violations: int = 0


@dataclass
class EvaluationReport:
    reference: str
    thresholds: Tuple[float, float]
    weeks: List[EpiWeek]
    truths: np.ndarray
    models: Dict[str, ModelMetrics]
    per_year: pd.DataFrame
    errors: pd.DataFrame
    waic: pd.DataFrame

    def to_dict(self) -> dict:
        out = {"reference": self.reference,
               "thresholds": {"epidemic": self.thresholds[0], "high": self.thresholds[1],
                              "boundaries": "below < epidemic <= truth < high <= truth"},
               "weeks": [str(w) for w in self.weeks],
               "models": {}}
        for name, m in self.models.items():
            out["models"][name] = {
                "mae": m.mae, "rmae": m.rmae, "epidemic_mae": _nan_to_none(m.epidemic_mae),
                "mpi": m.mpi, "rmpi": m.rmpi,
                "coverage_all": m.coverage_all, "coverage_epidemic": m.coverage_epidemic,
                "coverage_nonepidemic": m.coverage_nonepidemic, "coverage80_all": m.coverage80_all,
                "waic_weekly": m.waic_weekly, "waic_relative": m.waic_relative,
                "log_error_counts": {k: int(v.size) for k, v in m.log_errors.items()},
                "log_errors_excluded": m.log_errors_excluded,
                "per_year": {str(k): _nan_to_none(v) for k, v in m.per_year.items()},
                "n_weeks": m.n_weeks, "gaps": m.gaps, "leakage_violations": m.leakage_violations,
            }
        return out


def _nan_to_none(value):
    return None if value is None or (isinstance(value, float) and math.isnan(value)) else value


def build_report(rolling: Mapping[str, "RollingResult"], reference: str = "baseline",
                 epidemic_threshold: float = EPIDEMIC_THRESHOLD,
                 high_threshold: float = HIGH_THRESHOLD) -> EvaluationReport:
    """
    Compares models on the fully reported weeks every one of them nowcast. Models
    without intervals (naive) get no MPI or coverage; WAIC is also reported relative
    to the baseline of the same week.
    """
    if reference not in rolling:
        raise InputError(f"reference model {reference!r} was not evaluated")
    common = None
    for r in rolling.values():
        done = {w for w, ok in zip(r.weeks, r.complete) if ok}
        common = done if common is None else common & done
    weeks = sorted(common or [])
    if not weeks:
        raise MetricError("no fully reported week was nowcast by every model")

    truth_of = {}
    picked = {}
    for name, r in rolling.items():
        combined = r.combined()
        idx = [r.weeks.index(w) for w in weeks]
        picked[name] = combined.select(weeks)
        truth_of.update({r.weeks[i]: r.truths[i] for i in idx})
    truths = np.array([truth_of[w] for w in weeks])
    thresholds = (epidemic_threshold, high_threshold)

    ref = picked[reference]
    ref_mae = mae(ref.point, truths)
    ref_mpi = mpi(ref) if ref.has_intervals else None
    baseline_waic = rolling["baseline"].waic_by_week() if "baseline" in rolling else {}

    models, error_rows, waic_rows = {}, [], []
    for name, r in rolling.items():
        result = picked[name]
        m = ModelMetrics(mae=mae(result.point, truths), rmae=0.0,
                         epidemic_mae=epidemic_mae(result.point, truths, epidemic_threshold),
                         n_weeks=len(weeks), gaps=len(r.gaps), leakage_violations=r.leakage_violations)
        m.rmae = 1.0 if name == reference else relative_metric(m.mae, ref_mae)
        if result.has_intervals:
            m.mpi = mpi(result)
            if ref_mpi is not None:
                m.rmpi = 1.0 if name == reference else relative_metric(m.mpi, ref_mpi)
            c95 = coverage(result, truths, "95", threshold_split=epidemic_threshold)
            m.coverage_all = c95["all"]
            m.coverage_epidemic, m.coverage_nonepidemic = c95["epidemic"], c95["nonepidemic"]
            m.coverage80_all = coverage(result, truths, "80")["all"]
        m.log_errors, m.log_errors_excluded = log_error_sets(result.point, truths, thresholds)

        by_week = r.waic_by_week()
        for w in r.weeks:
            if w not in by_week:
                continue
            relative = by_week[w] / baseline_waic[w] if baseline_waic.get(w) else None
            m.waic_weekly.append(by_week[w])
            m.waic_relative.append(relative)
            waic_rows.append({"model": name, "year": w.year, "week": w.week, "waic": by_week[w],
                              "waic_relative": relative})
        for i, w in enumerate(weeks):
            point, truth = float(result.point[i]), float(truths[i])
            error_rows.append({
                "model": name, "year": w.year, "week": w.week, "truth": truth, "point": point,
                "lo80": result.lo80[i], "hi80": result.hi80[i], "lo95": result.lo95[i], "hi95": result.hi95[i],
                "abs_error": abs(point - truth),
                "log_error": log_error(point, truth) if point > 0 and truth > 0 else float("nan"),
                "regime": regime_of(truth, thresholds)})
        models[name] = m

    per_year = per_year_table({name: (weeks, picked[name].point) for name in rolling}, truth_of, reference)
    for name, m in models.items():
        m.per_year = {int(y): float(v) for y, v in zip(per_year["year"], per_year[name])}
    for name, m in models.items():
        logger.info(f"{name}: MAE {m.mae:.1f} (relative {m.rmae:.3f}) over {m.n_weeks} weeks")
    return EvaluationReport(reference=reference, thresholds=thresholds, weeks=weeks, truths=truths, models=models,
                            per_year=per_year, errors=pd.DataFrame(error_rows),
                            waic=pd.DataFrame(waic_rows, columns=["model", "year", "week", "waic", "waic_relative"]))


def write_report(report: EvaluationReport, out_dir: Union[str, Path]):
    """metrics.json plus errors.csv, waic.csv and per_year.csv"""
    out_dir = ensure_dir(str(out_dir))
    save_json(report.to_dict(), str(Path(out_dir) / "metrics.json"))
    report.errors.to_csv(Path(out_dir) / "errors.csv", index=False, lineterminator="\n", float_format="%.10g")
    report.waic.to_csv(Path(out_dir) / "waic.csv", index=False, lineterminator="\n", float_format="%.10g")
    report.per_year.to_csv(Path(out_dir) / "per_year.csv", index=False, lineterminator="\n", float_format="%.10g")
    logger.info(f"wrote evaluation report to {out_dir}")
