import datetime
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from .epi_calendar import EpiWeek, to_epi_week, week_ordinals, week_range
from .errors import DataError, InputError

LINELIST_COLUMNS = ["notification_date", "entry_date"]


@dataclass(frozen=True)
class CaseRecord:
    """ One suspected case: the day the doctor notified it and the day it entered the system """
    notification_date: datetime.date
    entry_date: datetime.date

    def __post_init__(self):
        if self.entry_date < self.notification_date:
            raise DataError(f"case entered on {self.entry_date} before its notification on {self.notification_date}")


def delay_weeks(c: CaseRecord) -> int:
    if c.entry_date < c.notification_date:
        raise DataError(f"case entered on {c.entry_date} before its notification on {c.notification_date}")
    return to_epi_week(c.entry_date) - to_epi_week(c.notification_date)


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class LineList:
    """
    Column store of case records. Dates are kept as ``datetime64[D]`` arrays and the
    epidemiological week ordinals of both dates are cached on construction.
    """
    notification_dates: np.ndarray = field(default_factory=lambda: np.array([], dtype="datetime64[D]"))
    entry_dates: np.ndarray = field(default_factory=lambda: np.array([], dtype="datetime64[D]"))

    def __post_init__(self):
        notification = _readonly(np.asarray(self.notification_dates, dtype="datetime64[D]"))
        entry = _readonly(np.asarray(self.entry_dates, dtype="datetime64[D]"))
        if notification.shape != entry.shape or notification.ndim != 1:
            raise InputError("notification and entry dates must be 1-d arrays of equal length")
        bad = np.flatnonzero(entry < notification)
        if bad.size:
            raise DataError(f"{bad.size} case(s) entered before notification, first at record {int(bad[0])}")
        object.__setattr__(self, "notification_dates", notification)
        object.__setattr__(self, "entry_dates", entry)
        object.__setattr__(self, "_notification_ordinals", _readonly(week_ordinals(notification)))
        object.__setattr__(self, "_entry_ordinals", _readonly(week_ordinals(entry)))

    @classmethod
    def from_records(cls, records) -> "LineList":
        records = list(records)
        return cls(np.array([r.notification_date for r in records], dtype="datetime64[D]"),
                   np.array([r.entry_date for r in records], dtype="datetime64[D]"))

    def __len__(self):
        return int(self.notification_dates.shape[0])

    @property
    def records(self) -> Tuple[CaseRecord, ...]:
        return tuple(CaseRecord(n.item(), e.item()) for n, e in zip(self.notification_dates, self.entry_dates))

    @property
    def notification_ordinals(self) -> np.ndarray:
        return self._notification_ordinals

    @property
    def entry_ordinals(self) -> np.ndarray:
        return self._entry_ordinals

    @property
    def delays(self) -> np.ndarray:
        return self._entry_ordinals - self._notification_ordinals

    def first_week(self) -> EpiWeek:
        if len(self) == 0:
            raise DataError("line list is empty")
        return EpiWeek.from_ordinal(int(self._notification_ordinals.min()))

    def last_entry_week(self) -> EpiWeek:
        if len(self) == 0:
            raise DataError("line list is empty")
        return EpiWeek.from_ordinal(int(self._entry_ordinals.max()))

    def subset(self, mask: np.ndarray) -> "LineList":
        return LineList(self.notification_dates[mask], self.entry_dates[mask])

    def as_of(self, week: EpiWeek) -> "LineList":
        """What an analyst could see at the end of ``week``."""
        return self.subset(self._entry_ordinals <= week.ordinal)

    def notified_between(self, first: EpiWeek, last: EpiWeek) -> "LineList":
        o = self._notification_ordinals
        return self.subset((o >= first.ordinal) & (o <= last.ordinal))

    def with_max_delay(self, max_delay: int) -> "LineList":
        return self.subset(self.delays <= max_delay)

    def final_counts(self, first: EpiWeek, last: EpiWeek) -> np.ndarray:
        """Weekly totals over all delays for notification weeks first..last."""
        n_weeks = last - first + 1
        if n_weeks <= 0:
            return np.zeros(0, dtype=np.int64)
        idx = self._notification_ordinals - first.ordinal
        idx = idx[(idx >= 0) & (idx < n_weeks)]
        return np.bincount(idx, minlength=n_weeks).astype(np.int64)


def read_linelist_csv(path: Union[str, Path]) -> LineList:
    path = Path(path)
    if not path.exists():
        raise InputError(f"line list {path} does not exist")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if list(frame.columns) != LINELIST_COLUMNS:
        raise InputError(f"{path}: expected header {','.join(LINELIST_COLUMNS)}, got {','.join(frame.columns)}")

    notification = pd.to_datetime(frame["notification_date"].str.strip(), format="%Y-%m-%d", errors="coerce")
    entry = pd.to_datetime(frame["entry_date"].str.strip(), format="%Y-%m-%d", errors="coerce")
    # header is line 1
    malformed = np.flatnonzero(notification.isna().to_numpy() | entry.isna().to_numpy()) + 2
    if malformed.size:
        raise InputError(f"{path}: malformed dates on line(s) {', '.join(map(str, malformed[:20]))}")
    reversed_rows = np.flatnonzero((entry < notification).to_numpy()) + 2
    if reversed_rows.size:
        raise DataError(f"{path}: entry before notification on line(s) {', '.join(map(str, reversed_rows[:20]))}")

    linelist = LineList(notification.to_numpy().astype("datetime64[D]"), entry.to_numpy().astype("datetime64[D]"))
    logger.info(f"read {len(linelist)} cases from {path}")
    return linelist


def write_linelist_csv(linelist: LineList, path: Union[str, Path]):
    frame = pd.DataFrame({
        "notification_date": np.datetime_as_string(linelist.notification_dates, unit="D"),
        "entry_date": np.datetime_as_string(linelist.entry_dates, unit="D"),
    })
    frame.to_csv(path, index=False, lineterminator="\n")


def select_max_delay(training: Union[LineList, np.ndarray], hard_cap: int = 26, floor: int = 8,
                     coverage: float = 0.95) -> int:
    """
    D_max is the delay needed to hold ``coverage`` of the cases left after the hard cap,
    or ``floor`` if that is greater.
    """
    delays = training.delays if isinstance(training, LineList) else np.asarray(training, dtype=np.int64)
    retained = delays[delays <= hard_cap]
    if retained.size == 0:
        raise DataError(f"no training cases left after discarding delays over {hard_cap} weeks")
    if retained.size < delays.size:
        logger.debug(f"discarding {delays.size - retained.size} case(s) delayed over {hard_cap} weeks")

    fractions = np.cumsum(np.bincount(retained, minlength=hard_cap + 1)) / retained.size
    tau_star = int(np.argmax(fractions >= coverage - 1e-12))
    return max(floor, tau_star)


@dataclass(frozen=True, eq=False)
class ReportingTriangle:
    """
    ``counts[t, tau]`` holds the cases notified in week ``first_week + t`` and entered
    ``tau`` weeks later, as known at the end of ``as_of``.
    """
    first_week: EpiWeek
    as_of: EpiWeek
    counts: np.ndarray
    observed_mask: np.ndarray

    @property
    def n_weeks(self) -> int:
        return int(self.counts.shape[0])

    @property
    def d_max(self) -> int:
        return int(self.counts.shape[1]) - 1

    @property
    def weeks(self) -> List[EpiWeek]:
        return week_range(self.first_week, self.as_of)

    def week_index(self, week: EpiWeek) -> int:
        t = week - self.first_week
        if not 0 <= t < self.n_weeks:
            raise InputError(f"week {week} outside triangle {self.first_week}..{self.as_of}")
        return t

    def observed_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def observed_cells(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        t, tau = np.nonzero(self.observed_mask)
        return t, tau, self.counts[t, tau]


def observation_mask(n_weeks: int, d_max: int) -> np.ndarray:
    t = np.arange(n_weeks)[:, None]
    tau = np.arange(d_max + 1)[None, :]
    return t + tau <= n_weeks - 1


def build_triangle(l: LineList, as_of: EpiWeek, first_week: EpiWeek, d_max: int) -> ReportingTriangle:
    if as_of < first_week:
        raise InputError(f"as-of week {as_of} precedes the first week {first_week}")
    if d_max < 0:
        raise InputError(f"maximum delay must be non-negative, got {d_max}")

    n_weeks = as_of - first_week + 1
    t = l.notification_ordinals - first_week.ordinal
    delays = l.delays
    keep = (t >= 0) & (t < n_weeks) & (l.entry_ordinals <= as_of.ordinal) & (delays <= d_max)
    flat = t[keep] * (d_max + 1) + delays[keep]
    counts = np.bincount(flat, minlength=n_weeks * (d_max + 1)).reshape(n_weeks, d_max + 1).astype(np.int64)

    mask = observation_mask(n_weeks, d_max)
    assert not counts[~mask].any(), "cases leaked into unobserved cells"
    return ReportingTriangle(first_week=first_week, as_of=as_of, counts=_readonly(counts),
                             observed_mask=_readonly(mask))


@dataclass(frozen=True, eq=False)
class DelayDistribution:
    """ Empirical cumulative fraction of cases entered by each delay, one curve per week """
    weeks: List[EpiWeek]
    curves: np.ndarray
    mean_curve: np.ndarray
    band_80: Tuple[np.ndarray, np.ndarray]
    band_95: Tuple[np.ndarray, np.ndarray]
    skipped_weeks: int = 0


@dataclass(frozen=True, eq=False)
class DelayCompleteness:
    weeks: List[EpiWeek]
    weeks_to_fraction: np.ndarray
    mean: float
    std: float
    skipped_weeks: int = 0


def _weekly_delay_histogram(l: LineList, weeks: Optional[Tuple[EpiWeek, EpiWeek]], max_delay: Optional[int]):
    if weeks is None:
        if len(l) == 0:
            raise DataError("line list is empty")
        weeks = (l.first_week(), EpiWeek.from_ordinal(int(l.notification_ordinals.max())))
    start, end = weeks
    if end < start:
        raise InputError(f"empty week interval {start}..{end}")

    n_weeks = end - start + 1
    t = l.notification_ordinals - start.ordinal
    keep = (t >= 0) & (t < n_weeks)
    delays = l.delays[keep]
    if max_delay is None:
        max_delay = int(delays.max()) if delays.size else 0
    delays = np.minimum(delays, max_delay)
    histogram = np.bincount(t[keep] * (max_delay + 1) + delays, minlength=n_weeks * (max_delay + 1))
    histogram = histogram.reshape(n_weeks, max_delay + 1)

    totals = histogram.sum(axis=1)
    nonempty = totals > 0
    skipped = int((~nonempty).sum())
    if skipped:
        logger.warning(f"skipping {skipped} week(s) without cases between {start} and {end}")
    if not nonempty.any():
        raise DataError(f"no cases notified between {start} and {end}")

    curves = np.cumsum(histogram[nonempty], axis=1) / totals[nonempty, None]
    kept_weeks = [w for w, k in zip(week_range(start, end), nonempty) if k]
    return kept_weeks, curves, skipped


def delay_distribution(l: LineList, weeks: Optional[Tuple[EpiWeek, EpiWeek]] = None,
                       max_delay: Optional[int] = None) -> DelayDistribution:
    kept_weeks, curves, skipped = _weekly_delay_histogram(l, weeks, max_delay)
    return DelayDistribution(
        weeks=kept_weeks,
        curves=curves,
        mean_curve=curves.mean(axis=0),
        band_80=(np.percentile(curves, 10, axis=0), np.percentile(curves, 90, axis=0)),
        band_95=(np.percentile(curves, 2.5, axis=0), np.percentile(curves, 97.5, axis=0)),
        skipped_weeks=skipped)


def delay_completeness_series(l: LineList, fraction: float,
                              weeks: Optional[Tuple[EpiWeek, EpiWeek]] = None) -> DelayCompleteness:
    if not 0.0 < fraction < 1.0:
        raise InputError(f"fraction must lie in (0, 1), got {fraction}")
    kept_weeks, curves, skipped = _weekly_delay_histogram(l, weeks, None)
    reached = np.argmax(curves >= fraction - 1e-12, axis=1).astype(float)
    return DelayCompleteness(weeks=kept_weeks, weeks_to_fraction=reached, mean=float(reached.mean()),
                             std=float(reached.std(ddof=1)) if reached.size > 1 else 0.0,
                             skipped_weeks=skipped)


def delay_completeness(l: LineList, fraction: float, weeks: Optional[Tuple[EpiWeek, EpiWeek]] = None) -> float:
    return delay_completeness_series(l, fraction, weeks).mean
