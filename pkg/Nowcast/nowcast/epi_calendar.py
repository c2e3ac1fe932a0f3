import re
import datetime
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Union

import numpy as np

from .errors import InputError

# 1970-01-04 was a Sunday; epoch day 3
_SUNDAY_ANCHOR = datetime.date(1970, 1, 4)
_SUNDAY_ANCHOR_DAYS = 3

_WEEK_PATTERN = re.compile(r"^\s*(\d{4})-?W?(\d{1,2})\s*$", re.IGNORECASE)


@lru_cache(maxsize=None)
def week_one_start(year: int) -> datetime.date:
    """Sunday opening week 1: the Sunday-start week holding at least four days of January."""
    jan4 = datetime.date(year, 1, 4)
    return jan4 - datetime.timedelta(days=(jan4.weekday() + 1) % 7)


def weeks_in_year(year: int) -> int:
    return (week_one_start(year + 1) - week_one_start(year)).days // 7


@dataclass(frozen=True, order=True)
class EpiWeek:
    """ Sunday-to-Saturday epidemiological week """
    year: int
    week: int

    def __post_init__(self):
        if not 1 <= self.week <= 53 or self.week > weeks_in_year(self.year):
            raise InputError(f"epidemiological week {self.year}-W{self.week:02d} does not exist")

    def start_date(self) -> datetime.date:
        return week_one_start(self.year) + datetime.timedelta(weeks=self.week - 1)

    def end_date(self) -> datetime.date:
        return self.start_date() + datetime.timedelta(days=6)

    @property
    def ordinal(self) -> int:
        return (self.start_date() - _SUNDAY_ANCHOR).days // 7

    @classmethod
    def from_ordinal(cls, ordinal: int) -> "EpiWeek":
        return to_epi_week(_SUNDAY_ANCHOR + datetime.timedelta(weeks=int(ordinal)))

    def __add__(self, n: int) -> "EpiWeek":
        if not isinstance(n, (int, np.integer)):
            return NotImplemented
        return EpiWeek.from_ordinal(self.ordinal + int(n))

    def __sub__(self, other):
        if isinstance(other, EpiWeek):
            return self.ordinal - other.ordinal
        if isinstance(other, (int, np.integer)):
            return EpiWeek.from_ordinal(self.ordinal - int(other))
        return NotImplemented

    def __str__(self):
        return f"{self.year}-W{self.week:02d}"


def to_epi_week(d: Union[datetime.date, str]) -> EpiWeek:
    if isinstance(d, str):
        try:
            d = datetime.date.fromisoformat(d.strip())
        except ValueError as e:
            raise InputError(f"invalid date {d!r}") from e
    elif isinstance(d, datetime.datetime):
        d = d.date()
    elif not isinstance(d, datetime.date):
        raise InputError(f"expected a calendar date, got {type(d).__name__}")

    year = d.year
    if d < week_one_start(year):
        year -= 1
    elif d >= week_one_start(year + 1):
        year += 1
    return EpiWeek(year, (d - week_one_start(year)).days // 7 + 1)


def parse_epi_week(text: str) -> EpiWeek:
    """
    :param text: ``YYYY-Www``, ``YYYYWww`` or ``YYYYWW``
    """
    match = _WEEK_PATTERN.match(str(text))
    if match is None:
        raise InputError(f"cannot parse epidemiological week from {text!r}, expected YYYY-Www")
    return EpiWeek(int(match.group(1)), int(match.group(2)))


def week_ordinals(dates) -> np.ndarray:
    """Vectorised EpiWeek.ordinal for an array of dates."""
    days = np.asarray(dates, dtype="datetime64[D]").astype(np.int64)
    return (days - _SUNDAY_ANCHOR_DAYS) // 7


def week_range(start: EpiWeek, end: EpiWeek) -> List[EpiWeek]:
    return [start + i for i in range(end - start + 1)]
