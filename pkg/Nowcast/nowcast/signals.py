import math
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.stats import kendalltau

from .epi_calendar import EpiWeek, week_ordinals, week_range
from .errors import InputError

# coefficient label -> signal it multiplies
SIGNAL_FOR_LABEL = {
    "gamma_d": "google_dengue",
    "gamma_z": "google_zika",
    "gamma_c": "google_chikungunya",
    "delta": "twitter",
}
SIGNAL_KINDS = ("count", "probability", "log")


@dataclass(frozen=True, eq=False)
class SignalSeries:
    """ Weekly non-negative online signal (search probability or tweet volume) """
    name: str
    values: Mapping[EpiWeek, float]
    kind: str = "count"

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise InputError(f"unknown signal kind {self.kind!r}")
        values = {week: float(v) for week, v in self.values.items()}
        for week, v in values.items():
            if not math.isfinite(v):
                raise InputError(f"signal {self.name}: non-finite value at {week}")
            if v < 0 and self.kind != "log":
                raise InputError(f"signal {self.name}: negative value {v} at {week}")
        object.__setattr__(self, "values", MappingProxyType(dict(sorted(values.items()))))

    def __len__(self):
        return len(self.values)

    def weeks(self) -> List[EpiWeek]:
        return list(self.values.keys())


def default_kind(name: str) -> str:
    return "probability" if name.startswith("google") else "count"


def ingest_signal_csv(path: Union[str, Path], name: str, kind: Optional[str] = None) -> SignalSeries:
    """
    Reads ``date,value`` (daily, summed within each epidemiological week) or
    ``year,week,value`` (weekly) files.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"signal file {path} does not exist")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    columns = [c.strip() for c in frame.columns]
    frame.columns = columns
    lines = np.arange(len(frame)) + 2

    values = pd.to_numeric(frame["value"].str.strip(), errors="coerce") if "value" in columns else None
    if values is None or columns not in (["date", "value"], ["year", "week", "value"]):
        raise InputError(f"{path}: expected header date,value or year,week,value, got {','.join(columns)}")
    bad = lines[values.isna().to_numpy()]
    if bad.size:
        raise InputError(f"{path}: non-numeric values on line(s) {', '.join(map(str, bad[:20]))}")
    negative = lines[(values < 0).to_numpy()]
    if negative.size:
        raise InputError(f"{path}: negative values on line(s) {', '.join(map(str, negative[:20]))}")

    if columns[0] == "date":
        dates = pd.to_datetime(frame["date"].str.strip(), format="%Y-%m-%d", errors="coerce")
        bad = lines[dates.isna().to_numpy()]
        if bad.size:
            raise InputError(f"{path}: malformed dates on line(s) {', '.join(map(str, bad[:20]))}")
        ordinals = week_ordinals(dates.to_numpy().astype("datetime64[D]"))
        weekly = pd.Series(values.to_numpy(), index=ordinals).groupby(level=0).sum()
        series = {EpiWeek.from_ordinal(int(o)): float(v) for o, v in weekly.items()}
    else:
        years = pd.to_numeric(frame["year"].str.strip(), errors="coerce")
        weeks = pd.to_numeric(frame["week"].str.strip(), errors="coerce")
        bad = lines[(years.isna() | weeks.isna()).to_numpy()]
        if bad.size:
            raise InputError(f"{path}: malformed year/week on line(s) {', '.join(map(str, bad[:20]))}")
        series = {}
        for line, year, week, value in zip(lines, years.astype(int), weeks.astype(int), values):
            key = EpiWeek(int(year), int(week))
            if key in series:
                raise InputError(f"{path}: duplicate week {key} on line {line}")
            series[key] = float(value)

    kind = kind or default_kind(name)
    logger.info(f"read signal {name} ({kind}) with {len(series)} weeks from {path}")
    return SignalSeries(name=name, values=series, kind=kind)


def write_signal_csv(s: SignalSeries, path: Union[str, Path]):
    frame = pd.DataFrame({"year": [w.year for w in s.values], "week": [w.week for w in s.values],
                          "value": list(s.values.values())})
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


def default_epsilon(s: SignalSeries) -> float:
    if s.kind == "probability":
        positive = [v for v in s.values.values() if v > 0]
        return 0.5 * min(positive) if positive else 1.0
    return 1.0


def log_regressor(s: SignalSeries, epsilon: Optional[float] = None) -> SignalSeries:
    """Natural log of ``value + epsilon`` week by week; finite for zero weeks."""
    if s.kind == "log":
        raise InputError(f"signal {s.name} is already log-transformed")
    epsilon = default_epsilon(s) if epsilon is None else float(epsilon)
    if epsilon <= 0:
        raise InputError(f"epsilon must be positive, got {epsilon}")
    return SignalSeries(name=s.name, values={w: math.log(v + epsilon) for w, v in s.values.items()}, kind="log")


@dataclass(frozen=True, eq=False)
class RegressorSet:
    """ Ordered (series, coefficient label) pairs; series are already log-transformed """
    columns: Tuple[Tuple[SignalSeries, str], ...] = ()

    def __post_init__(self):
        columns = tuple((s, label) for s, label in self.columns)
        labels = [label for _, label in columns]
        unknown = [label for label in labels if label not in SIGNAL_FOR_LABEL]
        if unknown:
            raise InputError(f"unknown coefficient label(s) {unknown}; expected {sorted(SIGNAL_FOR_LABEL)}")
        if len(set(labels)) != len(labels):
            raise InputError(f"duplicate coefficient labels {labels}")
        object.__setattr__(self, "columns", columns)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(label for _, label in self.columns)

    def __len__(self):
        return len(self.columns)


def build_regressors(labels: Sequence[str], signals: Mapping[str, SignalSeries],
                     epsilon: Optional[Dict[str, float]] = None) -> RegressorSet:
    missing = [SIGNAL_FOR_LABEL[label] for label in labels if SIGNAL_FOR_LABEL[label] not in signals]
    if missing:
        raise InputError(f"missing signal(s): {', '.join(missing)}")
    epsilon = epsilon or {}
    columns = []
    for label in labels:
        name = SIGNAL_FOR_LABEL[label]
        columns.append((log_regressor(signals[name], epsilon.get(name)), label))
    return RegressorSet(tuple(columns))


def align(r: RegressorSet, weeks: Union[Tuple[EpiWeek, EpiWeek], Sequence[EpiWeek]],
          fill: str = "raise") -> np.ndarray:
    """
    weeks x regressors matrix in declaration order.

    :param fill: ``raise`` on any gap, ``previous`` to carry the last earlier value, ``zero``
    """
    if isinstance(weeks, tuple) and len(weeks) == 2 and all(isinstance(w, EpiWeek) for w in weeks):
        weeks = week_range(*weeks)
    weeks = list(weeks)
    matrix = np.zeros((len(weeks), len(r)), dtype=np.float64)
    for j, (series, label) in enumerate(r.columns):
        known = series.values
        last = None
        previous_keys = sorted(w for w in known if weeks and w < weeks[0])
        if previous_keys:
            last = known[previous_keys[-1]]
        for i, week in enumerate(weeks):
            if week in known:
                last = known[week]
                matrix[i, j] = last
            elif fill == "previous" and last is not None:
                matrix[i, j] = last
            elif fill == "zero":
                matrix[i, j] = 0.0
            else:
                raise InputError(f"signal {series.name} ({label}) has no value for week {week}")
    return matrix


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> Tuple[float, int]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise InputError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise InputError("Kendall's tau needs at least two pairs")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise InputError("Kendall's tau needs finite values")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise InputError("Kendall's tau-b is undefined for a constant series")
    tau, _ = kendalltau(x, y, variant="b")
    return float(tau), int(x.size)
