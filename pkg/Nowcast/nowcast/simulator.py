import datetime
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd
from loguru import logger
from omegaconf import OmegaConf

from .dataset import LineList, write_linelist_csv
from .epi_calendar import EpiWeek, parse_epi_week, week_range
from .errors import InputError
from .signals import SignalSeries, default_kind, write_signal_csv
from .utils import ensure_dir, save_json, substream


@dataclass
class DelayRegime:
    """ Delay law in force from week index ``start`` of the simulation on """
    start: int = 0
    law: List[float] = field(default_factory=[0.3, 0.25, 0.15, 0.1, 0.08, 0.05, 0.04, 0.02, 0.01].copy)


@dataclass
class SignalLaw:
    """ log signal_t = intercept + coefficient * log(truth_{t - lag} + 1) + N(0, noise_sd) """
    name: str = "google_dengue"
    coefficient: float = 0.8
    intercept: float = 0.0
    noise_sd: float = 0.1
    lag: int = 0  # negative leads the truth; shifts clamp at the series ends
    kind: str = ""


@dataclass
class SimConfig:
    first_week: str = "2010-W01"
    n_weeks: int = 260
    baseline: float = 100.0
    # one Gaussian bump per season of ``season_length`` weeks
    amplitudes: List[float] = field(default_factory=[1500.0, 3000.0, 800.0, 2500.0, 1200.0].copy)
    season_length: int = 52
    peak_week: float = 16.0
    peak_width: float = 5.0
    peak_jitter: int = 2
    dispersion: float = 30.0
    delay_regimes: List[DelayRegime] = field(default_factory=lambda: [DelayRegime()])
    signals: List[SignalLaw] = field(default_factory=list)
    seed: int = 0


def validate_sim_config(cfg: SimConfig):
    parse_epi_week(cfg.first_week)
    if cfg.n_weeks < 1 or cfg.season_length < 1:
        raise InputError("n_weeks and season_length must be positive")
    if cfg.baseline <= 0 or cfg.dispersion <= 0 or cfg.peak_width <= 0:
        raise InputError("baseline, dispersion and peak width must be positive")
    if cfg.peak_jitter < 0 or any(a < 0 for a in cfg.amplitudes):
        raise InputError("peak jitter and amplitudes must be non-negative")
    n_seasons = -(-cfg.n_weeks // cfg.season_length)
    if cfg.amplitudes and len(cfg.amplitudes) < n_seasons:
        raise InputError(f"{cfg.n_weeks} weeks span {n_seasons} season(s) but only {len(cfg.amplitudes)} "
                         f"amplitude(s) are given; pass one per season or none for a flat baseline")
    if not cfg.delay_regimes or cfg.delay_regimes[0].start != 0:
        raise InputError("the first delay regime must start at week index 0")
    starts = [r.start for r in cfg.delay_regimes]
    if starts != sorted(set(starts)):
        raise InputError(f"delay regime starts must be strictly increasing, got {starts}")
    for r in cfg.delay_regimes:
        law = np.asarray(r.law, dtype=np.float64)
        if law.size == 0 or (law < 0).any() or abs(law.sum() - 1.0) > 1e-9:
            raise InputError(f"delay law {list(r.law)} must be non-negative and sum to 1")
    names = [s.name for s in cfg.signals]
    if len(set(names)) != len(names):
        raise InputError(f"duplicate signal names {names}")
    for s in cfg.signals:
        if s.noise_sd < 0:
            raise InputError(f"signal {s.name}: noise scale must be non-negative")
        if abs(s.lag) >= cfg.n_weeks:
            raise InputError(f"signal {s.name}: lag {s.lag} does not fit in {cfg.n_weeks} weeks")


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    config: SimConfig
    first_week: EpiWeek
    truths: np.ndarray
    matrix: np.ndarray  # weeks x delays, row sums equal truths
    linelist: LineList
    signals: Dict[str, SignalSeries]
    mean_curve: np.ndarray

    @property
    def n_weeks(self) -> int:
        return int(self.truths.shape[0])

    @property
    def max_delay(self) -> int:
        return int(self.matrix.shape[1]) - 1

    @property
    def last_week(self) -> EpiWeek:
        return self.first_week + (self.n_weeks - 1)

    @property
    def final_week(self) -> EpiWeek:
        """Week by which every simulated case has entered."""
        return self.last_week + self.max_delay

    @property
    def weeks(self) -> List[EpiWeek]:
        return week_range(self.first_week, self.last_week)

    def regime_index(self, t: int) -> int:
        starts = [r.start for r in self.config.delay_regimes]
        return int(np.searchsorted(starts, t, side="right")) - 1

    def write(self, out_dir: Union[str, Path]):
        """linelist.csv, signal_<name>.csv, truth.csv and scenario.json"""
        out = Path(ensure_dir(str(out_dir)))
        write_linelist_csv(self.linelist, out / "linelist.csv")
        for name, series in self.signals.items():
            write_signal_csv(series, out / f"signal_{name}.csv")
        pd.DataFrame({"year": [w.year for w in self.weeks], "week": [w.week for w in self.weeks],
                      "total": self.truths}).to_csv(out / "truth.csv", index=False, lineterminator="\n")
        save_json(OmegaConf.to_container(OmegaConf.structured(self.config)), str(out / "scenario.json"))
        logger.info(f"wrote synthetic dataset ({len(self.linelist)} cases) to {out}")


def seasonal_mean(cfg: SimConfig) -> np.ndarray:
    t = np.arange(cfg.n_weeks, dtype=np.float64)
    jitter = substream(cfg.seed, 3).integers(-cfg.peak_jitter, cfg.peak_jitter + 1, size=len(cfg.amplitudes))
    mean = np.full(cfg.n_weeks, cfg.baseline)
    for s, amplitude in enumerate(cfg.amplitudes):
        center = s * cfg.season_length + cfg.peak_week + jitter[s]
        mean += amplitude * np.exp(-0.5 * ((t - center) / cfg.peak_width) ** 2)
    return mean


def _padded_laws(cfg: SimConfig) -> np.ndarray:
    width = max(len(r.law) for r in cfg.delay_regimes)
    laws = np.zeros((len(cfg.delay_regimes), width))
    for i, r in enumerate(cfg.delay_regimes):
        laws[i, :len(r.law)] = r.law
    return laws / laws.sum(axis=1, keepdims=True)


def simulate(cfg: SimConfig) -> SyntheticDataset:
    """
    Weekly truths from an NB around the seasonal mean, split multinomially over
    delays by the regime in force, expanded into dated case records.
    """
    validate_sim_config(cfg)
    first_week = parse_epi_week(cfg.first_week)
    mean = seasonal_mean(cfg)
    truths = substream(cfg.seed, 0).negative_binomial(cfg.dispersion, cfg.dispersion / (cfg.dispersion + mean))
    truths = truths.astype(np.int64)

    laws = _padded_laws(cfg)
    starts = [r.start for r in cfg.delay_regimes]
    matrix = np.zeros((cfg.n_weeks, laws.shape[1]), dtype=np.int64)
    notification, entry = [], []
    for t in range(cfg.n_weeks):
        rng = substream(cfg.seed, 1, t)
        regime = int(np.searchsorted(starts, t, side="right")) - 1
        matrix[t] = rng.multinomial(truths[t], laws[regime])
        delays = np.repeat(np.arange(laws.shape[1]), matrix[t])
        notified_day = rng.integers(0, 7, size=delays.size)
        # same-week entries cannot precede the notification day
        entered_day = np.where(delays == 0, rng.integers(notified_day, 7), rng.integers(0, 7, size=delays.size))
        week_start = np.datetime64((first_week + t).start_date(), "D")
        notification.append(week_start + notified_day.astype("timedelta64[D]"))
        entry.append(week_start + (7 * delays + entered_day).astype("timedelta64[D]"))
    linelist = LineList(np.concatenate(notification) if notification else np.array([], dtype="datetime64[D]"),
                        np.concatenate(entry) if entry else np.array([], dtype="datetime64[D]"))

    signals = {}
    weeks = week_range(first_week, first_week + (cfg.n_weeks - 1))
    for j, law in enumerate(cfg.signals):
        rng = substream(cfg.seed, 2, j)
        shifted = truths[np.clip(np.arange(cfg.n_weeks) - law.lag, 0, cfg.n_weeks - 1)]
        noise = rng.normal(0.0, law.noise_sd, size=cfg.n_weeks) if law.noise_sd > 0 else np.zeros(cfg.n_weeks)
        values = np.exp(law.intercept + law.coefficient * np.log(shifted + 1.0) + noise)
        signals[law.name] = SignalSeries(name=law.name, values=dict(zip(weeks, values.tolist())),
                                         kind=law.kind or default_kind(law.name))

    logger.info(f"simulated {cfg.n_weeks} weeks from {first_week}: {int(truths.sum())} cases, "
                f"{len(cfg.delay_regimes)} delay regime(s), {len(signals)} signal(s)")
    return SyntheticDataset(config=cfg, first_week=first_week, truths=truths, matrix=matrix, linelist=linelist,
                            signals=signals, mean_curve=mean)


def replay_as_of(d: SyntheticDataset, week: EpiWeek) -> LineList:
    """The line list an analyst would have seen at the end of ``week``."""
    if not d.first_week <= week <= d.final_week:
        raise InputError(f"week {week} outside the simulated range {d.first_week}..{d.final_week}")
    return d.linelist.as_of(week)


def load_sim_config(path: Union[str, Path]) -> SimConfig:
    """Scenario JSON as written by SyntheticDataset.write, merged over the defaults."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"scenario file {path} does not exist")
    try:
        cfg = OmegaConf.to_object(OmegaConf.merge(OmegaConf.structured(SimConfig), OmegaConf.load(path)))
    except Exception as e:
        raise InputError(f"invalid scenario {path}: {e}") from e
    validate_sim_config(cfg)
    return cfg
