import os
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional

from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from ..errors import InputError

ENV_PREFIX = "NOWCAST_"
ENV_SEPARATOR = "__"
WINDOWS = {"full": None, "2y": 104, "1y": 52, "6m": 26}


@dataclass
class DataConfig:
    """ Inputs and the training/truncation protocol """
    linelist: Optional[str] = None
    # signal name -> csv path, e.g. twitter, google_dengue, google_zika, google_chikungunya
    signals: Dict[str, str] = field(default_factory=dict)
    max_delay_cap: int = 26
    dmax_floor: int = 8
    dmax_coverage: float = 0.95
    # YYYY-Www; the first notified week when unset
    training_start: Optional[str] = None
    min_training_weeks: int = 20
    # weeks after which a notification week counts as fully reported; max_delay_cap when unset
    completeness_horizon: Optional[int] = None
    signal_fill: str = "raise"  # raise, previous, zero


@dataclass
class PriorConfig:
    """ Priors the model leaves open """
    coef_variance: float = 100.0
    walk_init_variance: float = 100.0
    # gamma(shape, rate) on the precisions 1/eta and on phi
    hyper_shape: float = 1.0
    hyper_rate: float = 5e-5


@dataclass
class InferenceConfig:
    """ Laplace-approximation grid and the damped Newton inner loop """
    grid_points: int = 5
    grid_log_step: float = 0.5
    newton_tol: float = 1e-6
    newton_max_iter: int = 100
    max_halvings: int = 30
    map_sweeps: int = 3
    log_hyper_bounds: List[float] = field(default_factory=[-12.0, 12.0].copy)


@dataclass
class ModelConfig:
    variant: str = "baseline"
    priors: PriorConfig = field(default_factory=PriorConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)


@dataclass
class SamplingConfig:
    n_samples: int = 1000
    seed: Optional[int] = None


@dataclass
class EvaluationConfig:
    start: Optional[str] = None
    end: Optional[str] = None
    window: str = "full"  # full, 2y, 1y, 6m
    models: List[str] = field(default_factory=["baseline", "naive"].copy)
    reference: str = "baseline"
    epidemic_threshold: float = 550.0
    high_threshold: float = 4000.0
    # simplified moving-epidemic-method threshold instead of the fixed value
    use_mem: bool = False
    mem_coverage: float = 0.85
    mem_top_k: int = 5
    mem_confidence: float = 0.95
    season_start_week: int = 1
    # weeks before as_of that are re-nowcast at every refit
    recent_weeks: int = 0


@dataclass
class LogConfig:
    out: str = "nowcast_out"
    level: str = "INFO"
    progress: bool = True


@dataclass
class RunConfig:
    """ The main configuration shared by every command """
    as_of: Optional[str] = None
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    log: LogConfig = field(default_factory=LogConfig)


def env_overrides(environ: Mapping[str, str]) -> dict:
    """``NOWCAST_SAMPLING__SEED=7`` becomes ``{"sampling": {"seed": "7"}}``."""
    tree = {}
    for key, value in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split(ENV_SEPARATOR)
        node = tree
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    return tree


def load_config(config_file: Optional[str] = None, environ: Optional[Mapping[str, str]] = None,
                overrides: Optional[dict] = None) -> RunConfig:
    """
    Defaults <- JSON file <- environment <- explicit overrides (CLI flags).
    """
    layers = [OmegaConf.structured(RunConfig)]
    try:
        if config_file is not None:
            path = Path(config_file)
            if not path.exists():
                raise InputError(f"config file {path} does not exist")
            with open(path, "r", encoding="utf-8") as fr:
                layers.append(OmegaConf.create(json.load(fr)))
        env = env_overrides(os.environ if environ is None else environ)
        if env:
            layers.append(OmegaConf.create(env))
        if overrides:
            layers.append(OmegaConf.create(overrides))
        cfg = OmegaConf.to_object(OmegaConf.merge(*layers))
    except (OmegaConfBaseException, json.JSONDecodeError) as e:
        raise InputError(f"invalid configuration: {e}") from e
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig):
    if cfg.evaluation.window not in WINDOWS:
        raise InputError(f"unknown window {cfg.evaluation.window!r}, expected one of {', '.join(WINDOWS)}")
    if cfg.data.signal_fill not in ("raise", "previous", "zero"):
        raise InputError(f"unknown signal fill policy {cfg.data.signal_fill!r}")
    if not 0.0 < cfg.data.dmax_coverage <= 1.0:
        raise InputError(f"dmax coverage must lie in (0, 1], got {cfg.data.dmax_coverage}")
    if cfg.data.dmax_floor < 0 or cfg.data.max_delay_cap < cfg.data.dmax_floor:
        raise InputError("need 0 <= dmax floor <= max delay cap")
    if cfg.sampling.n_samples < 1:
        raise InputError(f"need at least one posterior sample, got {cfg.sampling.n_samples}")
    if cfg.model.inference.grid_points < 1:
        raise InputError("the hyperparameter grid needs at least one point per axis")


def config_to_dict(cfg: RunConfig) -> dict:
    return OmegaConf.to_container(OmegaConf.structured(cfg))
