import os
import sys
import argparse
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
from loguru import logger

sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), "Nowcast"))
from nowcast import utils
from nowcast.config.run_config import RunConfig, load_config
from nowcast.dataset import LineList, build_triangle, delay_completeness_series, delay_distribution, \
    read_linelist_csv, select_max_delay
from nowcast.epi_calendar import EpiWeek, parse_epi_week
from nowcast.errors import DataError, InputError, MetricError, NowcastError, ParameterError
from nowcast.metrics import build_report, write_report
from nowcast.models.delay_model import VARIANTS, ModelSpec, variant_name
from nowcast.models.inference import export_diagnostics, fit
from nowcast.models.nowcaster import naive_nowcast, nowcast, write_nowcast_csv
from nowcast.signals import SIGNAL_FOR_LABEL, SignalSeries, align, build_regressors, ingest_signal_csv, kendall_tau
from nowcast.simulator import SimConfig, load_sim_config, simulate
from nowcast.threshold import epidemic_threshold, group_seasons, pre_epidemic_values
from nowcast.trainer import rolling_evaluate, window_start

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
USAGE_ERRORS = (InputError, DataError, MetricError, ParameterError)

# flag -> (type, options); ``config`` names the RunConfig key the flag overrides
COMMON_INPUTS = {
    "config": ("PATH", {"help": "JSON file with RunConfig keys"}),
    "out": ("PATH", {"config": "log.out", "help": "output directory"}),
    "log_level": (["TRACE", "DEBUG", "INFO", "WARNING", "ERROR"], {"config": "log.level"}),
    "no_progress": ("FLAG", {"config": "log.progress", "invert": True}),
}
DATA_INPUTS = {
    "linelist": ("PATH", {"config": "data.linelist"}),
    "signal": ("SIGNAL", {"config": "data.signals", "help": "name=path, repeatable"}),
    "max_delay_cap": ("INT", {"config": "data.max_delay_cap"}),
    "dmax_floor": ("INT", {"config": "data.dmax_floor"}),
    "dmax_coverage": ("FLOAT", {"config": "data.dmax_coverage"}),
    "training_start": ("WEEK", {"config": "data.training_start"}),
}
MODEL_NAMES = [v.replace("_", "-") for v in VARIANTS]


def configure_logging(level: str):
    logger.remove()
    logger.add(sys.stderr, level=level.upper())


def required(value, flag: str):
    if value is None or value == "":
        raise InputError(f"missing required option --{flag}")
    return value


def load_signals(paths: Dict[str, str]) -> Dict[str, SignalSeries]:
    signals = {}
    for name, path in sorted(paths.items()):
        signals[name] = ingest_signal_csv(path, name)
    return signals


def check_signals(variant: str, paths: Dict[str, str]):
    needed = [SIGNAL_FOR_LABEL[label] for label in VARIANTS[variant]]
    missing = [name for name in needed if name not in paths]
    if missing:
        raise InputError(f"model {variant.replace('_', '-')} needs signal(s) {', '.join(needed)}; "
                         f"missing {', '.join(missing)} (pass --signal name=path)")


def model_spec(variant: str, signals: Dict[str, SignalSeries], d_max: int) -> ModelSpec:
    labels = VARIANTS[variant]
    regressors = build_regressors(labels, signals)
    return ModelSpec(variant, regressors, d_max)


class NowcastCommand:
    """Nowcast the weeks still being reported as of a given week"""
    RETURN_TYPES = ("NOWCAST_CSV", "DIAGNOSTICS_JSON")
    FUNCTION = "run"
    CATEGORY = "Nowcast"

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {
                "as_of": ("WEEK", {"config": "as_of"}),
                "linelist": DATA_INPUTS["linelist"],
                "seed": ("INT", {"config": "sampling.seed"}),
            },
            "optional": {
                **DATA_INPUTS,
                "model": ("STRING", {"config": "model.variant", "help": " | ".join(MODEL_NAMES)}),
                "window": (["full", "2y", "1y", "6m"], {"config": "evaluation.window"}),
                "samples": ("INT", {"config": "sampling.n_samples"}),
            },
        }

    def run(self, cfg: RunConfig):
        variant = variant_name(cfg.model.variant)
        as_of = parse_epi_week(required(cfg.as_of, "as-of"))
        seed = required(cfg.sampling.seed, "seed")
        check_signals(variant, cfg.data.signals)
        utils.seed_everything(seed)

        linelist = read_linelist_csv(required(cfg.data.linelist, "linelist"))
        signals = load_signals(cfg.data.signals)
        view = linelist.as_of(as_of)
        training_start = parse_epi_week(cfg.data.training_start) if cfg.data.training_start else view.first_week()
        first_week = window_start(as_of, cfg.evaluation.window, training_start)
        view = view.notified_between(first_week, as_of)
        d_max = select_max_delay(view, cfg.data.max_delay_cap, cfg.data.dmax_floor, cfg.data.dmax_coverage)
        triangle = build_triangle(view, as_of, first_week, d_max)

        out = Path(utils.ensure_dir(cfg.log.out))
        csv_path, diagnostics_path = out / "nowcast.csv", out / "diagnostics.json"
        if variant == "naive":
            result = naive_nowcast(triangle, as_of)
            utils.save_json({"variant": variant, "d_max": d_max, "as_of": str(as_of), "seed": seed},
                            str(diagnostics_path))
        else:
            spec = model_spec(variant, signals, d_max)
            X = align(spec.regressors, triangle.weeks, fill=cfg.data.signal_fill) if len(spec.regressors) else None
            samples = fit(spec, triangle, X, cfg.sampling.n_samples, seed, priors=cfg.model.priors,
                          inference=cfg.model.inference, progress=cfg.log.progress)
            result = nowcast(samples, triangle)
            export_diagnostics(samples, str(diagnostics_path))
        write_nowcast_csv(result, csv_path)
        logger.info(f"{variant} nowcast of {as_of}: {result.point[-1]:.0f} "
                    f"(95% {result.lo95[-1]:.0f}-{result.hi95[-1]:.0f}), written to {csv_path}")
        return (str(csv_path), str(diagnostics_path))


class EvaluateCommand:
    """Weekly rolling refits and the comparison metrics over a range of weeks"""
    RETURN_TYPES = ("METRICS_JSON", "CSV_DIR")
    FUNCTION = "run"
    CATEGORY = "Nowcast"

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {
                "linelist": DATA_INPUTS["linelist"],
                "start": ("WEEK", {"config": "evaluation.start"}),
                "end": ("WEEK", {"config": "evaluation.end"}),
                "seed": ("INT", {"config": "sampling.seed"}),
            },
            "optional": {
                **DATA_INPUTS,
                "models": ("LIST", {"config": "evaluation.models", "help": "comma separated model names"}),
                "model": ("STRING", {"config": "evaluation.models", "append": True, "help": "repeatable"}),
                "reference": ("STRING", {"config": "evaluation.reference"}),
                "window": (["full", "2y", "1y", "6m"], {"config": "evaluation.window"}),
                "samples": ("INT", {"config": "sampling.n_samples"}),
                "epidemic_threshold": ("FLOAT", {"config": "evaluation.epidemic_threshold"}),
                "use_mem": ("FLAG", {"config": "evaluation.use_mem"}),
                "recent_weeks": ("INT", {"config": "evaluation.recent_weeks"}),
            },
        }

    def run(self, cfg: RunConfig):
        ev = cfg.evaluation
        models = [variant_name(m) for m in ev.models]
        reference = variant_name(ev.reference)
        if reference not in models:
            raise InputError(f"reference model {reference} is not among the evaluated models {models}")
        start = parse_epi_week(required(ev.start, "start"))
        end = parse_epi_week(required(ev.end, "end"))
        seed = required(cfg.sampling.seed, "seed")
        for variant in models:
            check_signals(variant, cfg.data.signals)
        utils.seed_everything(seed)

        linelist = read_linelist_csv(required(cfg.data.linelist, "linelist"))
        signals = load_signals(cfg.data.signals)
        data_end = linelist.last_entry_week()
        horizon = cfg.data.max_delay_cap if cfg.data.completeness_horizon is None else cfg.data.completeness_horizon
        if end + horizon > data_end:
            raise InputError(f"evaluation end {end} is not fully reported: data end at {data_end}, "
                             f"{horizon} week(s) of reporting needed")

        threshold = ev.epidemic_threshold
        if ev.use_mem:
            threshold = mem_threshold(cfg, linelist, linelist.first_week(), start - 1)

        rolling = {}
        out = Path(utils.ensure_dir(cfg.log.out))
        for variant in models:
            spec = model_spec(variant, signals, cfg.data.dmax_floor)
            rolling[variant] = rolling_evaluate(spec, linelist, spec.regressors, start, end, ev.window,
                                                cfg.sampling.n_samples, seed, data=cfg.data,
                                                priors=cfg.model.priors, inference=cfg.model.inference,
                                                recent_weeks=ev.recent_weeks, data_end=data_end,
                                                progress=cfg.log.progress)
            if rolling[variant].results:
                write_nowcast_csv(rolling[variant].combined(), out / f"nowcasts_{variant}.csv")

        gaps = [{"model": m, "year": w.year, "week": w.week, "reason": reason}
                for m, r in rolling.items() for w, reason in r.gaps]
        pd.DataFrame(gaps, columns=["model", "year", "week", "reason"]).to_csv(
            out / "gaps.csv", index=False, lineterminator="\n")
        report = build_report(rolling, reference, threshold, ev.high_threshold)
        write_report(report, out)
        return (str(out / "metrics.json"), str(out))


def mem_threshold(cfg: RunConfig, linelist: LineList, first: EpiWeek, last: EpiWeek) -> float:
    if last < first:
        raise InputError(f"no history before {last + 1} to set a threshold from")
    seasons = group_seasons(first, linelist.final_counts(first, last), cfg.evaluation.season_start_week)
    threshold = epidemic_threshold(seasons, cfg.evaluation.mem_coverage, cfg.evaluation.mem_top_k,
                                   cfg.evaluation.mem_confidence)
    logger.info(f"epidemic threshold {threshold:.1f} from {len(seasons)} season(s) {first}..{last}")
    return threshold


class ThresholdCommand:
    """Epidemic threshold from past seasons"""
    RETURN_TYPES = ("THRESHOLD_JSON",)
    FUNCTION = "run"
    CATEGORY = "Nowcast"

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {"linelist": DATA_INPUTS["linelist"]},
            "optional": {
                "start": ("WEEK", {"config": "evaluation.start", "help": "first history week"}),
                "end": ("WEEK", {"config": "evaluation.end", "help": "last history week"}),
                "season_start_week": ("INT", {"config": "evaluation.season_start_week"}),
                "mem_coverage": ("FLOAT", {"config": "evaluation.mem_coverage"}),
                "mem_top_k": ("INT", {"config": "evaluation.mem_top_k"}),
            },
        }

    def run(self, cfg: RunConfig):
        ev = cfg.evaluation
        linelist = read_linelist_csv(required(cfg.data.linelist, "linelist"))
        first = parse_epi_week(ev.start) if ev.start else linelist.first_week()
        last = parse_epi_week(ev.end) if ev.end else EpiWeek.from_ordinal(int(linelist.notification_ordinals.max()))
        counts = linelist.final_counts(first, last)
        seasons = group_seasons(first, counts, ev.season_start_week)
        threshold = epidemic_threshold(seasons, ev.mem_coverage, ev.mem_top_k, ev.mem_confidence)

        path = Path(utils.ensure_dir(cfg.log.out)) / "threshold.json"
        utils.save_json({
            "threshold": threshold,
            "method": "simplified moving epidemic method",
            "history": [str(first), str(last)],
            "seasons": len(seasons),
            "season_start_week": ev.season_start_week,
            "coverage": ev.mem_coverage,
            "top_k": ev.mem_top_k,
            "confidence": ev.mem_confidence,
            "pre_epidemic_values": [pre_epidemic_values(s, ev.mem_coverage, ev.mem_top_k) for s in seasons],
        }, str(path))
        logger.info(f"epidemic threshold {threshold:.1f} from {len(seasons)} season(s)")
        return (str(path),)


class DelaysCommand:
    """Delay completeness statistics of a line list"""
    RETURN_TYPES = ("DELAYS_JSON", "DELAY_CURVES_CSV")
    FUNCTION = "run"
    CATEGORY = "Nowcast"

    FRACTIONS = (0.8, 0.95)

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {"linelist": DATA_INPUTS["linelist"]},
            "optional": {
                "start": ("WEEK", {"config": "evaluation.start"}),
                "end": ("WEEK", {"config": "evaluation.end"}),
                "max_delay_cap": DATA_INPUTS["max_delay_cap"],
            },
        }

    def run(self, cfg: RunConfig):
        linelist = read_linelist_csv(required(cfg.data.linelist, "linelist"))
        if len(linelist) == 0:
            raise DataError("line list is empty")
        start = parse_epi_week(cfg.evaluation.start) if cfg.evaluation.start else linelist.first_week()
        end = parse_epi_week(cfg.evaluation.end) if cfg.evaluation.end \
            else EpiWeek.from_ordinal(int(linelist.notification_ordinals.max()))
        weeks = (start, end)

        summary = {"weeks": [str(start), str(end)], "cases": len(linelist.notified_between(start, end))}
        for fraction in self.FRACTIONS:
            series = delay_completeness_series(linelist, fraction, weeks)
            key = f"{round(fraction * 100)}"
            summary[f"mean_weeks_to_{key}"] = series.mean
            summary[f"std_weeks_to_{key}"] = series.std
            summary["skipped_weeks"] = series.skipped_weeks
        distribution = delay_distribution(linelist, weeks, cfg.data.max_delay_cap)
        summary["mean_curve"] = distribution.mean_curve

        out = Path(utils.ensure_dir(cfg.log.out))
        utils.save_json(summary, str(out / "delays.json"))
        rows = [{"year": w.year, "week": w.week, "delay": tau, "fraction": float(f)}
                for w, curve in zip(distribution.weeks, distribution.curves) for tau, f in enumerate(curve)]
        pd.DataFrame(rows, columns=["year", "week", "delay", "fraction"]).to_csv(
            out / "delay_curves.csv", index=False, lineterminator="\n", float_format="%.10g")
        logger.info(f"mean weeks to 95% entry: {summary['mean_weeks_to_95']:.2f}")
        return (str(out / "delays.json"), str(out / "delay_curves.csv"))


class CorrelateCommand:
    """Kendall's tau-b between each signal and the final weekly counts"""
    RETURN_TYPES = ("CORRELATION_JSON",)
    FUNCTION = "run"
    CATEGORY = "Nowcast"

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {"linelist": DATA_INPUTS["linelist"], "signal": DATA_INPUTS["signal"]},
            "optional": {
                "start": ("WEEK", {"config": "evaluation.start"}),
                "end": ("WEEK", {"config": "evaluation.end"}),
            },
        }

    def run(self, cfg: RunConfig):
        if not cfg.data.signals:
            raise InputError("missing required option --signal")
        linelist = read_linelist_csv(required(cfg.data.linelist, "linelist"))
        start = parse_epi_week(cfg.evaluation.start) if cfg.evaluation.start else linelist.first_week()
        end = parse_epi_week(cfg.evaluation.end) if cfg.evaluation.end \
            else EpiWeek.from_ordinal(int(linelist.notification_ordinals.max()))
        counts = linelist.final_counts(start, end)

        correlations = {}
        for name, series in load_signals(cfg.data.signals).items():
            weeks = [w for w in series.weeks() if start <= w <= end]
            tau, pairs = kendall_tau([series.values[w] for w in weeks], [counts[w - start] for w in weeks])
            correlations[name] = {"tau": tau, "pairs": pairs}
            logger.info(f"{name}: tau-b {tau:.3f} over {pairs} week(s)")

        path = Path(utils.ensure_dir(cfg.log.out)) / "correlation.json"
        utils.save_json({"weeks": [str(start), str(end)], "signals": correlations}, str(path))
        return (str(path),)


class SimulateCommand:
    """Synthetic line list, signals and truths"""
    RETURN_TYPES = ("DATASET_DIR",)
    FUNCTION = "run"
    CATEGORY = "Nowcast"

    @classmethod
    def INPUT_TYPES(cls):
        return {
            "required": {"seed": ("INT", {"config": "sampling.seed"})},
            "optional": {
                "scenario": ("PATH", {"help": "scenario JSON with SimConfig keys"}),
                "weeks": ("INT", {"help": "number of simulated weeks"}),
            },
        }

    def run(self, cfg: RunConfig, scenario: Optional[str] = None, weeks: Optional[int] = None):
        sim = load_sim_config(scenario) if scenario else SimConfig()
        sim.seed = required(cfg.sampling.seed, "seed")
        if weeks is not None:
            sim.n_weeks = weeks
        dataset = simulate(sim)
        dataset.write(cfg.log.out)
        return (cfg.log.out,)


COMMAND_CLASS_MAPPINGS = {
    "nowcast": NowcastCommand,
    "evaluate": EvaluateCommand,
    "threshold": ThresholdCommand,
    "delays": DelaysCommand,
    "correlate": CorrelateCommand,
    "simulate": SimulateCommand,
}


def _add_input(parser: argparse.ArgumentParser, name: str, kind, options: dict):
    flag = "--" + name.replace("_", "-")
    kwargs = {"dest": name, "default": None, "help": options.get("help")}
    if isinstance(kind, list):
        kwargs["choices"] = kind
    elif kind == "INT":
        kwargs["type"] = int
    elif kind == "FLOAT":
        kwargs["type"] = float
    elif kind == "FLAG":
        kwargs.update(action="store_true", default=None)
    elif kind == "SIGNAL":
        kwargs.update(action="append", metavar="NAME=PATH")
    elif kind == "WEEK":
        kwargs["metavar"] = "YYYY-Www"
    if options.get("append"):
        kwargs["action"] = "append"
    parser.add_argument(flag, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Dengue nowcasting from delayed case reports and online signals")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, cls in COMMAND_CLASS_MAPPINGS.items():
        p = sub.add_parser(name, help=(cls.__doc__ or name).strip())
        inputs = {**COMMON_INPUTS, **cls.INPUT_TYPES()["required"], **cls.INPUT_TYPES().get("optional", {})}
        for key, (kind, options) in inputs.items():
            _add_input(p, key, kind, options)
    return parser


def parse_signal_flags(values: List[str]) -> Dict[str, str]:
    signals = {}
    for value in values:
        name, sep, path = value.partition("=")
        if not sep or not name.strip() or not path.strip():
            raise InputError(f"--signal expects name=path, got {value!r}")
        if not Path(path.strip()).exists():
            raise InputError(f"signal file {path.strip()} does not exist")
        signals[name.strip()] = path.strip()
    return signals


def flag_overrides(cls, args: argparse.Namespace):
    """Splits the parsed flags into a RunConfig override tree and extra run() arguments."""
    inputs = {**COMMON_INPUTS, **cls.INPUT_TYPES()["required"], **cls.INPUT_TYPES().get("optional", {})}
    tree, extra = {}, {}
    for name, (kind, options) in inputs.items():
        value = getattr(args, name, None)
        if value is None or name == "config":
            continue
        if kind == "SIGNAL":
            value = parse_signal_flags(value)
        elif kind == "LIST":
            value = [v.strip() for v in value.split(",") if v.strip()]
        elif kind == "WEEK":
            value = str(parse_epi_week(value))
        if options.get("invert"):
            value = not value
        key = options.get("config")
        if key is None:
            extra[name] = value
            continue
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        if options.get("append") and isinstance(node.get(parts[-1]), list):
            node[parts[-1]] = node[parts[-1]] + value
        else:
            node[parts[-1]] = value
    return tree, extra


def main(argv: Optional[Sequence[str]] = None, environ=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cls = COMMAND_CLASS_MAPPINGS[args.command]
    configure_logging(args.log_level or "INFO")
    try:
        overrides, extra = flag_overrides(cls, args)
        cfg = load_config(args.config, environ=environ, overrides=overrides)
        configure_logging(cfg.log.level)
        if cfg.data.linelist is not None and not Path(cfg.data.linelist).exists():
            raise InputError(f"line list {cfg.data.linelist} does not exist")
        outputs = getattr(cls(), cls.FUNCTION)(cfg, **extra)
    except USAGE_ERRORS as e:
        logger.error(str(e))
        return EXIT_USAGE
    except NowcastError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.exception(f"internal error: {e}")
        return EXIT_FAILURE
    for path in outputs:
        logger.info(f"output: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
