import json

import numpy as np
import pandas as pd
import pytest

import commands
from nowcast.dataset import write_linelist_csv
from nowcast.epi_calendar import EpiWeek
from nowcast.models.nowcaster import NOWCAST_COLUMNS
from nowcast.simulator import simulate
from test_threshold import plateau_season

FAST = {
    "NOWCAST_MODEL__INFERENCE__GRID_POINTS": "3",
    "NOWCAST_MODEL__INFERENCE__MAP_SWEEPS": "2",
}


@pytest.fixture
def world(small_scenario, tmp_path):
    d = simulate(small_scenario)
    d.write(tmp_path / "data")
    return d, tmp_path / "data"


def run_nowcast(data_dir, out, *extra):
    return commands.main(["nowcast", "--linelist", str(data_dir / "linelist.csv"), "--as-of", "2013-W20",
                          "--seed", "1", "--samples", "50", "--no-progress", "--out", str(out), *extra],
                         environ=FAST)


def test_baseline_nowcast(world, tmp_path):
    _, data_dir = world
    assert run_nowcast(data_dir, tmp_path / "a") == commands.EXIT_OK
    frame = pd.read_csv(tmp_path / "a" / "nowcast.csv")
    assert list(frame.columns) == NOWCAST_COLUMNS
    assert len(frame) == 9
    assert (frame["year"].iloc[-1], frame["week"].iloc[-1]) == (2013, 20)
    assert (frame["observed_partial"] <= frame["lo95"]).all()
    diagnostics = json.loads((tmp_path / "a" / "diagnostics.json").read_text())
    assert diagnostics["seed"] == 1 and diagnostics["d_max"] == 8


def test_reruns_are_byte_identical(world, tmp_path):
    _, data_dir = world
    assert run_nowcast(data_dir, tmp_path / "a") == commands.EXIT_OK
    assert run_nowcast(data_dir, tmp_path / "b") == commands.EXIT_OK
    for name in ("nowcast.csv", "diagnostics.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_signal_model_nowcast(world, tmp_path):
    _, data_dir = world
    signal = f"google_dengue={data_dir / 'signal_google_dengue.csv'}"
    assert run_nowcast(data_dir, tmp_path / "g", "--model", "google-dengue", "--signal", signal) == commands.EXIT_OK
    assert (tmp_path / "g" / "nowcast.csv").exists()


def test_naive_nowcast_command(world, tmp_path):
    _, data_dir = world
    assert run_nowcast(data_dir, tmp_path / "n", "--model", "naive") == commands.EXIT_OK
    frame = pd.read_csv(tmp_path / "n" / "nowcast.csv")
    assert len(frame) == 1
    assert frame["lo95"].iloc[0] == frame["hi95"].iloc[0] == frame["point"].iloc[0]


@pytest.mark.parametrize("extra", [
    ("--model", "google-dengue-twitter"),
    ("--model", "google-trends"),
    ("--window", "2y", "--dmax-coverage", "1.5"),
])
def test_usage_errors_exit_2(world, tmp_path, extra):
    _, data_dir = world
    signal = f"google_dengue={data_dir / 'signal_google_dengue.csv'}"
    assert run_nowcast(data_dir, tmp_path / "x", "--signal", signal, *extra) == commands.EXIT_USAGE


def test_missing_seed_and_missing_file_exit_2(world, tmp_path):
    _, data_dir = world
    assert commands.main(["nowcast", "--linelist", str(data_dir / "linelist.csv"), "--as-of", "2013-W20",
                          "--out", str(tmp_path)], environ={}) == commands.EXIT_USAGE
    assert commands.main(["nowcast", "--linelist", str(tmp_path / "nope.csv"), "--as-of", "2013-W20",
                          "--seed", "1", "--out", str(tmp_path)], environ={}) == commands.EXIT_USAGE
    assert commands.main(["threshold", "--linelist", str(data_dir / "linelist.csv"), "--start", "spring",
                          "--out", str(tmp_path)], environ={}) == commands.EXIT_USAGE


def test_unknown_flag_is_argparse_usage_error():
    with pytest.raises(SystemExit) as err:
        commands.main(["nowcast", "--bogus"])
    assert err.value.code == 2


def test_delays_with_immediate_entry(make_linelist, tmp_path):
    write_linelist_csv(make_linelist(EpiWeek(2012, 1), np.full((12, 1), 4)), tmp_path / "cases.csv")
    rc = commands.main(["delays", "--linelist", str(tmp_path / "cases.csv"), "--out", str(tmp_path / "out")],
                       environ={})
    assert rc == commands.EXIT_OK
    summary = json.loads((tmp_path / "out" / "delays.json").read_text())
    assert summary["mean_weeks_to_95"] == 0.0
    assert summary["mean_weeks_to_80"] == 0.0
    assert summary["cases"] == 48
    curves = pd.read_csv(tmp_path / "out" / "delay_curves.csv")
    assert set(curves.columns) == {"year", "week", "delay", "fraction"}


def test_threshold_of_identical_seasons(make_linelist, tmp_path):
    counts = np.concatenate([plateau_season(30), plateau_season(30, length=53), [0.0]]).astype(np.int64)
    write_linelist_csv(make_linelist(EpiWeek(2013, 1), counts[:, None]), tmp_path / "cases.csv")
    rc = commands.main(["threshold", "--linelist", str(tmp_path / "cases.csv"), "--start", "2013-W01",
                        "--end", "2015-W01", "--out", str(tmp_path / "out")], environ={})
    assert rc == commands.EXIT_OK
    result = json.loads((tmp_path / "out" / "threshold.json").read_text())
    assert result["seasons"] == 2
    assert result["threshold"] == pytest.approx(30.0)


def test_simulate_then_evaluate(tmp_path):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps({"first_week": "2012-W01", "amplitudes": [600.0, 900.0],
                                    "delay_regimes": [{"start": 0, "law": [0.5, 0.3, 0.2]}]}))
    data_dir = tmp_path / "data"
    assert commands.main(["simulate", "--seed", "3", "--scenario", str(scenario), "--weeks", "70",
                          "--out", str(data_dir)], environ={}) == commands.EXIT_OK
    assert len(pd.read_csv(data_dir / "truth.csv")) == 70

    environ = {**FAST, "NOWCAST_DATA__COMPLETENESS_HORIZON": "8"}
    out = tmp_path / "eval"
    rc = commands.main(["evaluate", "--linelist", str(data_dir / "linelist.csv"), "--start", "2012-W30",
                        "--end", "2012-W33", "--models", "baseline,naive", "--samples", "30", "--seed", "1",
                        "--window", "1y", "--no-progress", "--out", str(out)], environ=environ)
    assert rc == commands.EXIT_OK
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics["models"]) == {"baseline", "naive"}
    assert metrics["models"]["baseline"]["rmae"] == 1.0
    assert metrics["models"]["baseline"]["n_weeks"] == 4
    assert len(pd.read_csv(out / "nowcasts_baseline.csv")) == 4
    assert (out / "gaps.csv").exists()

    # without the horizon override the last weeks are not fully reported yet
    assert commands.main(["evaluate", "--linelist", str(data_dir / "linelist.csv"), "--start", "2012-W30",
                          "--end", "2013-W10", "--seed", "1", "--out", str(out)], environ={}) == commands.EXIT_USAGE


def test_flags_reach_the_config():
    parser = commands.build_parser()
    args = parser.parse_args(["evaluate", "--linelist", "x.csv", "--start", "2012W21", "--end", "2012-W40",
                              "--seed", "4", "--window", "6m", "--models", "baseline", "--model", "twitter",
                              "--no-progress"])
    tree, extra = commands.flag_overrides(commands.EvaluateCommand, args)
    assert tree["evaluation"]["window"] == "6m"
    assert tree["evaluation"]["start"] == "2012-W21"
    assert tree["evaluation"]["models"] == ["baseline", "twitter"]
    assert tree["sampling"]["seed"] == 4
    assert tree["log"]["progress"] is False
    assert extra == {}

    args = parser.parse_args(["simulate", "--seed", "2", "--weeks", "30"])
    tree, extra = commands.flag_overrides(commands.SimulateCommand, args)
    assert extra == {"weeks": 30}


def test_correlate_signals_with_final_counts(make_linelist, tmp_path):
    counts = np.arange(1, 13)
    write_linelist_csv(make_linelist(EpiWeek(2012, 1), counts[:, None]), tmp_path / "cases.csv")
    rows = "\n".join(f"2012,{i + 1},{v}" for i, v in enumerate(counts[::-1]))
    (tmp_path / "tweets.csv").write_text("year,week,value\n" + rows + "\n")
    (tmp_path / "flat.csv").write_text("year,week,value\n" + "\n".join(f"2012,{w},3" for w in range(1, 13)) + "\n")

    rc = commands.main(["correlate", "--linelist", str(tmp_path / "cases.csv"), "--signal",
                        f"twitter={tmp_path / 'tweets.csv'}", "--start", "2012-W03", "--out", str(tmp_path / "out")],
                       environ={})
    assert rc == commands.EXIT_OK
    result = json.loads((tmp_path / "out" / "correlation.json").read_text())
    assert result["signals"]["twitter"] == {"tau": pytest.approx(-1.0), "pairs": 10}

    rc = commands.main(["correlate", "--linelist", str(tmp_path / "cases.csv"), "--signal",
                        f"twitter={tmp_path / 'flat.csv'}", "--out", str(tmp_path / "flat")], environ={})
    assert rc == commands.EXIT_USAGE
    rc = commands.main(["correlate", "--linelist", str(tmp_path / "cases.csv"), "--out", str(tmp_path / "x")],
                       environ={})
    assert rc == commands.EXIT_USAGE
