"""Tests for scenario configuration, runners, and the command-line entry."""

import math
import os

import numpy as np
import pytest

from ultralocal.cli import (
    DEFAULT_SEED,
    SCENARIOS,
    CompareReport,
    ConfigError,
    ScenarioConfig,
    compare_controllers,
    main,
    parse_config,
    run_scenario,
    tuned_ipd_controller,
    tuned_pid_controller,
)
from ultralocal.control import ANALYSIS_FORM, DELAYED_INPUT
from ultralocal.sim import CONSTANT, SMOOTH_STEP, load_trace_csv


def _cfg(scenario, **overrides):
    kv = {"scenario": scenario}
    kv.update({k: str(v) for k, v in overrides.items()})
    return parse_config(None, kv)


def _read_metrics(path) -> dict:
    out = {}
    for line in open(path):
        key, sep, value = line.strip().partition(" = ")
        assert sep, "malformed metrics line %r" % line
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# parse_config


def test_defaults_ipd_nominal():
    cfg = _cfg("ipd-nominal")
    assert cfg.name == "ipd-nominal"
    assert cfg.out == "out"
    assert cfg.seed == DEFAULT_SEED
    assert cfg.sigma == 0.01
    assert cfg.h == 1e-3
    assert cfg.duration == 20.0
    assert cfg.alpha == 0.5
    assert cfg.t_filter == 0.1
    assert cfg.y0 == -0.05
    assert cfg.deltas == (1.0,)
    assert cfg.ipd_pole == 0.5
    assert cfg.pid_pole == 0.66
    assert cfg.estimator_variant == ANALYSIS_FORM
    assert cfg.ref.kind == SMOOTH_STEP
    assert (cfg.ref.y_start, cfg.ref.y_end) == (0.0, 1.0)
    assert (cfg.ref.t_start, cfg.ref.t_end) == (1.0, 6.0)


def test_default_deltas_per_scenario():
    assert _cfg("ipd-delta").deltas == (0.8, 0.5)
    assert _cfg("pid-delta").deltas == (0.8, 0.5)
    assert _cfg("compare").deltas == (1.0, 0.8, 0.5)
    assert _cfg("pid-nominal").deltas == (1.0,)


def test_default_ref_for_ip_attempt():
    cfg = _cfg("ip-attempt")
    assert cfg.ref.kind == CONSTANT
    assert cfg.ref.level == 0.0


def test_missing_scenario_rejected():
    with pytest.raises(ConfigError, match="scenario"):
        parse_config(None, {})


def test_unknown_scenario_rejected():
    with pytest.raises(ConfigError, match="unknown scenario"):
        parse_config(None, {"scenario": "warp-drive"})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="frobnicate"):
        _cfg("ipd-nominal", frobnicate=1)


def test_delta_bounds_message():
    with pytest.raises(ConfigError, match=r"delta must be within \[0, 1\], got 1.5"):
        _cfg("ipd-delta", delta="1.5")


def test_delta_list_parsing():
    assert _cfg("ipd-delta", delta="1,0.8,0.5").deltas == (1.0, 0.8, 0.5)
    with pytest.raises(ConfigError):
        _cfg("ipd-delta", delta="0.8,oops")


def test_seed_bounds():
    assert _cfg("ipd-nominal", seed="12").seed == 12
    with pytest.raises(ConfigError, match="seed"):
        _cfg("ipd-nominal", seed="-1")
    with pytest.raises(ConfigError, match="seed"):
        _cfg("ipd-nominal", seed=str(2**64))
    with pytest.raises(ConfigError, match="seed"):
        _cfg("ipd-nominal", seed="1.5")


def test_sigma_must_be_nonnegative():
    assert _cfg("ipd-nominal", sigma="0").sigma == 0.0
    with pytest.raises(ConfigError, match="sigma"):
        _cfg("ipd-nominal", sigma="-0.01")


def test_ref_parsing():
    cfg = _cfg("ipd-nominal", ref="constant:0.3")
    assert cfg.ref.kind == CONSTANT and cfg.ref.level == 0.3
    cfg = _cfg("ipd-nominal", ref="smooth-step:0,2,1,4")
    assert cfg.ref.kind == SMOOTH_STEP
    assert (cfg.ref.y_end, cfg.ref.t_end) == (2.0, 4.0)
    with pytest.raises(ConfigError, match="ref"):
        _cfg("ipd-nominal", ref="wiggle:1")
    with pytest.raises(ConfigError, match="ref"):
        _cfg("ipd-nominal", ref="smooth-step:0,1")


def test_axis_parsing():
    cfg = _cfg("stabmap-fixed-t", kp_axis="-2,2,11")
    assert cfg.kp_axis == (-2.0, 2.0, 11)
    with pytest.raises(ConfigError, match="alpha_axis"):
        _cfg("stabmap-fixed-t", alpha_axis="1,2")


def test_estimator_variant_parsing():
    assert _cfg("ipd-nominal", estimator="delayed-input").estimator_variant == DELAYED_INPUT
    with pytest.raises(ConfigError, match="estimator"):
        _cfg("ipd-nominal", estimator="kalman")


def test_config_file_and_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# tracking run with degraded actuator\n"
        "\n"
        "scenario = ipd-delta\n"
        "delta = 0.8\n"
        "sigma = 0.02\n")
    cfg = parse_config(str(path), {})
    assert cfg.name == "ipd-delta"
    assert cfg.deltas == (0.8,)
    assert cfg.sigma == 0.02
    # overrides (flags) beat the file
    cfg = parse_config(str(path), {"delta": "0.5"})
    assert cfg.deltas == (0.5,)
    assert cfg.sigma == 0.02


def test_config_file_malformed_line(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("scenario = ipd-nominal\njust-a-line\n")
    with pytest.raises(ConfigError, match="bad.cfg:2"):
        parse_config(str(path), {})


def test_config_file_missing(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(str(tmp_path / "nope.cfg"), {})


# ---------------------------------------------------------------------------
# Tuned controllers


def test_tuned_controllers_from_poles():
    cfg = _cfg("ipd-nominal")
    ipd, est = tuned_ipd_controller(cfg)
    assert (ipd.kp, ipd.kd, ipd.alpha) == (0.25, 1.0, 0.5)
    assert est.nu == 2 and est.variant == ANALYSIS_FORM
    pid = tuned_pid_controller(cfg)
    assert math.isclose(pid.kp, 1.3068, rel_tol=1e-9)
    assert math.isclose(pid.ki, 0.287496, rel_tol=1e-9)
    assert math.isclose(pid.kd, 2.98, rel_tol=1e-9)


def test_tuned_ipd_delayed_variant():
    cfg = _cfg("ipd-nominal", estimator="delayed-input")
    _, est = tuned_ipd_controller(cfg)
    assert est.variant == DELAYED_INPUT
    assert est.plant_coeffs is None


# ---------------------------------------------------------------------------
# Scenario runners


def test_run_scenario_ipd_nominal(tmp_path):
    cfg = _cfg("ipd-nominal", out=tmp_path, duration=2)
    written = run_scenario(cfg)
    trace_path = os.path.join(str(tmp_path), "ipd-nominal", "trace_ipd_1.csv")
    metrics_path = os.path.join(str(tmp_path), "ipd-nominal", "metrics.txt")
    assert set(written) == {trace_path, metrics_path}
    data = load_trace_csv(trace_path)
    assert data["t"].shape[0] == 2001
    m = _read_metrics(metrics_path)
    assert m["scenario"] == "ipd-nominal"
    assert m["seed"] == str(DEFAULT_SEED)
    assert float(m["ipd_delta1_rmse"]) > 0.0
    assert m["ipd_delta1_diverged"] == "False"


def test_run_scenario_delta_writes_one_trace_per_delta(tmp_path):
    cfg = _cfg("ipd-delta", out=tmp_path, duration=2)
    written = run_scenario(cfg)
    base = os.path.join(str(tmp_path), "ipd-delta")
    assert os.path.join(base, "trace_ipd_0.8.csv") in written
    assert os.path.join(base, "trace_ipd_0.5.csv") in written
    m = _read_metrics(os.path.join(base, "metrics.txt"))
    assert "ipd_delta0.8_tail_max_abs_error" in m
    assert "ipd_delta0.5_tail_max_abs_error" in m


def test_run_scenario_byte_identical_reruns(tmp_path):
    a = _cfg("ipd-nominal", out=tmp_path / "a", duration=2)
    b = _cfg("ipd-nominal", out=tmp_path / "b", duration=2)
    run_scenario(a)
    run_scenario(b)
    for name in ("trace_ipd_1.csv", "metrics.txt"):
        pa = tmp_path / "a" / "ipd-nominal" / name
        pb = tmp_path / "b" / "ipd-nominal" / name
        assert pa.read_bytes() == pb.read_bytes()


def test_run_scenario_ip_attempt(tmp_path):
    cfg = _cfg("ip-attempt", out=tmp_path)
    written = run_scenario(cfg)
    base = os.path.join(str(tmp_path), "ip-attempt")
    assert os.path.join(base, "trace_ip_1.csv") in written
    assert os.path.join(base, "trace_ip-stable_1.csv") in written
    m = _read_metrics(os.path.join(base, "metrics.txt"))
    # the tabulated default cell is unstable and must blow up in simulation;
    # the chosen counterpart cell is stable and must stay bounded
    assert float(m["ip_cell_max_root_real"]) > 0.0
    assert m["ip_diverged"] == "True"
    assert float(m["ip_stable_cell_max_root_real"]) < 0.0
    assert m["ip_stable_diverged"] == "False"
    assert float(m["ip_stable_tail_max_abs_error"]) < 0.05
    diverged = load_trace_csv(os.path.join(base, "trace_ip_1.csv"))
    assert abs(diverged["y_true"][-1]) > 1e3


def test_run_scenario_stabmap_fixed_t(tmp_path):
    cfg = _cfg("stabmap-fixed-t", out=tmp_path,
               kp_axis="-1,1,11", alpha_axis="-1,1,11")
    run_scenario(cfg)
    base = os.path.join(str(tmp_path), "stabmap-fixed-t")
    lines = open(os.path.join(base, "grid.csv")).read().splitlines()
    assert lines[0] == "kp,alpha,verdict"
    assert len(lines) == 1 + 121 + 1
    m = _read_metrics(os.path.join(base, "metrics.txt"))
    counts = sum(int(m["%s_cells" % k]) for k in
                 ("stable", "unstable", "marginal", "excluded"))
    assert counts == 121
    sf = float(m["stable_fraction"])
    assert 0.0 < sf < 1.0
    assert sf == int(m["stable_cells"]) / 121


def test_run_scenario_stabmap_all_t(tmp_path):
    cfg = _cfg("stabmap-all-t", out=tmp_path,
               kp_axis="-1,1,5", alpha_axis="-1,1,5", t_axis="0.1,0.5")
    run_scenario(cfg)
    base = os.path.join(str(tmp_path), "stabmap-all-t")
    lines = open(os.path.join(base, "grid.csv")).read().splitlines()
    assert lines[0] == "kp,alpha,t,verdict"
    assert all(",all," in line for line in lines[1:-1])


def test_compare_report_and_winner_recomputable(tmp_path):
    cfg = _cfg("compare", out=tmp_path, duration=4)
    written = run_scenario(cfg)
    base = os.path.join(str(tmp_path), "compare")
    m = _read_metrics(os.path.join(base, "metrics.txt"))
    for key in ("1", "0.8", "0.5"):
        for kind in ("ipd", "pid"):
            assert os.path.join(base, "trace_%s_%s.csv" % (kind, key)) in written
        # the recorded winner must follow from the trace files alone
        tails = {}
        for kind in ("ipd", "pid"):
            data = load_trace_csv(os.path.join(base, "trace_%s_%s.csv" % (kind, key)))
            e = data["e"]
            start = min(int(math.floor(0.8 * e.shape[0])), e.shape[0] - 1)
            tails[kind] = float(np.max(np.abs(e[start:])))
        expected = "ipd" if tails["ipd"] <= tails["pid"] else "pid"
        assert m["winner_delta%s" % key] == expected
        ratio = float(m["tail_ratio_pid_over_ipd_delta%s" % key])
        assert math.isclose(ratio, tails["pid"] / tails["ipd"], rel_tol=1e-12)


def test_compare_controllers_entries():
    cfg = _cfg("compare", duration=2, delta="1,0.5")
    report, traces = compare_controllers(cfg)
    assert isinstance(report, CompareReport)
    assert set(report.entries) == {("ipd", "1"), ("pid", "1"),
                                   ("ipd", "0.5"), ("pid", "0.5")}
    assert set(report.winners) == {"1", "0.5"}
    assert set(traces) == set(report.entries)
    assert all(w in ("ipd", "pid") for w in report.winners.values())


# ---------------------------------------------------------------------------
# main()


def test_main_runs_scenario(tmp_path, capsys):
    rc = main(["--scenario", "stabmap-fixed-t", "--out", str(tmp_path),
               "--set", "kp_axis=-1,1,5", "--set", "alpha_axis=-1,1,5"])
    captured = capsys.readouterr()
    assert rc == 0
    assert "wrote" in captured.out
    assert "grid.csv" in captured.out


def test_main_rejects_unknown_scenario(capsys):
    rc = main(["--scenario", "warp-drive"])
    captured = capsys.readouterr()
    assert rc == 2
    assert captured.err.startswith("error:")


def test_main_rejects_malformed_set(capsys):
    rc = main(["--scenario", "ipd-nominal", "--set", "noequals"])
    captured = capsys.readouterr()
    assert rc == 2
    assert "KEY=VALUE" in captured.err


def test_main_requires_scenario(capsys):
    rc = main([])
    assert rc == 2
    assert "scenario" in capsys.readouterr().err


def test_main_dedicated_flags_beat_set(tmp_path):
    rc = main(["--scenario", "ipd-nominal", "--out", str(tmp_path),
               "--seed", "2", "--set", "seed=1", "--set", "duration=2"])
    assert rc == 0
    m = _read_metrics(os.path.join(str(tmp_path), "ipd-nominal", "metrics.txt"))
    assert m["seed"] == "2"


def test_scenarios_tuple_is_complete():
    assert len(SCENARIOS) == 8
    assert len(set(SCENARIOS)) == 8
    for name in SCENARIOS:
        assert isinstance(ScenarioConfig, type)
        assert name == name.strip().lower()
