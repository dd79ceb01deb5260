"""Scenario parsing, serialization round-trips, CLI commands and exit codes."""

import json

import numpy as np
import pytest

import simshield as ss
from simshield.cli import main
from simshield.scenario import scenario_from_dict, serialize_scenario


def tiny_dict(**over):
    data = {
        "particles": {"levels": [1, 1]},
        "omega": [0.5, 0.6],
        "bath": {"gamma": 0.1, "eta_over_pi": [0.0], "t_corr": [[0.7], [1.05]],
                 "k0_rmin": 1.0, "positions": [0.0, 0.1]},
        "modulation": {"mode": "per_channel", "tau": [0.8, 0.9],
                       "theta_over_pi": [0.5, -0.5]},
        "initial_state": "bell_singlet",
        "time": {"horizon": 20.0, "output_step": 0.5},
        "symmetry": {"kind": "iip", "threshold": 0.05, "samples": 24},
        "quadrature": {"rtol": 1e-6, "steps_per_tau": 4, "min_time_points": 100,
                       "grid_rtol": 0.001, "max_grid_refinements": 0},
        "optimize": {"free_tau": [0, 1], "free_theta": [0, 1], "budget": 50,
                     "weight": 0.0},
    }
    data.update(over)
    return data


def write_scenario(tmp_path, name="scn.json", **over):
    path = tmp_path / name
    path.write_text(json.dumps(tiny_dict(**over)))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = np.array([[float(v) for v in line.split(",")] for line in fh])
    return header, rows


def test_parse_resolves_fields(tmp_path):
    scn = ss.parse_scenario(write_scenario(tmp_path))
    assert scn.n_channels == 2
    assert scn.channels[0].particle == 1 and scn.channels[1].particle == 2
    assert scn.sequence.tau == (0.8, 0.9)
    assert np.isclose(scn.sequence.theta[0], 0.5 * np.pi, atol=0)
    assert scn.initial_name == "bell_singlet"
    assert scn.horizon == 20.0 and scn.output_step == 0.5
    assert scn.config.rtol == 1e-6
    times = scn.output_times()
    assert times[0] == 0.0 and times[-1] == 20.0 and len(times) == 41


def test_serialize_parse_round_trip(tmp_path):
    s1 = ss.parse_scenario(write_scenario(tmp_path))
    d1 = serialize_scenario(s1)
    s2 = scenario_from_dict(d1)
    d2 = serialize_scenario(s2)
    assert d1 == d2
    assert s2.sequence == s1.sequence
    assert s2.horizon == s1.horizon
    assert np.array_equal(s2.initial_state, s1.initial_state)


def test_inverse_ten_gamma_scales_run_times_only(tmp_path):
    over = {
        "bath": {"gamma": 0.05, "eta_over_pi": [0.0], "t_corr": [[0.7], [1.05]],
                 "k0_rmin": 1.0, "positions": [0.0, 0.1]},
        "time": {"horizon": 10.0, "output_step": 0.5, "unit": "inverse_ten_gamma"},
    }
    scn = ss.parse_scenario(write_scenario(tmp_path, **over))
    # scale = 1/(10*gamma) = 2: horizon, output step, pulse periods only
    assert scn.horizon == 20.0 and scn.output_step == 1.0
    assert scn.sequence.tau == (1.6, 1.8)
    assert np.isclose(scn.sequence.theta[0], 0.5 * np.pi, atol=0)   # angles unscaled
    assert scn.model.t_corr == ((0.7,), (1.05,))                    # bath unscaled
    assert serialize_scenario(scn)["time"]["unit"] == "natural"


def test_parse_rejects_malformed(tmp_path):
    with pytest.raises(ss.ValidationError):
        ss.parse_scenario(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("not json at all")
    with pytest.raises(ss.ValidationError):
        ss.parse_scenario(str(bad))
    with pytest.raises(ss.ValidationError):
        ss.parse_scenario(write_scenario(tmp_path, omega=[0.5]))       # wrong count
    with pytest.raises(ss.ValidationError):
        ss.parse_scenario(write_scenario(tmp_path, quadrature={"tol": 1e-6}))
    with pytest.raises(ss.ValidationError):
        ss.parse_scenario(write_scenario(
            tmp_path, time={"horizon": 20.0, "output_step": 0.5, "unit": "seconds"}))
    with pytest.raises(ss.ValidationError):
        ss.parse_scenario(write_scenario(tmp_path, initial_state="ghz"))
    with pytest.raises(ss.ValidationError):
        ss.parse_scenario(write_scenario(
            tmp_path, initial_state={"amplitudes": [[1.0, 0.0], [1.0, 0.0]]}))


def test_explicit_amplitudes(tmp_path):
    r = 1.0 / np.sqrt(2.0)
    path = write_scenario(tmp_path, initial_state={"amplitudes": [[r, 0.0], [0.0, -r]]})
    scn = ss.parse_scenario(path)
    assert scn.initial_name is None
    assert np.allclose(scn.initial_state, [r, -1j * r], atol=0)
    d = serialize_scenario(scn)
    assert d["initial_state"]["amplitudes"] == [[r, 0.0], [0.0, -r]]


def test_simulate_outputs_and_product_rule(tmp_path):
    cfgp = write_scenario(tmp_path)
    out = tmp_path / "run"
    assert main(["simulate", "--config", cfgp, "--out", str(out)]) == 0
    for name in ("fidelity.csv", "jmatrix.csv", "fidelity.plt", "jmatrix.plt",
                 "run_manifest.json"):
        assert (out / name).exists()

    header, rows = read_csv(out / "fidelity.csv")
    assert header == ["t", "F", "F_p", "F_c", "C"]
    t, f, f_p, f_c, c = rows.T
    assert np.array_equal(t, np.arange(41) * 0.5)
    assert np.max(np.abs(f - f_p * f_c)) <= 1e-12
    assert np.isclose(f[0], 1.0, atol=1e-12) and np.isclose(c[0], 1.0, atol=1e-12)
    # values are written with full precision: reformatting reproduces the file
    line = (out / "fidelity.csv").read_text().splitlines()[5]
    assert line == ",".join("%.17g" % v for v in rows[4])

    jh, jrows = read_csv(out / "jmatrix.csv")
    assert len(jh) == 1 + 2 * 4 and jh[1] == "ReJ_A1A1" and jh[2] == "ImJ_A1A1"
    assert np.allclose(jrows[0, 1:], 0.0, atol=0)            # J(0) = 0

    man = json.loads((out / "run_manifest.json").read_text())
    assert man["command"] == "simulate" and man["tool"] == "simshield"
    assert man["outputs"] == ["fidelity.csv", "jmatrix.csv", "fidelity.plt", "jmatrix.plt"]
    assert "final_F" in man["diagnostics"]


def test_manifest_reproduces_run(tmp_path):
    cfgp = write_scenario(tmp_path)
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert main(["simulate", "--config", cfgp, "--out", str(out1)]) == 0
    # the manifest doubles as a config and reproduces the run byte for byte
    assert main(["simulate", "--config", str(out1 / "run_manifest.json"),
                 "--out", str(out2)]) == 0
    assert (out1 / "fidelity.csv").read_bytes() == (out2 / "fidelity.csv").read_bytes()
    assert (out1 / "jmatrix.csv").read_bytes() == (out2 / "jmatrix.csv").read_bytes()


def test_symmetry_command(tmp_path):
    cfgp = write_scenario(tmp_path)
    out = tmp_path / "sym"
    assert main(["symmetry", "--config", cfgp, "--out", str(out)]) == 0
    header, rows = read_csv(out / "symmetry.csv")
    assert header == ["t", "cross_block", "diagonal_spread", "intra_block_spread",
                      "total", "deviation_final", "cross_suppression_final"]
    total = rows[:, 4]
    assert np.isclose(rows[0, 5], total.max(), rtol=1e-15)   # deviation = max total
    man = json.loads((out / "run_manifest.json").read_text())
    diag = man["diagnostics"]
    assert diag["kind"] == "iip" and isinstance(diag["within_threshold"], bool)
    assert diag["deviation"] >= 0.0 and diag["cross_suppression"] >= 0.0


def test_optimize_budget_exhausted_returns_4(tmp_path):
    # theta fixed at zero: varying tau alone cannot change the objective,
    # so the search never improves on the initial point
    over = {
        "particles": {"levels": [1]},
        "omega": [0.5],
        "bath": {"gamma": 0.1, "eta_over_pi": [0.0], "t_corr": [[0.8]],
                 "k0_rmin": 1.0, "positions": [0.0]},
        "modulation": {"mode": "none"},
        "initial_state": {"amplitudes": [[1.0, 0.0]]},
        "time": {"horizon": 5.0, "output_step": 1.0},
        "quadrature": {"rtol": 1e-6, "steps_per_tau": 4, "min_time_points": 40,
                       "grid_rtol": 0.001, "max_grid_refinements": 0},
        "optimize": {"free_tau": [0], "free_theta": [], "budget": 50, "weight": 1.0},
    }
    cfgp = write_scenario(tmp_path, **over)
    out = tmp_path / "opt"
    assert main(["optimize", "--config", cfgp, "--out", str(out)]) == 4
    # outputs are still written so the attempt can be inspected
    header, rows = read_csv(out / "trace.csv")
    assert header == ["evaluation", "objective", "best_so_far"]
    assert np.ptp(rows[:, 1]) == 0.0                         # flat objective
    man = json.loads((out / "run_manifest.json").read_text())
    assert man["diagnostics"]["improved"] is False


def test_optimize_improves_and_writes_scenario(tmp_path):
    cfgp = write_scenario(tmp_path, time={"horizon": 12.0, "output_step": 1.0},
                          quadrature={"rtol": 1e-6, "steps_per_tau": 4,
                                      "min_time_points": 60, "grid_rtol": 0.001,
                                      "max_grid_refinements": 0},
                          optimize={"free_tau": [0, 1], "free_theta": [0, 1],
                                    "budget": 50, "weight": 0.0,
                                    "tau_bounds": [0.3, 2.0]},
                          symmetry={"kind": "iip", "threshold": 0.5, "samples": 12})
    out = tmp_path / "opt"
    assert main(["optimize", "--config", cfgp, "--out", str(out), "--seed", "0"]) == 0
    best = ss.parse_scenario(str(out / "optimized.scenario"))
    man = json.loads((out / "run_manifest.json").read_text())
    assert man["diagnostics"]["improved"] is True
    assert tuple(man["diagnostics"]["tau"]) == best.sequence.tau
    _, rows = read_csv(out / "trace.csv")
    assert np.all(np.diff(rows[:, 2]) <= 0.0)


def test_oracle_zero_coupling_gives_zero_deviation(tmp_path):
    # eta = pi/2 makes every channel's coupling amplitude vanish
    over = {
        "particles": {"levels": [1]},
        "omega": [0.5],
        "bath": {"gamma": 0.1, "eta_over_pi": [0.5], "t_corr": [[0.8]],
                 "k0_rmin": 1.0, "positions": [0.0]},
        "modulation": {"mode": "global", "tau": 0.9, "theta_over_pi": 1.0},
        "initial_state": {"amplitudes": [[1.0, 0.0]]},
        "time": {"horizon": 5.0, "output_step": 1.0},
        "quadrature": {"rtol": 1e-6, "steps_per_tau": 4, "min_time_points": 40,
                       "grid_rtol": 0.001, "max_grid_refinements": 0},
    }
    cfgp = write_scenario(tmp_path, **over)
    out = tmp_path / "orc"
    assert main(["oracle", "--config", cfgp, "--out", str(out), "--modes", "500"]) == 0
    header, rows = read_csv(out / "oracle.csv")
    assert header == ["t", "abs_a_A1_oracle", "abs_a_A1_model", "max_deviation", "flag"]
    assert np.allclose(rows[:, 1], 1.0, atol=1e-12)          # nothing decays
    assert np.allclose(rows[:, 3], 0.0, atol=1e-12)
    man = json.loads((out / "run_manifest.json").read_text())
    assert man["diagnostics"]["max_deviation"] <= 1e-12


def test_exit_code_2_on_bad_invocation(tmp_path, capsys):
    cfgp = write_scenario(tmp_path)
    out = str(tmp_path / "x")
    assert main(["simulate", "--out", out]) == 2             # neither source
    assert main(["simulate", "--config", cfgp, "--preset", "fig2_iip",
                 "--out", out]) == 2                         # both sources
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", out]) == 2
    badp = write_scenario(tmp_path, name="bad.json", omega=[0.5])
    assert main(["simulate", "--config", badp, "--out", out]) == 2
    assert "validation error" in capsys.readouterr().err


def test_exit_code_3_on_nonconvergent_grid(tmp_path, capsys):
    cfgp = write_scenario(tmp_path, quadrature={"rtol": 1e-6, "steps_per_tau": 4,
                                                "min_time_points": 2,
                                                "grid_rtol": 1e-15,
                                                "max_grid_refinements": 0},
                          modulation={"mode": "none"})
    assert main(["simulate", "--config", cfgp, "--out", str(tmp_path / "y")]) == 3
    assert "numerical error" in capsys.readouterr().err


def test_simulate_byte_determinism(tmp_path):
    cfgp = write_scenario(tmp_path)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["simulate", "--config", cfgp, "--out", str(out1)]) == 0
    assert main(["simulate", "--config", cfgp, "--out", str(out2)]) == 0
    for name in ("fidelity.csv", "jmatrix.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_presets_parse():
    from simshield.cli import PRESETS, _preset_path
    for name in PRESETS:
        scn = ss.parse_scenario(_preset_path(name))
        assert scn.n_channels == 4
        assert scn.horizon == 100.0
        assert scn.initial_name == "dark_mes"
