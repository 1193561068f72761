import json
from pathlib import Path

import jsonschema
import pytest

from ezddc.cli import crossing_violations, load_schema, main
from ezddc.model import make_toy_model

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
LATE = str(CONFIGS / "toy_late.json")
SEPARABLE = str(CONFIGS / "toy_separable.json")
FAST = ["--n-sim-eps", "300"]


def read_json(path):
    return json.loads(Path(path).read_text())


def validate(path, schema):
    jsonschema.validate(read_json(path), load_schema(schema))


def test_solve_writes_value_function(tmp_path, capsys):
    assert main(["solve", "--config", LATE, "--out", str(tmp_path), *FAST]) == 0
    lines = (tmp_path / "value_function.csv").read_text().splitlines()
    assert lines[0] == "x_bin,value" and len(lines) == 4
    validate(tmp_path / "solve_report.json", "solve_report")
    validate(tmp_path / "manifest.json", "manifest")
    assert "converged=True" in capsys.readouterr().out


def test_solve_from_both_starts_agrees(tmp_path):
    up, lo = tmp_path / "up", tmp_path / "lo"
    assert main(["solve", "--config", LATE, "--out", str(up), *FAST]) == 0
    assert main(["solve", "--config", LATE, "--out", str(lo), "--start", "lower", *FAST]) == 0
    vu = [float(r.split(",")[1]) for r in (up / "value_function.csv").read_text().splitlines()[1:]]
    vl = [float(r.split(",")[1]) for r in (lo / "value_function.csv").read_text().splitlines()[1:]]
    assert max(abs(a - b) for a, b in zip(vu, vl)) <= 1e-8


def test_solve_non_convergence_exit_code(tmp_path):
    assert main(["solve", "--config", LATE, "--out", str(tmp_path), "--max-iters", "2", *FAST]) == 2
    assert read_json(tmp_path / "solve_report.json")["converged"] is False


def test_bad_transition_row_is_named(tmp_path, capsys):
    cfg = read_json(LATE)
    cfg["transition"]["rows"].pop()
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert main(["solve", "--config", str(path), "--out", str(tmp_path)]) == 1
    assert "transition" in capsys.readouterr().err


def test_unknown_field_is_named(tmp_path, capsys):
    cfg = read_json(LATE)
    cfg["payoff"]["discount"] = 0.9
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert main(["solve", "--config", str(path), "--out", str(tmp_path)]) == 1
    assert "discount" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == 1
    assert "nope.json" in capsys.readouterr().err


def test_simulate_is_byte_reproducible(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["simulate", "--config", LATE, "--n-buses", "2", "--n-months", "3", "--seed", "7",
                     "--out", str(out), *FAST]) == 0
    assert len((a / "panel.csv").read_text().splitlines()) == 1 + 6
    for name in ("panel.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    validate(a / "manifest.json", "manifest")


@pytest.fixture(scope="module")
def toy_panel_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("panel")
    assert main(["simulate", "--config", SEPARABLE, "--n-buses", "200", "--n-months", "30", "--seed", "3",
                 "--out", str(out), *FAST]) == 0
    return out / "panel.csv"


def estimation_settings(tmp_path, **extra):
    d = {"n_bins": 3, "beta_fixed": 0.9, "rc_fixed": 3.0, "n_sim_eps": 200, "n_ccp_draws": 2000,
         "max_evals": 60, "f_tol": 1e-3, "x_tol": 1e-3, "restart": False,
         "start": {"theta_d": 3.0, "theta_x": 0.5, "sigma": 2.0, "alpha": 0.3, "rho": 0.3}}
    d.update(extra)
    path = tmp_path / "est.json"
    path.write_text(json.dumps(d))
    return str(path)


def test_estimate_separable_ties_rho_to_alpha(tmp_path, toy_panel_csv):
    rc = main(["estimate", "--data", str(toy_panel_csv), "--config", estimation_settings(tmp_path),
               "--spec", "separable", "--out", str(tmp_path)])
    assert rc in (0, 2)
    res = read_json(tmp_path / "estimate_separable.json")
    assert res["theta_hat"]["rho"] == res["theta_hat"]["alpha"]
    assert "rho" not in res["free_params"]
    validate(tmp_path / "estimate_separable.json", "estimate_result")
    validate(tmp_path / "manifest_estimate_separable.json", "manifest")


def test_estimate_rust_orig_fixes_revenue(tmp_path, toy_panel_csv):
    rc = main(["estimate", "--data", str(toy_panel_csv), "--config", estimation_settings(tmp_path),
               "--spec", "rust-orig", "--out", str(tmp_path)])
    assert rc in (0, 2)
    res = read_json(tmp_path / "estimate_rust-orig.json")
    assert res["free_params"] == ["theta_x", "sigma"]
    assert res["theta_hat"]["theta_d"] == 0.0 and "theta_d" not in res["std_errors"]


def test_estimate_rejects_invalid_panel(tmp_path, toy_panel_csv, capsys):
    lines = toy_panel_csv.read_text().splitlines()
    fields = lines[5].split(",")
    fields[lines[0].split(",").index("decision")] = "7"
    lines[5] = ",".join(fields)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["estimate", "--data", str(bad), "--config", estimation_settings(tmp_path),
                 "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "invalid panel" in err and "row" in err


def test_estimate_rejects_unknown_setting(tmp_path, toy_panel_csv, capsys):
    assert main(["estimate", "--data", str(toy_panel_csv), "--config",
                 estimation_settings(tmp_path, learning_rate=0.1), "--out", str(tmp_path)]) == 1
    assert "learning_rate" in capsys.readouterr().err


def fake_estimate(path, spec, free, loglik, n_obs=1000):
    theta = {"theta_d": 0.0, "theta_x": 0.1, "sigma": 1.0, "alpha": 0.1, "rho": 0.1}
    d = {"spec": spec, "free_params": list(free), "theta_hat": theta,
         "std_errors": {k: 0.01 for k in free}, "se_failures": [],
         "conf_int_95": {k: [theta[k] - 0.02, theta[k] + 0.02] for k in free},
         "loglik": loglik, "n_obs": n_obs, "converged": True, "eval_count": 10, "seed": 0,
         "draw_fingerprint": "x", "model": make_toy_model().to_dict(), "config": {}, "library_version": "0.1.0"}
    path.write_text(json.dumps(d))
    return str(path)


def test_lr_test_published_numbers(tmp_path, capsys):
    a = fake_estimate(tmp_path / "a.json", "nonseparable", ["theta_d", "theta_x", "sigma", "alpha", "rho"],
                      -299.4404)
    b = fake_estimate(tmp_path / "b.json", "separable", ["theta_d", "theta_x", "sigma", "alpha"], -300.8139)
    out = tmp_path / "out"
    assert main(["lr-test", b, a, "--out", str(out)]) == 0
    assert "statistic=2.7470 df=1 p_value=0.0974" in capsys.readouterr().out
    res = read_json(out / "lr_test.json")
    assert res["unrestricted"] == "nonseparable" and res["restricted"] == "separable"
    validate(out / "lr_test.json", "lr_test")
    validate(out / "manifest.json", "manifest")


def test_lr_test_identical_fits(tmp_path, capsys):
    a = fake_estimate(tmp_path / "a.json", "separable", ["theta_d", "theta_x", "sigma", "alpha"], -10.0)
    assert main(["lr-test", a, a]) == 0
    assert "statistic=0.0000 df=0 p_value=1.0000" in capsys.readouterr().out


def test_lr_test_rejects_non_nested(tmp_path, capsys):
    a = fake_estimate(tmp_path / "a.json", "rust-orig", ["theta_x", "sigma"], -10.0)
    b = fake_estimate(tmp_path / "b.json", "custom", ["theta_d", "sigma"], -9.0)
    assert main(["lr-test", a, b]) == 1
    assert "not nested" in capsys.readouterr().err


def test_lr_test_rejects_different_samples(tmp_path, capsys):
    a = fake_estimate(tmp_path / "a.json", "separable", ["theta_d", "theta_x", "sigma", "alpha"], -10.0)
    b = fake_estimate(tmp_path / "b.json", "rust-rev", ["theta_d", "theta_x", "sigma"], -11.0, n_obs=999)
    assert main(["lr-test", a, b]) == 1


@pytest.mark.parametrize("config,expected", [
    (SEPARABLE, "analytic bound: 0.900000"),
    (LATE, "analytic bound: 0.980784"),
])
def test_check_contraction_bounds(tmp_path, capsys, config, expected):
    assert main(["check-contraction", "--config", config, "--n-mc", "2000", "--out", str(tmp_path), *FAST]) == 0
    out = capsys.readouterr().out
    assert expected in out
    validate(tmp_path / "contraction.json", "contraction")
    assert read_json(tmp_path / "contraction.json")["unique"] is True


def test_check_contraction_without_analytic_bound(tmp_path, capsys):
    cfg = read_json(LATE)
    cfg["preferences"].update(alpha=0.8, rho=0.3)
    path = tmp_path / "early.json"
    path.write_text(json.dumps(cfg))
    assert main(["check-contraction", "--config", str(path), "--n-mc", "2000", *FAST]) == 0
    out = capsys.readouterr().out
    assert "none applies" in out and "early" in out


def test_counterfactual_single_model(tmp_path):
    assert main(["counterfactual", "--config", LATE, "--scale-dollars", "40", "--out", str(tmp_path), *FAST]) == 0
    res = read_json(tmp_path / "counterfactual.json")
    validate(tmp_path / "counterfactual.json", "ce_point")
    assert abs(res["counterfactual_value"] - res["baseline_value"]) <= 1e-6
    assert res["c_payment_dollars"] == pytest.approx(40 * res["c_payment"])


def test_counterfactual_compare(tmp_path):
    assert main(["counterfactual", "--compare", SEPARABLE, LATE, "--out", str(tmp_path), *FAST]) == 0
    res = read_json(tmp_path / "counterfactual.json")
    validate(tmp_path / "counterfactual.json", "ce_comparison")
    assert res["ratio"] == pytest.approx(res["ce_b"]["c_payment"] / res["ce_a"]["c_payment"])
    assert res["ratio"] < 1


def test_counterfactual_accepts_estimate_file(tmp_path):
    est = fake_estimate(tmp_path / "e.json", "separable", ["theta_d", "theta_x", "sigma", "alpha"], -10.0)
    assert main(["counterfactual", "--config", est, "--out", str(tmp_path), *FAST]) == 0
    validate(tmp_path / "counterfactual.json", "ce_point")


def test_counterfactual_needs_a_source(capsys):
    assert main(["counterfactual"]) == 1
    assert "--config" in capsys.readouterr().err


def test_counterfactual_bracket_failure_is_numeric_alarm(tmp_path, monkeypatch, capsys):
    import ezddc.counterfactual as cf
    monkeypatch.setattr(cf, "revenue_bracket", lambda model: (0.0, 0.1))
    assert main(["counterfactual", "--config", LATE, "--out", str(tmp_path), *FAST]) == 2
    assert "not bracketed" in capsys.readouterr().err


def test_bias_figure_command(tmp_path, capsys):
    assert main(["replicate-bias-figure", "--step", "0.1", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "bias_figure.csv").read_text().splitlines()
    assert lines[0] == "alpha,x_bin,ccp_separable,ccp_nonseparable,gap_se"
    assert len(lines) == 1 + 7 * 3
    assert "crossing property holds" in capsys.readouterr().out


def test_crossing_check_flags_wrong_pattern():
    # gap has the same sign on both sides of rho
    rows = [(0.2, 1, 0.3, 0.4, 0.01), (0.5, 1, 0.3, 0.3, 0.01), (0.8, 1, 0.3, 0.4, 0.01)]
    assert crossing_violations(rows)
    # inequality at rho itself
    rows = [(0.2, 1, 0.3, 0.4, 0.01), (0.5, 1, 0.3, 0.5, 0.01), (0.8, 1, 0.4, 0.3, 0.01)]
    assert crossing_violations(rows)
    rows = [(0.2, 1, 0.3, 0.4, 0.01), (0.5, 1, 0.3, 0.3, 0.01), (0.8, 1, 0.4, 0.3, 0.01)]
    assert crossing_violations(rows) == []


def test_module_entry_point_reports_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip() == "0.1.0"
