"""Command-line driver: ``ezddc <command> [options]``.

Exit codes: 0 success, 1 input or configuration error, 2 numerical alarm
(non-convergence, bracket failure, failed regression property).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .ccp import replace_indicators, simulate_panel
from .counterfactual import BracketError, ce_comparison, certainty_equivalent
from .estimation import (SPECS, EstimateResult, EstimationConfig, OptimizerConfig, fit, lr_test)
from .model import DRAWS_CCP, ConfigError, load_model, make_toy_model, model_from_config
from .panel import PanelDataset, PanelValidationError
from .preferences import DomainError, timing_preference
from .solver import SolveConfig, analytic_margin, check_uniqueness, contraction_margin, draw_block, solve

log = logging.getLogger("ezddc")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class NumericalAlarm(RuntimeError):
    pass


# --- output helpers ----------------------------------------------------------------------


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text.encode("utf-8"))


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the clock so manifests are byte-reproducible
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = float(epoch) if epoch is not None else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def manifest(command: str, config: dict, seed, started: str) -> dict:
    blob = json.dumps(config, sort_keys=True).encode()
    return {
        "command": command,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "seed": seed,
        "library_version": __version__,
        "timestamps": {"started": started, "finished": _timestamp()},
    }


def load_schema(name: str) -> dict:
    """JSON schema shipped for one output type, e.g. ``load_schema("solve_report")``."""
    text = resources.files("ezddc").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None


def _solve_config(args, start=None) -> SolveConfig:
    return SolveConfig(tol_sup_norm=args.tol, max_iters=args.max_iters, n_sim_eps=args.n_sim_eps,
                       seed=args.seed, start=start or getattr(args, "start", "upper"))


# --- commands -------------------------------------------------------------------------------


def cmd_solve(args) -> int:
    started = _timestamp()
    model = load_model(args.config)
    cfg = _solve_config(args)
    rep = solve(model, cfg)
    out = Path(args.out)
    lines = ["x_bin,value"] + [f"{x},{v!r}" for x, v in enumerate(rep.values.tolist())]
    write_text(out / "value_function.csv", "\n".join(lines) + "\n")
    write_text(out / "solve_report.json", dumps(rep.to_dict()))
    write_text(out / "manifest.json", dumps(manifest("solve", {"model": model.to_dict(), "start": args.start,
                                                               "n_sim_eps": args.n_sim_eps, "tol": args.tol},
                                                     args.seed, started)))
    print(f"converged={rep.converged} iterations={rep.iterations} "
          f"lipschitz={rep.empirical_lipschitz:.6f}")
    return EXIT_OK if rep.converged else EXIT_NUMERIC


def cmd_simulate(args) -> int:
    started = _timestamp()
    model = load_model(args.config)
    rep = solve(model, _solve_config(args, "upper"))
    if not rep.converged:
        raise NumericalAlarm("value function did not converge; panel not written")
    data = simulate_panel(model, rep.values, args.n_buses, args.n_months, seed=args.seed)
    out = Path(args.out)
    write_text(out / "panel.csv", data.to_csv())
    write_text(out / "manifest.json", dumps(manifest(
        "simulate", {"model": model.to_dict(), "n_buses": args.n_buses, "n_months": args.n_months,
                     "n_sim_eps": args.n_sim_eps}, args.seed, started)))
    print(f"wrote {len(data)} rows; replacement rate {data.d.mean():.4f}")
    return EXIT_OK


ESTIMATION_KEYS = {
    "beta_fixed", "rc_fixed", "family", "n_bins", "bin_width_miles", "shocks", "n_sim_eps",
    "tol_sup_norm", "max_iters", "n_ccp_draws", "ccp_smoothing_temperature", "max_evals", "f_tol",
    "x_tol", "initial_simplex_scale", "restart", "start", "fixed",
}


def estimation_config_from_dict(d: dict, spec: str, seed: int) -> tuple[EstimationConfig, dict]:
    unknown = set(d) - ESTIMATION_KEYS
    if unknown:
        raise ConfigError(f"unknown field {sorted(unknown)[0]} in estimation config")
    opt = OptimizerConfig(**{k: d[k] for k in ("max_evals", "f_tol", "x_tol", "initial_simplex_scale", "restart")
                             if k in d})
    sc = SolveConfig(**{k: d[k] for k in ("n_sim_eps", "tol_sup_norm", "max_iters") if k in d}, seed=seed)
    kw = {k: d[k] for k in ("beta_fixed", "rc_fixed", "family", "n_bins", "bin_width_miles", "shocks",
                            "n_ccp_draws", "ccp_smoothing_temperature") if k in d}
    kw.setdefault("n_bins", 130)
    cfg = EstimationConfig.for_spec(spec, optimizer=opt, solver_config=sc, fixed=d.get("fixed", {}), **kw)
    return cfg, dict(d.get("start", {}))


def cmd_estimate(args) -> int:
    started = _timestamp()
    raw = _load_json(args.config) if args.config else {}
    cfg, start = estimation_config_from_dict(raw, args.spec, args.seed)
    data = PanelDataset.from_csv(args.data, cfg.n_bins)
    res = fit(data, cfg, theta0=start or None, spec=args.spec)
    out = Path(args.out)
    write_text(out / f"estimate_{args.spec}.json", dumps(res.to_dict()))
    write_text(out / f"manifest_estimate_{args.spec}.json",
               dumps(manifest("estimate", {"config": cfg.to_dict(), "spec": args.spec,
                                           "data": hashlib.sha256(Path(args.data).read_bytes()).hexdigest()},
                              args.seed, started)))
    for k in res.free_params:
        print(f"{k:8s} {res.theta_hat[k]: .6f}  ({res.std_errors[k]:.6f})")
    print(f"LL {res.loglik:.4f}  converged={res.converged}  evals={res.eval_count}")
    return EXIT_OK if res.converged else EXIT_NUMERIC


def cmd_lr_test(args) -> int:
    started = _timestamp()
    da, db = _load_json(args.result_a), _load_json(args.result_b)
    a, b = EstimateResult.from_dict(da), EstimateResult.from_dict(db)
    fa, fb = set(a.free_params), set(b.free_params)
    if a.n_obs != b.n_obs:
        raise ConfigError("the two fits use different numbers of observations")
    if fb <= fa:
        unres, res = a, b
    elif fa <= fb:
        unres, res = b, a
    else:
        raise ConfigError(f"specifications {a.spec!r} and {b.spec!r} are not nested")
    df = len(unres.free_params) - len(res.free_params)
    out = lr_test(unres.loglik, res.loglik, df)
    out.update({"unrestricted": unres.spec, "restricted": res.spec})
    print(f"statistic={out['statistic']:.4f} df={out['df']} p_value={out['p_value']:.4f}")
    if args.out:
        write_text(Path(args.out) / "lr_test.json", dumps(out))
        write_text(Path(args.out) / "manifest.json", dumps(manifest(
            "lr-test", {"result_a": da, "result_b": db}, None, started)))
    return EXIT_OK


def cmd_check_contraction(args) -> int:
    started = _timestamp()
    model = load_model(args.config)
    spec = model.prefs
    margin = contraction_margin(model, n_mc=args.n_mc, seed=args.seed)
    uniq = check_uniqueness(model, _solve_config(args, "upper"))
    m_an = analytic_margin(spec)
    report = {
        "timing_preference": timing_preference(spec).value,
        "m_analytic": m_an,
        "m_numeric": margin["m_numeric"],
        "unique": uniq["unique"],
        "gap": uniq["gap"],
        "converged": uniq["converged"],
    }
    print(f"timing preference: {report['timing_preference']}")
    print(f"analytic bound: {m_an:.6f}" if m_an is not None
          else "analytic bound: none applies (no analytic bound; numeric margin reported)")
    print(f"numeric margin: {margin['m_numeric']:.6f}")
    print(f"dual-start gap: {uniq['gap']:.3e}  unique={uniq['unique']}")
    if args.out:
        write_text(Path(args.out) / "contraction.json", dumps(report))
        write_text(Path(args.out) / "manifest.json",
                   dumps(manifest("check-contraction", model.to_dict(), args.seed, started)))
    return EXIT_OK if uniq["converged"] else EXIT_NUMERIC


def _model_from_source(path):
    """Model from a model config or from an estimate file; returns (model, separable flag, document)."""
    d = _load_json(path)
    if "theta_hat" in d:
        res = EstimateResult.from_dict(d)
        return model_from_config(res.model), bool(res.config.get("separable_constraint", False)), d
    return model_from_config(d), None, d


def cmd_counterfactual(args) -> int:
    started = _timestamp()
    cfg = _solve_config(args, "upper")
    out = Path(args.out)
    if args.compare:
        (ma, sa, da), (mb, sb, db) = (_model_from_source(p) for p in args.compare)
        res = ce_comparison(ma, mb, args.tol_ce, cfg, args.scale_dollars, sa, sb)
        report = {"ce_a": res["ce_a"].to_dict(), "ce_b": res["ce_b"].to_dict(),
                  "ratio": res["ratio"], "percent_lower": res["percent_lower"]}
        print(f"C_a={res['ce_a'].c_payment:.6f} C_b={res['ce_b'].c_payment:.6f} ratio={res['ratio']:.4f}")
        for key in ("ce_a", "ce_b"):
            if res[key].dollars is not None:
                print(f"{key} dollars: {res[key].dollars:.2f}")
        src = {"compare": [da, db]}
    else:
        if not args.config:
            raise ConfigError("counterfactual needs --config or --compare")
        model, sep, doc = _model_from_source(args.config)
        pt = certainty_equivalent(model, args.tol_ce, cfg, sep, args.scale_dollars)
        report = pt.to_dict()
        print(f"C={pt.c_payment:.6f} |V_C(0)-V(0)|={abs(pt.counterfactual_value - pt.baseline_value):.2e}")
        if pt.dollars is not None:
            print(f"C in dollars: {pt.dollars:.2f}")
        src = {"config": doc}
    write_text(out / "counterfactual.json", dumps(report))
    write_text(out / "manifest.json", dumps(manifest("counterfactual", {**src, "ce_tol": args.tol_ce}, args.seed, started)))
    return EXIT_OK


def bias_figure_rows(step: float = 0.05, seed: int = 0, n_sim_eps: int = 2500, n_ccp: int = 25_000,
                     rho: float = 0.5):
    """CCP curves on the toy model for the separable (alpha = rho = a) and
    nonseparable (alpha = a, rho fixed) preferences.

    Rows are (alpha, x, ccp_separable, ccp_nonseparable, gap_se); both curves
    use the same shock draws, so gap_se is the paired standard error of their
    difference.
    """
    alphas = np.round(np.arange(0.2, 0.8 + step / 2, step), 10)
    rows = []
    for a in alphas:
        sep_model = make_toy_model(alpha=a, rho=a)
        non_model = make_toy_model(alpha=a, rho=rho)
        cfg = SolveConfig(n_sim_eps=n_sim_eps, seed=seed)
        v_sep = solve(sep_model, cfg, separable=True)
        v_non = solve(non_model, cfg, separable=False)
        if not (v_sep.converged and v_non.converged):
            raise NumericalAlarm(f"solve failed at alpha={a}")
        eps = draw_block(sep_model, n_ccp, seed, DRAWS_CCP)
        i_sep = replace_indicators(sep_model, v_sep.values, eps, separable=True)
        i_non = replace_indicators(non_model, v_non.values, eps, separable=False)
        diff = i_non.astype(float) - i_sep.astype(float)
        se = diff.std(axis=0, ddof=1) / np.sqrt(n_ccp)
        p_sep, p_non = i_sep.mean(axis=0), i_non.mean(axis=0)
        for x in range(sep_model.n_bins):
            rows.append((float(a), x, float(p_sep[x]), float(p_non[x]), float(se[x])))
    return rows


def crossing_violations(rows, n_se: float = 3.0, rho: float = 0.5) -> list:
    """Problems with the crossing pattern: equality at alpha = rho and one sign change per state.

    Only gaps larger than ``n_se`` paired standard errors carry a sign; a state
    whose curves never separate (such as x = 0, where both actions lead to the
    same next state) has nothing to cross.
    """
    problems = []
    states = sorted({r[1] for r in rows})
    for x in states:
        signed = []
        for a, xx, ps, pn, se in rows:
            if xx != x:
                continue
            gap = pn - ps
            significant = abs(gap) > n_se * se
            if abs(a - rho) < 1e-9:
                if significant:
                    problems.append(f"state {x}: curves differ at alpha={rho} by {gap:.4g} (se {se:.2g})")
            elif significant:
                signed.append((a, float(np.sign(gap))))
        if not signed:
            continue
        below = {s for a, s in signed if a < rho}
        above = {s for a, s in signed if a > rho}
        if len(below) != 1 or len(above) != 1 or below == above:
            problems.append(f"state {x}: significant gap signs below/above alpha={rho}: "
                            f"{sorted(below)} / {sorted(above)}")
    return problems


def cmd_replicate_bias_figure(args) -> int:
    started = _timestamp()
    rows = bias_figure_rows(args.step, args.seed, args.n_sim_eps, args.n_ccp)
    lines = ["alpha,x_bin,ccp_separable,ccp_nonseparable,gap_se"]
    lines += [f"{a!r},{x},{ps!r},{pn!r},{se!r}" for a, x, ps, pn, se in rows]
    out = Path(args.out)
    write_text(out / "bias_figure.csv", "\n".join(lines) + "\n")
    write_text(out / "manifest.json", dumps(manifest(
        "replicate-bias-figure", {"step": args.step, "n_sim_eps": args.n_sim_eps, "n_ccp": args.n_ccp},
        args.seed, started)))
    problems = crossing_violations(rows)
    for p in problems:
        print(f"crossing check failed: {p}", file=sys.stderr)
    print(f"wrote {len(rows)} rows; crossing property {'violated' if problems else 'holds'}")
    return EXIT_NUMERIC if problems else EXIT_OK


# --- argument parsing -------------------------------------------------------------------------


def _add_solver_flags(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-sim-eps", type=int, default=2500, help="shock draws per solve (S)")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iters", type=int, default=5000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ezddc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the value function of a model config")
    p.add_argument("--config", required=True)
    p.add_argument("--start", choices=("upper", "lower"), default="upper")
    p.add_argument("--out", default=".")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="simulate a bus panel from a model config")
    p.add_argument("--config", required=True)
    p.add_argument("--n-buses", type=int, required=True)
    p.add_argument("--n-months", type=int, required=True)
    p.add_argument("--out", default=".")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit one specification to a panel CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="estimation settings JSON (optional)")
    p.add_argument("--spec", choices=tuple(SPECS), default="nonseparable")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("lr-test", help="likelihood-ratio test between two nested estimate files")
    p.add_argument("result_a")
    p.add_argument("result_b")
    p.add_argument("--out")
    p.set_defaults(func=cmd_lr_test)

    p = sub.add_parser("check-contraction", help="contraction margin and dual-start uniqueness")
    p.add_argument("--config", required=True)
    p.add_argument("--n-mc", type=int, default=20_000)
    p.add_argument("--out")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_check_contraction)

    p = sub.add_parser("counterfactual", help="certainty-equivalent constant revenue")
    p.add_argument("--config", help="model config or estimate JSON")
    p.add_argument("--compare", nargs=2, metavar=("A", "B"), help="two model configs or estimate files")
    p.add_argument("--scale-dollars", type=float)
    p.add_argument("--ce-tol", dest="tol_ce", type=float, default=1e-6)
    p.add_argument("--out", default=".")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_counterfactual)

    p = sub.add_parser("replicate-bias-figure", help="separable vs nonseparable CCP curves on the toy model")
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-sim-eps", type=int, default=2500)
    p.add_argument("--n-ccp", type=int, default=25_000)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_replicate_bias_figure)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except PanelValidationError as exc:
        print(f"error: invalid panel: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalAlarm, BracketError) as exc:
        print(f"numerical alarm: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
