"""Monte Carlo experiments on synthetic panels: parameter recovery and misspecification bias."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ccp import simulate_panel
from .estimation import EstimationConfig, OptimizerConfig, estimate_transition, fit
from .model import BusModel, PayoffParams, ShockSpec, StateGrid, TransitionModel, make_toy_model
from .preferences import PreferenceSpec
from .solver import SolveConfig, solve

RECOVERY_TRUTH = {"theta_d": 0.05, "theta_x": 0.10, "sigma": 1.6, "alpha": 0.10, "rho": 0.55}
# monthly increments of 0, 1 or 2 bins of 3000 miles
SYNTHETIC_INCREMENTS = (0.35, 0.60, 0.05)
# offset separating data-generating draws from estimation draws
DGP_SEED_OFFSET = 1_000_003


def synthetic_bus_model(theta: Optional[dict] = None, n_bins: int = 130, rc: float = 8.0,
                        beta: float = 0.9) -> BusModel:
    th = dict(RECOVERY_TRUTH if theta is None else theta)
    return BusModel(
        StateGrid(n_bins, 3000.0),
        PayoffParams(th["theta_d"], th["theta_x"], rc, th["sigma"]),
        TransitionModel(np.tile(SYNTHETIC_INCREMENTS, (n_bins, 1))),
        PreferenceSpec.cara(th["alpha"], th["rho"], beta),
        ShockSpec("normal"),
    )


def generate_panel(model: BusModel, n_buses: int, n_months: int, rep: int,
                   n_sim_eps: int = 2500):
    """Panel from the model's optimal policy, with draws keyed by the replication index."""
    seed = DGP_SEED_OFFSET + rep
    rep_ = solve(model, SolveConfig(n_sim_eps=n_sim_eps, seed=seed))
    return simulate_panel(model, rep_.values, n_buses, n_months, seed=seed)


@dataclass
class RecoverySettings:
    n_buses: int = 200
    n_months: int = 100
    n_sim_eps: int = 500
    n_ccp_draws: Optional[int] = 5000
    tol: float = 1e-8
    f_tol: float = 1e-3
    x_tol: float = 1e-3
    max_evals: int = 600
    restart: bool = False
    start_at_truth: bool = True
    truth: dict = field(default_factory=lambda: dict(RECOVERY_TRUTH))


def recovery_replication(rep: int, settings: Optional[RecoverySettings] = None) -> dict:
    """Simulate one panel from the nonseparable truth and refit all five parameters."""
    st = settings or RecoverySettings()
    t0 = time.perf_counter()
    truth_model = synthetic_bus_model(st.truth)
    data = generate_panel(truth_model, st.n_buses, st.n_months, rep)
    cfg = EstimationConfig(
        n_bins=truth_model.n_bins,
        solver_config=SolveConfig(n_sim_eps=st.n_sim_eps, tol_sup_norm=st.tol, seed=rep),
        n_ccp_draws=st.n_ccp_draws,
        optimizer=OptimizerConfig(max_evals=st.max_evals, f_tol=st.f_tol, x_tol=st.x_tol, restart=st.restart),
    )
    res = fit(data, cfg, theta0=st.truth if st.start_at_truth else None, spec="nonseparable",
              transition=estimate_transition(data, truth_model.n_bins))
    return {"rep": rep, "result": res, "covered": res.covers(st.truth),
            "seconds": time.perf_counter() - t0}


def bias_replication(rep: int, alpha: float = 0.3, rho: float = 0.5, n_buses: int = 1000,
                     n_months: int = 50, n_sim_eps: int = 2500) -> dict:
    """Fit the separable model to toy-model data generated with late resolution (rho > alpha).

    Only alpha is free; the payoff parameters stay at their known toy values so
    the comparison isolates the risk parameter.
    """
    truth = make_toy_model(alpha=alpha, rho=rho)
    data = generate_panel(truth, n_buses, n_months, rep, n_sim_eps)
    cfg = EstimationConfig(
        beta_fixed=truth.beta, rc_fixed=truth.payoff.rc, free_params=("alpha",), separable_constraint=True,
        fixed={"theta_d": truth.payoff.theta_d, "theta_x": truth.payoff.theta_x, "sigma": truth.payoff.sigma},
        n_bins=truth.n_bins,
        solver_config=SolveConfig(n_sim_eps=n_sim_eps, seed=rep),
        optimizer=OptimizerConfig(max_evals=200, f_tol=1e-4, x_tol=1e-4, restart=False),
    )
    res = fit(data, cfg, theta0={"alpha": alpha}, spec="separable",
              compute_se=False)
    return {"rep": rep, "alpha_hat": res.theta_hat["alpha"], "result": res}
