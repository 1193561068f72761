import numpy as np
import pytest
from hypothesis import settings

from ezddc.ccp import simulate_panel
from ezddc.model import make_toy_model
from ezddc.solver import SolveConfig, solve

settings.register_profile("default", deadline=None)
settings.load_profile("default")

TOY_LATE = {"alpha": 0.1023, "rho": 0.5555}


def toy_truth(alpha, rho):
    m = make_toy_model(alpha=alpha, rho=rho)
    return {"theta_d": m.payoff.theta_d, "theta_x": m.payoff.theta_x, "sigma": m.payoff.sigma,
            "alpha": alpha, "rho": rho}


def toy_panel(alpha, rho, n_buses, n_months, seed):
    model = make_toy_model(alpha=alpha, rho=rho)
    V = solve(model, SolveConfig(n_sim_eps=2500, seed=seed + 100)).values
    return simulate_panel(model, V, n_buses, n_months, seed=seed)


@pytest.fixture(scope="session")
def late_panel():
    """100 000 observations from the toy model with late resolution."""
    return toy_panel(TOY_LATE["alpha"], TOY_LATE["rho"], 1000, 100, seed=21)


@pytest.fixture(scope="session")
def separable_panel():
    return toy_panel(0.4, 0.4, 500, 60, seed=22)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
