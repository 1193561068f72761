"""Certainty-equivalent revenue: the sure monthly payment worth as much as random revenue.

Revenue theta_d * Delta is replaced, for both actions, by a constant C. C is
found by bisection so that the value of a new bus (x = 0) under the constant
payment equals its value under the original, random revenue.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import BusModel
from .solver import SolveConfig, draw_block, solve

CE_TOL = 1e-6
MAX_BISECTIONS = 200
N_MONOTONE_CHECKS = 5


class BracketError(RuntimeError):
    """The value at the new-bus state does not cross the baseline on the bracket."""


@dataclass
class CePoint:
    c_payment: float
    baseline_value: float
    counterfactual_value: float
    scale_to_dollars: Optional[float] = None
    iterations: int = 0
    bracket: tuple = (np.nan, np.nan)

    def __post_init__(self):
        self.c_payment = float(self.c_payment)
        self.baseline_value = float(self.baseline_value)
        self.counterfactual_value = float(self.counterfactual_value)
        self.bracket = tuple(float(b) for b in self.bracket)

    @property
    def dollars(self) -> Optional[float]:
        return None if self.scale_to_dollars is None else self.c_payment * self.scale_to_dollars

    def to_dict(self) -> dict:
        return {
            "c_payment": float(self.c_payment),
            "baseline_value": float(self.baseline_value),
            "counterfactual_value": float(self.counterfactual_value),
            "gap": float(self.counterfactual_value - self.baseline_value),
            "scale_to_dollars": self.scale_to_dollars,
            "c_payment_dollars": self.dollars,
            "iterations": int(self.iterations),
            "bracket": [float(b) for b in self.bracket],
        }


def with_constant_revenue(model: BusModel, c: float) -> BusModel:
    return model.with_payoff(revenue_constant=float(c))


def revenue_bracket(model: BusModel) -> tuple[float, float]:
    """Smallest and largest theta_d * Delta over increments with positive probability."""
    support = np.flatnonzero(model.transition_table().max(axis=(0, 1)) > 0)
    rev = model.payoff.theta_d * support.astype(float)
    return float(rev.min()), float(rev.max())


def certainty_equivalent(model: BusModel, tol: float = CE_TOL, config: Optional[SolveConfig] = None,
                         separable: Optional[bool] = None, scale_to_dollars: Optional[float] = None,
                         state: int = 0) -> CePoint:
    """Constant payment C with V_C(state) = V(state) to within ``tol``.

    Every solve shares one draw block, and counterfactual solves start from
    the baseline value function.
    """
    config = config or SolveConfig()
    eps = draw_block(model, config.n_sim_eps, config.seed)
    base = solve(model, config, separable=separable, eps=eps)
    target = float(base.values[state])
    warm = dataclasses.replace(config, start=np.array(base.values))

    def value_at(c):
        rep = solve(with_constant_revenue(model, c), warm, separable=separable, eps=eps)
        return float(rep.values[state])

    lo, hi = revenue_bracket(model)
    if hi - lo <= 0.0:
        v = value_at(lo)
        if abs(v - target) > tol:
            raise BracketError(f"single-point bracket C={lo}: value {v} vs baseline {target}")
        return CePoint(lo, target, v, scale_to_dollars, 0, (lo, hi))

    grid = np.linspace(lo, hi, N_MONOTONE_CHECKS)
    vals = np.array([value_at(c) for c in grid])
    if np.any(np.diff(vals) <= 0):
        raise BracketError(f"value at state {state} is not increasing in C on [{lo}, {hi}]: {vals.tolist()}")
    f = vals - target
    if abs(f[0]) <= tol:
        return CePoint(lo, target, vals[0], scale_to_dollars, 0, (lo, hi))
    if abs(f[-1]) <= tol:
        return CePoint(hi, target, vals[-1], scale_to_dollars, 0, (lo, hi))
    if f[0] > 0 or f[-1] < 0:
        raise BracketError(
            f"baseline value {target} not bracketed: V_C({lo}) = {vals[0]}, V_C({hi}) = {vals[-1]}")
    # the monotonicity check already narrows the bracket
    j = int(np.searchsorted(f, 0.0))
    a, b = grid[j - 1], grid[j]
    c, v = a, vals[j - 1]
    it = 0
    for it in range(1, MAX_BISECTIONS + 1):
        c = 0.5 * (a + b)
        v = value_at(c)
        if abs(v - target) <= tol:
            break
        if v < target:
            a = c
        else:
            b = c
    else:
        raise BracketError(f"bisection did not reach tolerance {tol} after {MAX_BISECTIONS} steps")
    return CePoint(c, target, v, scale_to_dollars, it, (lo, hi))


def ce_ratio(ce_a: float, ce_b: float) -> dict:
    """ce_b / ce_a and the implied percentage shortfall of b relative to a."""
    ratio = ce_b / ce_a
    return {"ratio": ratio, "percent_lower": 100.0 * (1.0 - ratio)}


def ce_comparison(model_a: BusModel, model_b: BusModel, tol: float = CE_TOL,
                  config: Optional[SolveConfig] = None, scale_to_dollars: Optional[float] = None,
                  separable_a: Optional[bool] = None, separable_b: Optional[bool] = None) -> dict:
    if model_a.grid != model_b.grid or model_a.transition != model_b.transition:
        raise ValueError("models must share the state grid and the transition law")
    a = certainty_equivalent(model_a, tol, config, separable_a, scale_to_dollars)
    b = certainty_equivalent(model_b, tol, config, separable_b, scale_to_dollars)
    out = {"ce_a": a, "ce_b": b}
    out.update(ce_ratio(a.c_payment, b.c_payment))
    return out
