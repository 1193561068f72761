"""Choice-specific values, simulated choice probabilities and panel simulation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import preferences as pf
from .model import DRAWS_CCP, DRAWS_PANEL, KEEP, REPLACE, BusModel, stream
from .panel import PanelDataset
from .solver import BellmanKernel, ValueFunction, _phi_fast, _phi_inv_checked, draw_block

CCP_CHUNK = 2500


@dataclass(frozen=True)
class CcpTable:
    """probs[x, d] = Pr(d | x); column 1 is the replacement probability."""

    probs: np.ndarray
    n_draws: int
    seed: int

    @property
    def replace(self) -> np.ndarray:
        return self.probs[:, REPLACE]

    def to_csv(self) -> str:
        lines = ["x_bin,p_keep,p_replace"]
        for x, (p0, p1) in enumerate(self.probs):
            lines.append(f"{x},{p0!r},{p1!r}")
        return "\n".join(lines) + "\n"


def _values(V) -> np.ndarray:
    return V.values if isinstance(V, ValueFunction) else np.asarray(V, dtype=float)


def choice_values_at(model: BusModel, W: np.ndarray, xs: np.ndarray, eps: np.ndarray,
                     separable: bool) -> np.ndarray:
    """v(d, x_i, eps_i) for paired states and shocks; returns shape (B, 2).

    ``W`` is the continuation phi^{-1}(V) over the grid.
    """
    spec = model.prefs
    b = spec.beta
    pi = model.payoff_table()
    xn = model.next_state_table()
    P = model.transition_table()
    sigma = model.payoff.sigma
    out = np.empty((len(xs), 2))
    for d in (KEEP, REPLACE):
        c = pi[d][xs] + sigma * eps[:, d][:, None]
        arg = (1.0 - b) * pf._u(spec, c) + b * W[xn[d][xs]]
        r = arg if separable else _phi_fast(spec, arg)
        out[:, d] = np.sum(r * P[d][xs], axis=1)
    return out


def choice_value(model: BusModel, V, d: int, x: int, eps, separable: Optional[bool] = None) -> float:
    """E_Delta[phi((1-beta) u(pi + sigma eps_d) + beta phi^{-1}(V(x')))] for one (d, x, eps)."""
    sep = model.prefs.is_separable() if separable is None else separable
    W = _phi_inv_checked(model.prefs, _values(V), sep)
    eps = np.asarray(eps, dtype=float).reshape(1, 2)
    return float(choice_values_at(model, W, np.array([x]), eps, sep)[0, d])


def ccp(model: BusModel, V, J: int = 25_000, seed: int = 0, separable: Optional[bool] = None) -> CcpTable:
    """Frequency of argmax_d v(d, x, eps_j) over J shock draws; ties go to keeping."""
    eps = draw_block(model, J, seed, DRAWS_CCP)
    return ccp_from_draws(model, V, eps, seed, separable)


def replace_indicators(model: BusModel, V, eps: np.ndarray, separable: Optional[bool] = None) -> np.ndarray:
    """Boolean (J, n_bins) array: whether draw j makes replacing strictly better at each state."""
    vals = _values(V)
    out = np.empty((len(eps), model.n_bins), dtype=bool)
    for lo in range(0, len(eps), CCP_CHUNK):
        kernel = BellmanKernel(model, eps[lo:lo + CCP_CHUNK], separable)
        v0, v1 = kernel.choice_values(vals)
        out[lo:lo + CCP_CHUNK] = v1 > v0
    return out


def ccp_from_draws(model: BusModel, V, eps: np.ndarray, seed: int = 0,
                   separable: Optional[bool] = None) -> CcpTable:
    p1 = replace_indicators(model, V, eps, separable).mean(axis=0)
    return CcpTable(np.column_stack([1.0 - p1, p1]), len(eps), seed)


def simulate_panel(model: BusModel, V, n_buses: int, n_months: int, seed: int = 0,
                   separable: Optional[bool] = None, x0: int = 0) -> PanelDataset:
    """Simulate buses that start new (x = 0) and follow the optimal rule.

    Each bus owns a generator derived from (seed, bus index), so a bus's path
    does not depend on how many other buses are simulated.
    """
    sep = model.prefs.is_separable() if separable is None else separable
    W = _phi_inv_checked(model.prefs, _values(V), sep)
    eps = np.empty((n_buses, n_months, 2))
    unif = np.empty((n_buses, n_months))
    for i in range(n_buses):
        rng = stream(seed, DRAWS_PANEL, i)
        eps[i] = model.shocks.draw(rng, n_months)
        unif[i] = rng.random(n_months)
    P = model.transition_table()
    cum = np.cumsum(P, axis=2)
    # once no probability mass remains, pin the CDF to 1 so rounding cannot pick a zero-mass increment
    rest = np.cumsum(P[..., ::-1], axis=2)[..., ::-1]
    cum[..., :-1] = np.where(rest[..., 1:] == 0, 1.0, cum[..., :-1])
    cum[..., -1] = 1.0
    xn = model.next_state_table()
    K = P.shape[2]
    xs = np.full(n_buses, x0, dtype=np.int64)
    X = np.empty((n_buses, n_months), dtype=np.int64)
    D = np.empty_like(X)
    DL = np.empty_like(X)
    for t in range(n_months):
        v = choice_values_at(model, W, xs, eps[:, t], sep)
        d = (v[:, REPLACE] > v[:, KEEP]).astype(np.int64)
        c = cum[d, xs]
        delta = np.minimum(np.sum(c <= unif[:, t][:, None], axis=1), K - 1)
        X[:, t], D[:, t], DL[:, t] = xs, d, delta
        xs = xn[d, xs, delta]
    bus = np.repeat(np.arange(n_buses, dtype=np.int64), n_months)
    month = np.tile(np.arange(n_months, dtype=np.int64), n_buses)
    return PanelDataset(bus, month, X.ravel(), D.ravel(), DL.ravel())
