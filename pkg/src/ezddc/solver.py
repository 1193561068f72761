"""Value-function iteration for the bus model with recursive preferences.

The operator is

    T(V)(x) = (1/S) sum_s max_d sum_k P(k | d, x) phi((1-beta) u(pi(d,x,k) + sigma eps_s(d))
                                                      + beta phi^{-1}(V(x'(d,x,k))))

with the increment expectation exact and the shock expectation averaged over
one S x 2 block of draws that stays fixed for the whole solve. T is monotone,
so iterating from a constant super-solution (sub-solution) descends (ascends)
to the largest (smallest) fixed point.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import preferences as pf
from .model import DRAWS_BOUNDS, DRAWS_MARGIN, DRAWS_SOLVE, KEEP, REPLACE, BusModel, stream
from .preferences import DomainError, Family, PreferenceSpec

log = logging.getLogger(__name__)

# raw-V increments smaller than this are rounding noise, not Lipschitz evidence
LIPSCHITZ_FLOOR = 1e-8
# ceiling on the observed convergence rate used in the stopping rule
RATE_CAP = 0.999


@dataclass(frozen=True)
class ValueFunction:
    values: np.ndarray
    prefs_fingerprint: str
    v_lower: float = -np.inf
    v_upper: float = np.inf

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, x):
        return self.values[x]


@dataclass
class SolveConfig:
    tol_sup_norm: float = 1e-9
    max_iters: int = 5000
    n_sim_eps: int = 2500
    seed: int = 0
    start: Union[str, np.ndarray] = "upper"
    n_bounds_mc: int = 100_000

    def __post_init__(self):
        if not self.tol_sup_norm > 0:
            raise ValueError("tol_sup_norm must be positive")
        if self.n_sim_eps < 1 or self.max_iters < 1:
            raise ValueError("n_sim_eps and max_iters must be at least 1")
        if isinstance(self.start, str) and self.start not in ("upper", "lower"):
            raise ValueError(f"start must be 'upper', 'lower' or a vector, got {self.start!r}")


@dataclass
class Bounds:
    v_star: float
    v_lower: float
    v_star_mc: float
    method_upper: str

    def __post_init__(self):
        if not (np.isfinite(self.v_star) and np.isfinite(self.v_lower)):
            raise DomainError("value bounds are not finite for this model")
        if self.v_lower > self.v_star:
            raise DomainError(f"lower bound {self.v_lower} exceeds upper bound {self.v_star}")


@dataclass
class SolveReport:
    fixed_point: ValueFunction
    iterations: int
    residual_history: list
    converged: bool
    empirical_lipschitz: float
    start: str
    start_value: Optional[float]
    seed: int
    n_sim_eps: int
    draw_fingerprint: str

    @property
    def values(self) -> np.ndarray:
        return self.fixed_point.values

    def to_dict(self) -> dict:
        return {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "residual_history": [float(r) for r in self.residual_history],
            "empirical_lipschitz": _finite_or_none(self.empirical_lipschitz),
            "values": [float(v) for v in self.fixed_point.values],
            "prefs_fingerprint": self.fixed_point.prefs_fingerprint,
            "v_lower": float(self.fixed_point.v_lower),
            "v_upper": float(self.fixed_point.v_upper),
            "start": self.start,
            "start_value": _finite_or_none(self.start_value),
            "seed": int(self.seed),
            "n_sim_eps": int(self.n_sim_eps),
            "draw_fingerprint": self.draw_fingerprint,
        }


def _finite_or_none(x):
    if x is None or not np.isfinite(x):
        return None
    return float(x)


def draw_block(model: BusModel, n: int, seed: int, key: int = DRAWS_SOLVE) -> np.ndarray:
    """Standardised shock block of shape (n, 2), reproducible from (seed, key)."""
    return model.shocks.draw(stream(seed, key), n)


def block_fingerprint(eps: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(eps, dtype="<f8").tobytes()).hexdigest()[:16]


# --- fast aggregator evaluation for the inner loop -----------------------------


def _phi_fast(spec: PreferenceSpec, arg: np.ndarray) -> np.ndarray:
    a, r = spec.alpha, spec.rho
    if spec.family is Family.CARA_EZ:
        if r >= pf.LINEAR_LIMIT:
            lg = np.log1p(np.maximum(-r * arg, -1.0))
            if a >= pf.LINEAR_LIMIT:
                return -np.expm1((a / r) * lg) / a
            return -lg / r
        if a >= pf.LINEAR_LIMIT:
            return -np.expm1(np.maximum(-a * arg, -pf.EXP_CLIP)) / a
        return arg
    k = spec.crra_exponent
    if k == 0.0:
        with np.errstate(divide="ignore"):
            return np.log(arg)
    return np.power(arg, k)


def _phi_inv_checked(spec: PreferenceSpec, V: np.ndarray, separable: bool) -> np.ndarray:
    if separable:
        return np.asarray(V, dtype=float)
    try:
        return pf._phi_inv(spec, np.asarray(V, dtype=float))
    except DomainError as exc:
        for x, v in enumerate(np.asarray(V)):
            try:
                pf._phi_inv(spec, np.array([v]))
            except DomainError:
                raise DomainError(f"value {v!r} at state {x} is outside the range of phi: {exc}") from None
        raise


class BellmanKernel:
    """T evaluated on one fixed draw block.

    ``separable`` selects the linear-aggregator path explicitly; by default it
    follows ``prefs.is_separable()``.
    """

    def __init__(self, model: BusModel, eps: np.ndarray, separable: Optional[bool] = None):
        self.model = model
        self.prefs = model.prefs
        self.separable = model.prefs.is_separable() if separable is None else bool(separable)
        eps = np.asarray(eps, dtype=float)
        if eps.ndim != 2 or eps.shape[1] != 2:
            raise ValueError("draw block must have shape (S, 2)")
        self.eps = eps
        self.S = eps.shape[0]
        b = self.prefs.beta
        pi = model.payoff_table()
        xn = model.next_state_table()
        P = model.transition_table()
        sigma = model.payoff.sigma
        # replacing is independent of the current state unless replace_rows vary by x
        self.shared_replace = model.transition.replace_rows is None
        self._branches = []
        for d in (KEEP, REPLACE):
            pid, xnd, Pd = pi[d], xn[d], P[d]
            if d == REPLACE and self.shared_replace:
                pid, xnd, Pd = pid[:1], xnd[:1], Pd[:1]
            c = pid[None, :, :] + sigma * eps[:, d][:, None, None]
            pre = (1.0 - b) * pf._u(self.prefs, c)
            if self.separable:
                # the increment sum can be taken once
                self._branches.append((np.einsum("snk,nk->sn", pre, Pd), xnd, np.array(Pd)))
            else:
                self._branches.append((pre, xnd, np.array(Pd)))

    def continuation(self, V) -> np.ndarray:
        return _phi_inv_checked(self.prefs, V, self.separable)

    def choice_values(self, V) -> tuple[np.ndarray, np.ndarray]:
        """v(d, x, eps_s) for d = 0, 1 as (S, n) arrays (the replace array may be (S, 1))."""
        W = self.continuation(V)
        b = self.prefs.beta
        out = []
        for pre, xnd, Pd in self._branches:
            Wn = W[xnd]
            if self.separable:
                out.append(pre + b * np.sum(Pd * Wn, axis=1)[None, :])
            else:
                r = _phi_fast(self.prefs, pre + b * Wn[None, :, :])
                out.append(np.sum(r * Pd[None, :, :], axis=2))
        return out[0], out[1]

    def apply(self, V) -> np.ndarray:
        v0, v1 = self.choice_values(V)
        return np.mean(np.maximum(v0, v1), axis=0)


def bellman_apply(model: BusModel, V, draws: np.ndarray, separable: Optional[bool] = None) -> np.ndarray:
    """One application of T with the given (S, 2) draw block."""
    vals = V.values if isinstance(V, ValueFunction) else np.asarray(V, dtype=float)
    return BellmanKernel(model, draws, separable).apply(vals)


# --- bounds -----------------------------------------------------------------------


def _two_term(spec: PreferenceSpec, y: np.ndarray, separable: bool):
    """Per-draw phi(y) and the mean of y, for the pair E[phi(y)], phi(E[y])."""
    phi = (lambda z: z) if separable else (lambda z: pf._phi(spec, z))
    return phi(y), phi


def block_bounds(model: BusModel, eps: np.ndarray, separable: Optional[bool] = None) -> tuple[float, float]:
    """Constant super- and sub-solutions of T for this particular draw block.

    With the shock expectation replaced by a block average the same Jensen
    argument goes through, so these constants are exact starting points for
    monotone iteration on the simulated operator.
    """
    spec = model.prefs
    sep = spec.is_separable() if separable is None else separable
    lo, hi = model.profit_range()
    sigma = model.payoff.sigma
    y_hi = pf._u(spec, hi + sigma * eps.max(axis=1))
    y_lo = pf._u(spec, lo + sigma * eps[:, 0])
    phi_vals, phi = _two_term(spec, y_hi, sep)
    upper = max(float(np.mean(phi_vals)), float(phi(np.mean(y_hi))))
    phi_vals, phi = _two_term(spec, y_lo, sep)
    lower = min(float(np.mean(phi_vals)), float(phi(np.mean(y_lo))))
    return upper, lower


def compute_bounds(model: BusModel, n_mc: int = 100_000, seed: int = 0,
                   separable: Optional[bool] = None) -> Bounds:
    """Upper and lower constants bracketing every fixed point of T.

    CARA with alpha, rho > 0 has the draw-free upper bound 1/alpha. Otherwise
    both two-term expressions are Monte Carlo means, widened by 3 standard
    errors. ``v_star_mc`` is always the simulated upper bound.
    """
    spec = model.prefs
    sep = spec.is_separable() if separable is None else separable
    lo, hi = model.profit_range()
    sigma = model.payoff.sigma
    eps = draw_block(model, n_mc, seed, DRAWS_BOUNDS)
    se_scale = 3.0 / np.sqrt(n_mc)

    def conservative(y, upper):
        phi_vals, phi = _two_term(spec, y, sep)
        if not (np.all(np.isfinite(phi_vals)) and np.all(np.isfinite(y))):
            raise DomainError("a bounding expectation is not finite")
        m1 = float(np.mean(phi_vals)) + (1 if upper else -1) * se_scale * float(np.std(phi_vals))
        ybar = float(np.mean(y)) + (1 if upper else -1) * se_scale * float(np.std(y))
        if spec.family is Family.CARA_EZ and spec.rho >= pf.LINEAR_LIMIT and upper:
            ybar = min(ybar, 1.0 / spec.rho)
        if spec.family is Family.CRRA_EZ:
            ybar = max(ybar, 0.0)
        m2 = float(phi(ybar))
        return max(m1, m2) if upper else min(m1, m2)

    y_hi = pf._u(spec, hi + sigma * eps.max(axis=1))
    y_lo = pf._u(spec, lo + sigma * eps[:, 0])
    v_star_mc = conservative(y_hi, True)
    v_lower = conservative(y_lo, False)
    if spec.family is Family.CARA_EZ and min(spec.alpha, spec.rho) >= pf.LINEAR_LIMIT:
        return Bounds(1.0 / spec.alpha, v_lower, min(v_star_mc, 1.0 / spec.alpha), "analytic")
    return Bounds(v_star_mc, v_lower, v_star_mc, "monte_carlo")


# --- solve ------------------------------------------------------------------------


def _start_vector(model, config, kernel, bounds):
    n = model.n_bins
    if isinstance(config.start, str):
        blk_hi, blk_lo = block_bounds(model, kernel.eps, kernel.separable)
        if config.start == "upper":
            v = max(bounds.v_star, blk_hi)
            # with rho = 0 the CARA ceiling 1/alpha is itself a fixed point of T
            if (model.prefs.family is Family.CARA_EZ and model.prefs.rho < pf.LINEAR_LIMIT
                    and model.prefs.alpha >= pf.LINEAR_LIMIT and not kernel.separable):
                v = max(bounds.v_star_mc, blk_hi)
            return np.full(n, v), "upper", v
        v = min(bounds.v_lower, blk_lo)
        return np.full(n, v), "lower", v
    start = np.asarray(config.start, dtype=float)
    if start.shape != (n,):
        raise ValueError(f"custom start must have length {n}")
    return start.copy(), "custom", None


def iterate(kernel: BellmanKernel, V0: np.ndarray, tol: float, max_iters: int):
    """Plain fixed-point iteration; returns (V, iterations, residuals, converged, lipschitz).

    Residuals are sup-norm changes of phi^{-1}(V). Convergence requires the
    residual to be at most ``tol`` and the a-posteriori distance to the fixed
    point, residual * q / (1 - q) with q the recent residual ratio, to be at
    most ``tol`` as well.
    """
    V = np.array(V0, dtype=float)
    W = kernel.continuation(V)
    residuals = []
    lipschitz = 0.0
    prev_step = None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        Vn = kernel.apply(V)
        Wn = kernel.continuation(Vn)
        with np.errstate(invalid="ignore"):
            diff = np.abs(Wn - W)
        diff = np.where(Wn == W, 0.0, diff)
        res = float(np.max(diff))
        residuals.append(res)
        step = float(np.max(np.abs(Vn - V)))
        if prev_step is not None and prev_step > LIPSCHITZ_FLOOR:
            lipschitz = max(lipschitz, step / prev_step)
        prev_step = step
        V, W = Vn, Wn
        if not np.isfinite(res):
            continue
        if res <= tol:
            recent = [residuals[j] / residuals[j - 1] for j in range(max(1, len(residuals) - 3), len(residuals))
                      if residuals[j - 1] > 0 and np.isfinite(residuals[j - 1])]
            q = min(max(recent, default=0.0), RATE_CAP)
            if res == 0.0 or res * q / (1.0 - q) <= tol:
                converged = True
                break
    return V, it, residuals, converged, lipschitz


def solve(model: BusModel, config: Optional[SolveConfig] = None, *,
          separable: Optional[bool] = None, eps: Optional[np.ndarray] = None,
          bounds: Optional[Bounds] = None) -> SolveReport:
    """Iterate T from the configured start until the stopping rule holds.

    ``eps`` overrides the draw block (it must have shape (n_sim_eps, 2)); by
    default the block is drawn from ``config.seed``.
    """
    config = config or SolveConfig()
    if eps is None:
        eps = draw_block(model, config.n_sim_eps, config.seed)
    kernel = BellmanKernel(model, eps, separable)
    if bounds is None:
        bounds = compute_bounds(model, config.n_bounds_mc, config.seed, kernel.separable)
    V0, start_name, start_value = _start_vector(model, config, kernel, bounds)
    V, it, res, conv, lip = iterate(kernel, V0, config.tol_sup_norm, config.max_iters)
    if not conv:
        log.warning("solve did not converge in %d iterations (last residual %.3g)", it, res[-1])
    vf = ValueFunction(V, model.prefs.fingerprint(), bounds.v_lower, bounds.v_star)
    return SolveReport(vf, it, res, conv, lip, start_name, start_value, config.seed,
                       kernel.S, block_fingerprint(kernel.eps))


def check_uniqueness(model: BusModel, config: Optional[SolveConfig] = None, *,
                     separable: Optional[bool] = None) -> dict:
    """Solve from both bounds with the same draws and compare the limits."""
    config = config or SolveConfig()
    eps = draw_block(model, config.n_sim_eps, config.seed)
    bounds = compute_bounds(model, config.n_bounds_mc, config.seed,
                            model.prefs.is_separable() if separable is None else separable)
    reps = {}
    for start in ("upper", "lower"):
        cfg = dataclasses.replace(config, start=start)
        reps[start] = solve(model, cfg, separable=separable, eps=eps, bounds=bounds)
    kernel_sep = model.prefs.is_separable() if separable is None else separable
    Wu = _phi_inv_checked(model.prefs, reps["upper"].values, kernel_sep)
    Wl = _phi_inv_checked(model.prefs, reps["lower"].values, kernel_sep)
    gap = float(np.max(np.abs(Wu - Wl)))
    converged = reps["upper"].converged and reps["lower"].converged
    return {
        "unique": bool(converged and gap <= 10.0 * config.tol_sup_norm),
        "gap": gap,
        "converged": bool(converged),
        "upper": reps["upper"],
        "lower": reps["lower"],
    }


# --- contraction margin ---------------------------------------------------------------


def analytic_margin(spec: PreferenceSpec) -> Optional[float]:
    """Closed-form bound on E[max sup psi'] when one applies, else None."""
    b = spec.beta
    if spec.is_separable():
        return b
    if spec.family is Family.CARA_EZ and spec.rho >= spec.alpha and spec.rho > 0:
        return b ** (spec.alpha / spec.rho)
    if spec.family is Family.CRRA_EZ and spec.rho <= spec.alpha:
        return b ** spec.crra_exponent
    return None


def _margin_on_grid(spec, eps, sigma, pi_grid, z_ends):
    c = pi_grid[None, None, :] + sigma * eps[:, :, None]
    y = pf._u(spec, c)
    best = np.full(eps.shape[0], -np.inf)
    for z in z_ends:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            d = pf.psi_prime(spec, y, z)
        d = np.where(np.isnan(d), np.inf, d)
        best = np.maximum(best, d.reshape(eps.shape[0], -1).max(axis=1))
    return float(np.mean(best))


def contraction_margin(model: BusModel, n_mc: int = 20_000, seed: int = 0,
                       bounds: Optional[Bounds] = None, grid_points: int = 64,
                       refine_tol: float = 1e-4, max_grid: int = 4096) -> dict:
    """Monte Carlo estimate of M = E[max_d sup_{pi, z} psi'_{u(pi + sigma eps_d)}(z)].

    psi' is monotone in z, so the sup over z is taken at the two ends of
    [v_lower, v_star]. The profit grid is doubled until the estimate moves by
    less than ``refine_tol``.
    """
    spec = model.prefs
    m_an = analytic_margin(spec)
    if spec.is_separable():
        return {"m_numeric": spec.beta, "m_analytic": m_an, "grid_points": 0}
    if bounds is None:
        bounds = compute_bounds(model, seed=seed)
    lo, hi = model.profit_range()
    eps = draw_block(model, n_mc, seed, DRAWS_MARGIN)
    z_ends = (bounds.v_lower, bounds.v_star_mc)
    npts = grid_points
    m = _margin_on_grid(spec, eps, model.payoff.sigma, np.linspace(lo, hi, npts), z_ends)
    while npts < max_grid:
        npts *= 2
        m_new = _margin_on_grid(spec, eps, model.payoff.sigma, np.linspace(lo, hi, npts), z_ends)
        done = abs(m_new - m) < refine_tol
        m = m_new
        if done:
            break
    return {"m_numeric": m, "m_analytic": m_an, "grid_points": npts}
