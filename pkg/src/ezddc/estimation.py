"""Nested fixed-point simulated maximum likelihood for the bus model.

The inner loop solves the value function for a trial parameter vector on one
fixed draw block; the outer loop runs a Nelder-Mead search over transformed
parameters. The log-likelihood is

    LL(theta) = sum_it log p(d_it | x_it; theta) + sum_it log Pr(Delta_it | x_it)

where the second sum uses the separately estimated increment law and does not
depend on theta.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, special, stats

from . import __version__
from .model import (DRAWS_LIKELIHOOD, DRAWS_SOLVE, REPLACE, BusModel, ConfigError, PayoffParams, ShockSpec,
                    StateGrid, TransitionModel, stream)
from .panel import PanelDataset
from .preferences import LINEAR_LIMIT, DomainError, Family, PreferenceSpec
from .solver import (BellmanKernel, SolveConfig, block_bounds, block_fingerprint, compute_bounds,
                     iterate)

log = logging.getLogger(__name__)

PARAM_ORDER = ("theta_d", "theta_x", "sigma", "alpha", "rho")
POOL_WIDTH = 10
POOL_MIN_OBS = 30
NEG_INF = -math.inf
# objective handed to the optimizer where the likelihood is -inf
PENALTY = 1e300

SPECS = {
    "nonseparable": {"free": ("theta_d", "theta_x", "sigma", "alpha", "rho"), "separable": False, "fixed": {}},
    "separable": {"free": ("theta_d", "theta_x", "sigma", "alpha"), "separable": True, "fixed": {}},
    "rust-rev": {"free": ("theta_d", "theta_x", "sigma"), "separable": True,
                 "fixed": {"alpha": 0.0, "rho": 0.0}},
    "rust-orig": {"free": ("theta_x", "sigma"), "separable": True,
                  "fixed": {"theta_d": 0.0, "alpha": 0.0, "rho": 0.0}},
}

DEFAULT_START = {"theta_d": 0.0, "theta_x": 0.05, "sigma": 1.0, "alpha": 0.1, "rho": 0.1}


@dataclass
class OptimizerConfig:
    max_evals: int = 1500
    initial_simplex_scale: float = 0.1
    f_tol: float = 1e-6
    x_tol: float = 1e-4
    restart: bool = True


@dataclass
class EstimationConfig:
    """Fixed quantities and numerical settings for one estimation run.

    ``fixed`` holds values for parameters that are not free (for example
    ``theta_d = 0``). ``ccp_smoothing_temperature = None`` means 0.05 * sigma;
    0 gives the raw argmax frequency. ``n_ccp_draws = None`` reuses the solve
    block for choice probabilities; a number draws a separate, larger block.
    """

    beta_fixed: float = 0.9
    rc_fixed: float = 8.0
    family: Family = Family.CARA_EZ
    free_params: tuple = ("theta_d", "theta_x", "sigma", "alpha", "rho")
    separable_constraint: bool = False
    fixed: dict = field(default_factory=dict)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    solver_config: SolveConfig = field(default_factory=SolveConfig)
    ccp_smoothing_temperature: Optional[float] = None
    n_ccp_draws: Optional[int] = None
    n_bins: Optional[int] = None
    bin_width_miles: float = 3000.0
    shocks: str = "normal"
    warm_start: bool = True

    def __post_init__(self):
        self.family = Family(self.family)
        self.free_params = tuple(self.free_params)
        unknown = set(self.free_params) - set(PARAM_ORDER)
        if unknown:
            raise ConfigError(f"unknown free parameter {sorted(unknown)[0]}")
        if self.separable_constraint and "rho" in self.free_params:
            raise ConfigError("rho cannot be free under the separable constraint")
        if not 0.0 < self.beta_fixed < 1.0:
            raise ConfigError("beta_fixed must lie in (0, 1)")
        if not self.rc_fixed > 0:
            raise ConfigError("rc_fixed must be positive")
        if self.ccp_smoothing_temperature is not None and self.ccp_smoothing_temperature < 0:
            raise ConfigError("ccp_smoothing_temperature must be nonnegative")

    @classmethod
    def for_spec(cls, name: str, **kw) -> "EstimationConfig":
        if name not in SPECS:
            raise ConfigError(f"unknown specification {name!r}; choose from {', '.join(SPECS)}")
        s = SPECS[name]
        fixed = dict(s["fixed"])
        fixed.update(kw.pop("fixed", {}))
        return cls(free_params=s["free"], separable_constraint=s["separable"], fixed=fixed, **kw)

    @property
    def structurally_separable(self) -> bool:
        if self.separable_constraint:
            return True
        return ("alpha" not in self.free_params and "rho" not in self.free_params
                and self.fixed.get("alpha", 0.0) == self.fixed.get("rho", 0.0))

    def to_dict(self) -> dict:
        sc = self.solver_config
        return {
            "beta_fixed": self.beta_fixed,
            "rc_fixed": self.rc_fixed,
            "family": self.family.value,
            "free_params": list(self.free_params),
            "separable_constraint": self.separable_constraint,
            "fixed": {k: self.fixed[k] for k in sorted(self.fixed)},
            "optimizer": dataclasses.asdict(self.optimizer),
            "solver_config": {"tol_sup_norm": sc.tol_sup_norm, "max_iters": sc.max_iters,
                              "n_sim_eps": sc.n_sim_eps, "seed": sc.seed},
            "ccp_smoothing_temperature": self.ccp_smoothing_temperature,
            "n_ccp_draws": self.n_ccp_draws,
            "n_bins": self.n_bins,
            "bin_width_miles": self.bin_width_miles,
            "shocks": self.shocks,
        }


@dataclass
class EstimateResult:
    spec: str
    theta_hat: dict
    std_errors: dict
    loglik: float
    n_obs: int
    converged: bool
    eval_count: int
    free_params: tuple
    model: dict
    config: dict
    seed: int
    draw_fingerprint: str
    se_failures: list = field(default_factory=list)
    conf_int: dict = field(default_factory=dict)

    def covers(self, truth: dict) -> dict:
        """Whether each free parameter's interval contains the given value."""
        return {k: bool(self.conf_int[k][0] <= truth[k] <= self.conf_int[k][1]) for k in self.free_params}

    def to_dict(self) -> dict:
        return {
            "spec": self.spec,
            "free_params": list(self.free_params),
            "theta_hat": {k: float(self.theta_hat[k]) for k in PARAM_ORDER if k in self.theta_hat},
            "std_errors": {k: (None if not np.isfinite(v) else float(v)) for k, v in self.std_errors.items()},
            "se_failures": list(self.se_failures),
            "conf_int_95": {k: [None if not np.isfinite(v) else float(v) for v in self.conf_int[k]]
                            for k in self.free_params if k in self.conf_int},
            "loglik": float(self.loglik),
            "n_obs": int(self.n_obs),
            "converged": bool(self.converged),
            "eval_count": int(self.eval_count),
            "seed": int(self.seed),
            "draw_fingerprint": self.draw_fingerprint,
            "model": self.model,
            "config": self.config,
            "library_version": __version__,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateResult":
        try:
            return cls(
                spec=d["spec"], theta_hat=dict(d["theta_hat"]),
                std_errors={k: (np.nan if v is None else v) for k, v in d["std_errors"].items()},
                loglik=float(d["loglik"]), n_obs=int(d["n_obs"]), converged=bool(d["converged"]),
                eval_count=int(d["eval_count"]), free_params=tuple(d["free_params"]),
                model=d["model"], config=d["config"], seed=int(d["seed"]),
                draw_fingerprint=d["draw_fingerprint"], se_failures=list(d.get("se_failures", [])),
                conf_int={k: tuple(np.nan if v is None else v for v in iv)
                          for k, iv in d.get("conf_int_95", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"not an estimate result: missing or bad field {exc}") from None


# --- transition law --------------------------------------------------------------


def effective_bins(data: PanelDataset) -> np.ndarray:
    """Bin whose increment law governs each observation (a replaced engine counts as bin 0)."""
    return np.where(data.d == REPLACE, 0, data.x)


def estimate_transition(data: PanelDataset, n_bins: Optional[int] = None,
                        n_increments: Optional[int] = None) -> TransitionModel:
    """Empirical Pr(Delta | x) with sparse bins pooled into groups of ten.

    A bin with fewer than 30 observations takes the pooled row of its group.
    Groups without any observation borrow the nearest lower group with data,
    or the pooled row of the whole panel when no lower group has data.
    """
    if len(data) == 0:
        raise ValueError("cannot estimate a transition law from an empty panel")
    xe = effective_bins(data)
    n = int(n_bins if n_bins is not None else max(int(data.x.max()), int(data.delta.max())) + 1)
    K = int(n_increments if n_increments is not None else int(data.delta.max()) + 1)
    if int(data.delta.max()) >= K:
        raise ValueError(f"observed increment {int(data.delta.max())} exceeds the declared support")
    counts = np.zeros((n, K))
    np.add.at(counts, (xe, data.delta), 1.0)
    n_groups = -(-n // POOL_WIDTH)
    group_counts = np.zeros((n_groups, K))
    np.add.at(group_counts, np.arange(n) // POOL_WIDTH, counts)
    pooled = counts.sum(axis=0)
    group_rows = np.empty_like(group_counts)
    for g in range(n_groups):
        src = g
        while src >= 0 and group_counts[src].sum() == 0:
            src -= 1
        row = group_counts[src] if src >= 0 else pooled
        group_rows[g] = row / row.sum()
    visited = np.unique(xe)
    for x in visited:
        if group_counts[x // POOL_WIDTH].sum() == 0:
            raise ValueError(f"bin group of state {x} has no observations")
    rows = np.empty((n, K))
    for x in range(n):
        tot = counts[x].sum()
        rows[x] = counts[x] / tot if tot >= POOL_MIN_OBS else group_rows[x // POOL_WIDTH]
    return TransitionModel(rows)


def transition_loglik(data: PanelDataset, transition: TransitionModel) -> float:
    """sum log Pr(Delta_it | x_it), the theta-free part of the likelihood."""
    p = transition.rows[effective_bins(data), data.delta]
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(p)))


# --- parameter handling -----------------------------------------------------------------


def _is_log(name: str, family: Family) -> bool:
    return name == "sigma" or (family is Family.CARA_EZ and name in ("alpha", "rho"))


def _is_crra_bounded(name: str, family: Family) -> bool:
    return family is Family.CRRA_EZ and name in ("alpha", "rho")


def to_unconstrained(theta: dict, names: Sequence[str], family: Family) -> np.ndarray:
    out = []
    for k in names:
        v = float(theta[k])
        if _is_log(k, family):
            out.append(math.log(v) if v > 0 else -np.inf)
        elif _is_crra_bounded(k, family):
            out.append(math.log(1.0 - v) if v < 1 else -np.inf)
        else:
            out.append(v)
    return np.array(out)


def from_unconstrained(eta: np.ndarray, names: Sequence[str], family: Family) -> dict:
    out = {}
    for k, e in zip(names, eta):
        e = float(e)
        if _is_log(k, family):
            out[k] = math.exp(min(e, 700.0))
        elif _is_crra_bounded(k, family):
            out[k] = 1.0 - math.exp(min(e, 700.0))
        else:
            out[k] = e
    return out


def _jacobian_diag(theta: dict, names: Sequence[str], family: Family) -> np.ndarray:
    """d theta / d eta for each free parameter."""
    out = []
    for k in names:
        if _is_log(k, family):
            out.append(theta[k])
        elif _is_crra_bounded(k, family):
            out.append(-(1.0 - theta[k]))
        else:
            out.append(1.0)
    return np.array(out)


def full_params(theta: dict, config: EstimationConfig) -> dict:
    """Complete parameter dictionary from free values, fixed values and defaults."""
    p = dict(DEFAULT_START)
    p.update(config.fixed)
    p.update({k: theta[k] for k in config.free_params if k in theta})
    if config.separable_constraint:
        p["rho"] = p["alpha"]
    return p


def build_model(params: dict, transition: TransitionModel, config: EstimationConfig) -> BusModel:
    n = transition.n_bins
    prefs = PreferenceSpec(config.family, params["alpha"], params["rho"], config.beta_fixed)
    return BusModel(
        StateGrid(n, config.bin_width_miles),
        PayoffParams(params["theta_d"], params["theta_x"], config.rc_fixed, params["sigma"]),
        transition,
        prefs,
        ShockSpec(config.shocks),
    )


# --- likelihood ------------------------------------------------------------------------


class Likelihood:
    """Simulated log-likelihood with cached data summaries and one fixed draw block."""

    def __init__(self, data: PanelDataset, config: EstimationConfig,
                 transition: Optional[TransitionModel] = None, warm_start: bool = False):
        self.config = config
        n_bins = config.n_bins
        data.validate(n_bins)
        self.data = data
        self.transition = transition if transition is not None else estimate_transition(data, n_bins)
        n = self.transition.n_bins
        if int(data.x.max()) >= n:
            raise ValueError("panel visits states outside the transition grid")
        self.counts = np.zeros((n, 2))
        np.add.at(self.counts, (data.x, data.d), 1.0)
        self.delta_term = transition_loglik(data, self.transition)
        sc = config.solver_config
        self._shock_spec = ShockSpec(config.shocks)
        self.eps = self._shock_spec.draw(stream(sc.seed, DRAWS_SOLVE), sc.n_sim_eps)
        if config.n_ccp_draws:
            self.eps_ccp = self._shock_spec.draw(stream(sc.seed, DRAWS_LIKELIHOOD), config.n_ccp_draws)
        else:
            self.eps_ccp = None
        self.warm_start = warm_start
        self._V = None
        self.n_evals = 0
        self.n_solver_failures = 0

    @property
    def n_obs(self) -> int:
        return len(self.data)

    @property
    def draw_fingerprint(self) -> str:
        fp = block_fingerprint(self.eps)
        if self.eps_ccp is not None:
            fp += ":" + block_fingerprint(self.eps_ccp)
        return fp

    def model(self, theta: dict) -> BusModel:
        return build_model(full_params(theta, self.config), self.transition, self.config)

    def temperature(self, params: dict) -> float:
        tau = self.config.ccp_smoothing_temperature
        return 0.05 * params["sigma"] if tau is None else tau

    def solve(self, model: BusModel):
        sep = self.config.structurally_separable
        kernel = BellmanKernel(model, self.eps, sep)
        sc = self.config.solver_config
        V0 = None
        if self.warm_start and self._V is not None:
            V0 = self._V
            try:
                kernel.continuation(V0)
            except DomainError:
                V0 = None
        if V0 is None:
            hi, _ = block_bounds(model, self.eps, sep)
            bounds = compute_bounds(model, sc.n_bounds_mc, sc.seed, sep)
            v = max(bounds.v_star, hi)
            if (model.prefs.family is Family.CARA_EZ and model.prefs.rho < LINEAR_LIMIT
                    and model.prefs.alpha >= LINEAR_LIMIT and not sep):
                v = max(bounds.v_star_mc, hi)
            V0 = np.full(model.n_bins, v)
        V, _, _, conv, _ = iterate(kernel, V0, sc.tol_sup_norm, sc.max_iters)
        if not conv:
            self.n_solver_failures += 1
        if self.warm_start and np.all(np.isfinite(V)):
            self._V = V
        return V, kernel

    def replace_probs(self, theta: dict, tau: Optional[float] = None) -> np.ndarray:
        """Simulated Pr(replace | x) at theta (smoothed unless tau == 0)."""
        params = full_params(theta, self.config)
        model = build_model(params, self.transition, self.config)
        V, kernel = self.solve(model)
        if self.eps_ccp is not None:
            kernel = BellmanKernel(model, self.eps_ccp, kernel.separable)
        v0, v1 = kernel.choice_values(V)
        t = self.temperature(params) if tau is None else tau
        if t == 0:
            return np.mean(v1 > v0, axis=0)
        b = model.prefs.beta
        z0 = kernel.continuation(v0.ravel()).reshape(v0.shape) / (1.0 - b)
        z1 = kernel.continuation(v1.ravel()).reshape(v1.shape) / (1.0 - b)
        return np.mean(special.expit((z1 - z0) / t), axis=0)

    def cell_logp(self, theta: dict, tau: Optional[float] = None) -> np.ndarray:
        """log p(d | x) as an (n_bins, 2) array."""
        p1 = self.replace_probs(theta, tau)
        with np.errstate(divide="ignore"):
            return np.column_stack([np.log1p(-p1), np.log(p1)])

    def __call__(self, theta: dict, tau: Optional[float] = None) -> float:
        self.n_evals += 1
        try:
            params = full_params(theta, self.config)
            if params["sigma"] <= 0:
                return NEG_INF
            lp = self.cell_logp(theta, tau)
        except (DomainError, ValueError, FloatingPointError) as exc:
            log.debug("inadmissible parameter %s: %s", theta, exc)
            return NEG_INF
        used = self.counts > 0
        if np.any(~np.isfinite(lp[used])):
            if (self.config.ccp_smoothing_temperature == 0) if tau is None else tau == 0:
                log.info("a visited (state, decision) cell has zero simulated probability; "
                         "a positive ccp_smoothing_temperature avoids this")
            return NEG_INF
        return float(np.sum(self.counts[used] * lp[used]) + self.delta_term)


def log_likelihood(theta: dict, data: PanelDataset, fixed: EstimationConfig,
                   transition: Optional[TransitionModel] = None) -> float:
    """LL(theta) from a cold start; bitwise reproducible for a given seed."""
    return Likelihood(data, fixed, transition)(theta)


# --- fitting ---------------------------------------------------------------------------


def _simplex(eta0: np.ndarray, names, family, scale: float) -> np.ndarray:
    k = len(eta0)
    sim = np.tile(eta0, (k + 1, 1))
    for i, name in enumerate(names):
        if _is_log(name, family) or _is_crra_bounded(name, family):
            step = scale
        else:
            step = scale * max(abs(eta0[i]), 0.1)
        sim[i + 1, i] += step
    return sim


def fit(data: PanelDataset, config: EstimationConfig, theta0: Optional[dict] = None,
        spec: str = "custom", transition: Optional[TransitionModel] = None,
        compute_se: bool = True) -> EstimateResult:
    """Maximise the simulated likelihood over the free parameters."""
    lik = Likelihood(data, config, transition, warm_start=config.warm_start)
    names = tuple(k for k in PARAM_ORDER if k in config.free_params)
    start = full_params(dict(DEFAULT_START if theta0 is None else {**DEFAULT_START, **theta0}), config)
    fam = config.family
    opt = config.optimizer
    eta0 = to_unconstrained(start, names, fam)

    def objective(eta):
        val = lik(from_unconstrained(eta, names, fam))
        return -val if np.isfinite(val) else PENALTY

    if names:
        res = optimize.minimize(objective, eta0, method="Nelder-Mead", options={
            "maxfev": opt.max_evals, "fatol": opt.f_tol, "xatol": opt.x_tol,
            "initial_simplex": _simplex(eta0, names, fam, opt.initial_simplex_scale)})
        best_eta, best_f, converged = res.x, res.fun, bool(res.success)
        if opt.restart:
            res2 = optimize.minimize(objective, best_eta, method="Nelder-Mead", options={
                "maxfev": opt.max_evals, "fatol": opt.f_tol, "xatol": opt.x_tol,
                "initial_simplex": _simplex(best_eta, names, fam, opt.initial_simplex_scale / 2)})
            if res2.fun <= best_f:
                best_eta, best_f = res2.x, res2.fun
            converged = converged and bool(res2.success)
        theta_hat = from_unconstrained(best_eta, names, fam)
    else:
        theta_hat, converged = {}, True
    # report the likelihood at the optimum from a cold start, independent of the search path
    loglik = log_likelihood(theta_hat, data, config, lik.transition)
    params = full_params(theta_hat, config)
    if compute_se and names:
        cov = opg_covariance(theta_hat, data, config, transition=lik.transition)
        se, failures, ci = _delta_se(cov), cov["failures"], confidence_intervals(cov)
    else:
        se, failures, ci = {k: np.nan for k in names}, [], {k: (np.nan, np.nan) for k in names}
    model = build_model(params, lik.transition, config)
    return EstimateResult(
        spec=spec, theta_hat=params, std_errors=se, loglik=loglik, n_obs=len(data),
        converged=bool(converged and np.isfinite(loglik)), eval_count=lik.n_evals,
        free_params=names, model=model.to_dict(), config=config.to_dict(),
        seed=config.solver_config.seed, draw_fingerprint=lik.draw_fingerprint, se_failures=failures,
        conf_int=ci,
    )


def fit_spec(data: PanelDataset, spec: str, theta0: Optional[dict] = None, **kw) -> EstimateResult:
    config = EstimationConfig.for_spec(spec, **kw)
    return fit(data, config, theta0, spec=spec)


# --- standard errors ---------------------------------------------------------------------


def opg_covariance(theta_hat: dict, data: PanelDataset, config: EstimationConfig,
                   step: float = 1e-4, transition: Optional[TransitionModel] = None) -> dict:
    """Inverse outer product of per-observation scores in unconstrained coordinates.

    Scores are central differences of log p(d | x) on the smoothed likelihood
    (a zero temperature is replaced by the default). Parameters whose score
    carries no information, or that sit in a singular block, are listed in
    ``failures`` and get NaN rows and columns.
    """
    names = tuple(k for k in PARAM_ORDER if k in config.free_params)
    cfg = config
    if config.ccp_smoothing_temperature == 0:
        cfg = dataclasses.replace(config, ccp_smoothing_temperature=None)
    params = full_params(theta_hat, cfg)
    k = len(names)
    out = {"names": names, "params": params, "family": cfg.family,
           "eta": to_unconstrained(params, names, cfg.family),
           "cov": np.full((k, k), np.nan), "failures": []}
    if not names:
        return out
    lik = Likelihood(data, cfg, transition)
    fam = cfg.family
    eta = out["eta"]
    n = lik.transition.n_bins
    scores = np.zeros((n, 2, k))
    for i in range(k):
        lp = []
        for sgn in (1.0, -1.0):
            e = eta.copy()
            e[i] += sgn * step
            lp.append(lik.cell_logp(from_unconstrained(e, names, fam)))
        with np.errstate(invalid="ignore"):
            scores[:, :, i] = (lp[0] - lp[1]) / (2.0 * step)
    used = lik.counts > 0
    s = scores[used]
    w = lik.counts[used]
    if not np.all(np.isfinite(s)):
        out["failures"] = list(names)
        return out
    opg = (s * w[:, None]).T @ s
    diag = np.diag(opg)
    ok = diag > 1e-12 * max(1.0, float(diag.max(initial=0.0)))
    idx = np.flatnonzero(ok)
    out["failures"] = [names[j] for j in np.flatnonzero(~ok)]
    if idx.size:
        sub = opg[np.ix_(idx, idx)]
        try:
            if np.linalg.cond(sub) > 1e14:
                raise np.linalg.LinAlgError("ill-conditioned")
            cov = np.linalg.inv(sub)
            if not np.all(np.isfinite(cov)) or np.any(np.diag(cov) < 0):
                raise np.linalg.LinAlgError("ill-conditioned")
            out["cov"][np.ix_(idx, idx)] = cov
        except np.linalg.LinAlgError:
            out["failures"].extend(names[j] for j in idx)
    return out


def standard_errors(theta_hat: dict, data: PanelDataset, config: EstimationConfig,
                    step: float = 1e-4, transition: Optional[TransitionModel] = None):
    """OPG standard errors mapped to the natural scale by the delta method.

    Returns ({name: se}, failures); failed parameters carry NaN.
    """
    cov = opg_covariance(theta_hat, data, config, step, transition)
    return _delta_se(cov), cov["failures"]


def _delta_se(cov: dict) -> dict:
    names = cov["names"]
    jac = _jacobian_diag(cov["params"], names, cov["family"])
    var = np.diag(cov["cov"]) * jac ** 2
    return {k: float(math.sqrt(v)) if np.isfinite(v) else np.nan for k, v in zip(names, var)}


def confidence_intervals(cov: dict, level: float = 0.95) -> dict:
    """Wald intervals built in the unconstrained coordinates and mapped back.

    For sigma and the CARA parameters this is a log-scale interval, which
    stays inside the admissible region.
    """
    names, fam = cov["names"], cov["family"]
    zq = float(stats.norm.ppf(0.5 + level / 2.0))
    se_eta = np.sqrt(np.diag(cov["cov"]))
    out = {}
    for i, k in enumerate(names):
        if not np.isfinite(se_eta[i]):
            out[k] = (np.nan, np.nan)
            continue
        lo = from_unconstrained(np.array([cov["eta"][i] - zq * se_eta[i]]), (k,), fam)[k]
        hi = from_unconstrained(np.array([cov["eta"][i] + zq * se_eta[i]]), (k,), fam)[k]
        out[k] = (min(lo, hi), max(lo, hi))
    return out


# --- likelihood-ratio test ------------------------------------------------------------------


LR_SLACK = 1e-6


def lr_test(loglik_unrestricted: float, loglik_restricted: float, df: int) -> dict:
    """2 (LL_u - LL_r) against a chi-square with ``df`` degrees of freedom.

    ``df = 0`` is accepted only for a zero statistic (a model compared with
    itself) and gives p = 1.
    """
    if df < 0:
        raise ValueError("df must be nonnegative")
    stat = 2.0 * (loglik_unrestricted - loglik_restricted)
    if stat < -2.0 * LR_SLACK:
        raise ValueError(
            f"restricted log-likelihood {loglik_restricted} exceeds unrestricted {loglik_unrestricted}; "
            "the fits are inconsistent")
    stat = max(stat, 0.0)
    if df == 0:
        if stat > 2.0 * LR_SLACK:
            raise ValueError("models with the same free parameters must have the same log-likelihood")
        return {"statistic": 0.0, "df": 0, "p_value": 1.0}
    return {"statistic": stat, "df": int(df), "p_value": float(stats.chi2.sf(stat, df))}
