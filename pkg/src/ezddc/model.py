"""Bus engine replacement model: grid, payoffs, mileage transitions, shocks.

Mileage is measured in bins. Each month the agent sees accumulated mileage x
and shocks eps = (eps(0), eps(1)), picks d (1 = replace), then an increment
Delta is realised. Payoff and next state are

    pi(1, x, Delta) = theta_d * Delta - RC          x' = Delta
    pi(0, x, Delta) = theta_d * Delta - theta_x * x  x' = min(x + Delta, n_bins - 1)

and consumption is pi + sigma * eps(d).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .preferences import Family, PreferenceSpec

KEEP, REPLACE = 0, 1
ROW_SUM_TOL = 1e-12

_EULER_GAMMA = 0.5772156649015329
_GUMBEL_SCALE = math.sqrt(6.0) / math.pi


class ConfigError(ValueError):
    """Invalid model or run configuration; the message names the field."""


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one purpose, derived from a single run seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


# stream keys
DRAWS_SOLVE, DRAWS_CCP, DRAWS_PANEL, DRAWS_BOUNDS, DRAWS_MARGIN, DRAWS_LIKELIHOOD = range(6)


@dataclass(frozen=True)
class StateGrid:
    n_bins: int = 130
    bin_width_miles: float = 3000.0

    def __post_init__(self):
        if int(self.n_bins) != self.n_bins or self.n_bins < 1:
            raise ConfigError("grid.n_bins must be a positive integer")
        if not self.bin_width_miles > 0:
            raise ConfigError("grid.bin_width_miles must be positive")
        object.__setattr__(self, "n_bins", int(self.n_bins))


@dataclass(frozen=True)
class PayoffParams:
    """Payoff coefficients; ``revenue_constant`` replaces theta_d * Delta by a fixed amount."""

    theta_d: float
    theta_x: float
    rc: float
    sigma: float
    revenue_constant: Optional[float] = None

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ConfigError("payoff.sigma must be nonnegative")
        if not self.rc >= 0:
            raise ConfigError("payoff.rc must be nonnegative")


class Shock(str, enum.Enum):
    NORMAL = "normal"
    GUMBEL = "gumbel"


@dataclass(frozen=True)
class ShockSpec:
    """i.i.d. shocks per alternative, each with mean 0 and variance 1.

    The Gumbel option is the type-I extreme value law rescaled to unit
    variance and recentred to mean zero.
    """

    distribution: Shock = Shock.NORMAL

    def __post_init__(self):
        try:
            object.__setattr__(self, "distribution", Shock(self.distribution))
        except ValueError:
            raise ConfigError(
                f"shocks.distribution must be 'normal' or 'gumbel', got {self.distribution!r}"
            ) from None

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.distribution is Shock.NORMAL:
            return rng.standard_normal((size, 2))
        return _GUMBEL_SCALE * (rng.gumbel(size=(size, 2)) - _EULER_GAMMA)

    @property
    def gumbel_scale(self) -> float:
        return _GUMBEL_SCALE


@dataclass(frozen=True, eq=False)
class TransitionModel:
    """Pr(Delta = k | x) for every bin x, k = 0..K-1.

    ``replace_rows`` gives the increment law after a replacement. When omitted
    a replaced engine draws from the x = 0 row.
    """

    rows: np.ndarray
    replace_rows: Optional[np.ndarray] = None

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] < 1:
            raise ConfigError("transition.rows must be a non-empty matrix")
        _validate_rows(rows, "transition.rows")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        if self.replace_rows is not None:
            rep = np.array(self.replace_rows, dtype=float)
            if rep.shape != rows.shape:
                raise ConfigError("transition.replace_rows must match transition.rows in shape")
            _validate_rows(rep, "transition.replace_rows")
            rep.setflags(write=False)
            object.__setattr__(self, "replace_rows", rep)

    @property
    def n_bins(self) -> int:
        return self.rows.shape[0]

    @property
    def n_increments(self) -> int:
        return self.rows.shape[1]

    def matrix(self, d: int) -> np.ndarray:
        """(n_bins, K) increment probabilities conditional on action d."""
        if d == KEEP:
            return self.rows
        if self.replace_rows is not None:
            return self.replace_rows
        return np.broadcast_to(self.rows[0], self.rows.shape)

    def row(self, d: int, x: int) -> np.ndarray:
        return self.matrix(d)[x]

    def __eq__(self, other):
        if not isinstance(other, TransitionModel):
            return NotImplemented
        same_rep = (self.replace_rows is None and other.replace_rows is None) or (
            self.replace_rows is not None
            and other.replace_rows is not None
            and np.array_equal(self.replace_rows, other.replace_rows)
        )
        return np.array_equal(self.rows, other.rows) and same_rep


def _validate_rows(rows: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(rows)) or np.any(rows < 0):
        bad = int(np.argwhere(~(rows >= 0))[0][0])
        raise ConfigError(f"{name}[{bad}] has a negative or non-finite probability")
    sums = rows.sum(axis=1)
    off = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if off.size:
        raise ConfigError(f"{name}[{off[0]}] sums to {float(sums[off[0]])!r}, not 1")


@dataclass(frozen=True)
class BusModel:
    grid: StateGrid
    payoff: PayoffParams
    transition: TransitionModel
    prefs: PreferenceSpec
    shocks: ShockSpec = field(default_factory=ShockSpec)

    def __post_init__(self):
        if self.transition.n_bins != self.grid.n_bins:
            raise ConfigError(
                f"transition defines {self.transition.n_bins} rows but the grid has "
                f"{self.grid.n_bins} bins (missing row for state {self.transition.n_bins})"
                if self.transition.n_bins < self.grid.n_bins
                else f"transition defines {self.transition.n_bins} rows for "
                f"{self.grid.n_bins} grid bins"
            )

    @property
    def n_bins(self) -> int:
        return self.grid.n_bins

    @property
    def beta(self) -> float:
        return self.prefs.beta

    def with_prefs(self, **kw) -> "BusModel":
        return replace(self, prefs=replace(self.prefs, **kw))

    def with_payoff(self, **kw) -> "BusModel":
        return replace(self, payoff=replace(self.payoff, **kw))

    def payoff_table(self) -> np.ndarray:
        """pi[d, x, k] for every action, bin and increment."""
        n, K = self.n_bins, self.transition.n_increments
        p = self.payoff
        k = np.arange(K, dtype=float)
        x = np.arange(n, dtype=float)
        revenue = p.theta_d * k if p.revenue_constant is None else np.full(K, p.revenue_constant)
        table = np.empty((2, n, K))
        table[KEEP] = revenue[None, :] - p.theta_x * x[:, None]
        table[REPLACE] = revenue[None, :] - p.rc
        return table

    def next_state_table(self) -> np.ndarray:
        """x'[d, x, k] as integer bin indices."""
        n, K = self.n_bins, self.transition.n_increments
        k = np.arange(K)
        x = np.arange(n)
        table = np.empty((2, n, K), dtype=np.intp)
        table[KEEP] = np.minimum(x[:, None] + k[None, :], n - 1)
        table[REPLACE] = np.minimum(np.broadcast_to(k, (n, K)), n - 1)
        return table

    def transition_table(self) -> np.ndarray:
        """P[d, x, k] = Pr(Delta = k | d, x)."""
        return np.stack([self.transition.matrix(KEEP), self.transition.matrix(REPLACE)])

    def profit_range(self) -> tuple[float, float]:
        """Smallest and largest payoff over every (d, x, Delta) with positive probability."""
        pi = self.payoff_table()
        support = self.transition_table() > 0
        vals = pi[support]
        return float(vals.min()), float(vals.max())

    def to_dict(self) -> dict:
        out = {
            "grid": {"n_bins": self.grid.n_bins, "bin_width_miles": self.grid.bin_width_miles},
            "payoff": {
                "theta_d": self.payoff.theta_d,
                "theta_x": self.payoff.theta_x,
                "rc": self.payoff.rc,
                "sigma": self.payoff.sigma,
            },
            "transition": {"rows": self.transition.rows.tolist()},
            "shocks": {"distribution": self.shocks.distribution.value},
            "preferences": self.prefs.to_dict(),
        }
        if self.transition.replace_rows is not None:
            out["transition"]["replace_rows"] = self.transition.replace_rows.tolist()
        return out

    @classmethod
    def from_dict(cls, cfg: dict) -> "BusModel":
        return model_from_config(cfg)


# --- scalar operations ------------------------------------------------------


def payoff(p: PayoffParams, d: int, x: int, delta: int) -> float:
    revenue = p.theta_d * delta if p.revenue_constant is None else p.revenue_constant
    if d == REPLACE:
        return revenue - p.rc
    return revenue - p.theta_x * x


def consumption(p: PayoffParams, d: int, x: int, delta: int, eps_d: float) -> float:
    return payoff(p, d, x, delta) + p.sigma * eps_d


def next_state(grid: StateGrid, d: int, x: int, delta: int) -> int:
    if d == REPLACE:
        return min(delta, grid.n_bins - 1)
    return min(x + delta, grid.n_bins - 1)


# --- canned models ------------------------------------------------------------

TOY_TRANSITION = (
    (0.0, 0.5, 0.5),
    (0.2, 0.6, 0.2),
    (0.6, 0.4, 0.0),
)


def make_toy_model(alpha: float = 0.5, rho: float = 0.5, beta: float = 0.9,
                   family: Family = Family.CARA_EZ,
                   shocks: Shock = Shock.NORMAL) -> BusModel:
    """Three-state model with mileage in {0, 1, 2} (RC=3, theta_d=3, theta_x=0.5, sigma=2)."""
    return BusModel(
        grid=StateGrid(3, 3000.0),
        payoff=PayoffParams(theta_d=3.0, theta_x=0.5, rc=3.0, sigma=2.0),
        transition=TransitionModel(np.array(TOY_TRANSITION)),
        prefs=PreferenceSpec(family, alpha, rho, beta),
        shocks=ShockSpec(shocks),
    )


# --- JSON configuration ---------------------------------------------------------

_SCHEMA = {
    "grid": {"n_bins", "bin_width_miles"},
    "payoff": {"theta_d", "theta_x", "rc", "sigma"},
    "transition": {"rows", "replace_rows"},
    "shocks": {"distribution"},
    "preferences": {"family", "alpha", "rho", "beta"},
}
_REQUIRED = {
    "payoff": {"theta_d", "theta_x", "rc", "sigma"},
    "transition": {"rows"},
    "preferences": {"family", "alpha", "rho", "beta"},
}


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name} must be an object")
    unknown = set(sec) - _SCHEMA[name]
    if unknown:
        raise ConfigError(f"unknown field {name}.{sorted(unknown)[0]}")
    missing = _REQUIRED.get(name, set()) - set(sec)
    if missing:
        raise ConfigError(f"missing field {name}.{sorted(missing)[0]}")
    return sec


def _number(sec: dict, section: str, key: str) -> float:
    val = sec[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ConfigError(f"{section}.{key} must be a finite number")
    return float(val)


def model_from_config(cfg: dict) -> BusModel:
    """Build a BusModel from the JSON document layout; unknown fields are rejected."""
    if not isinstance(cfg, dict):
        raise ConfigError("model configuration must be a JSON object")
    unknown = set(cfg) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown field {sorted(unknown)[0]}")
    for name in _REQUIRED:
        if name not in cfg:
            raise ConfigError(f"missing field {name}")

    g = _section(cfg, "grid")
    pay = _section(cfg, "payoff")
    tr = _section(cfg, "transition")
    sh = _section(cfg, "shocks")
    pr = _section(cfg, "preferences")

    rows = tr["rows"]
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise ConfigError("transition.rows must be a list of probability rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ConfigError("transition.rows must all have the same length")

    n_bins = int(g.get("n_bins", len(rows)))
    if len(rows) < n_bins:
        raise ConfigError(f"transition.rows is missing the row for state {len(rows)}")
    grid = StateGrid(n_bins, float(g.get("bin_width_miles", 3000.0)))
    try:
        transition = TransitionModel(np.array(rows, dtype=float),
                                     None if "replace_rows" not in tr else np.array(tr["replace_rows"], dtype=float))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"transition: {exc}") from None

    payoff_params = PayoffParams(*(_number(pay, "payoff", k) for k in ("theta_d", "theta_x", "rc", "sigma")))
    family = pr["family"]
    if family not in ("cara", "crra"):
        raise ConfigError(f"preferences.family must be 'cara' or 'crra', got {family!r}")
    try:
        prefs = PreferenceSpec(Family(family), *(_number(pr, "preferences", k) for k in ("alpha", "rho", "beta")))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"preferences: {exc}") from None
    shocks = ShockSpec(sh.get("distribution", "normal"))
    return BusModel(grid, payoff_params, transition, prefs, shocks)


def load_model(path) -> BusModel:
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return model_from_config(cfg)
