"""Epstein-Zin time preferences in CRRA and CARA form.

A preference is the triple (u, phi, beta): u maps consumption into utils, the
aggregator phi maps utils into value units, and beta discounts. The recursion is

    V = E[ phi( (1-beta) u(c) + beta phi^{-1}(E V') ) ]

and ``alpha == rho`` makes phi the identity (time-separable expected utility).

CARA:  u(c) = (1 - exp(-rho c)) / rho,      phi = u_alpha o u_rho^{-1}
CRRA:  u(c) = c**(1 - rho),                 phi(z) = z**((1-alpha)/(1-rho))

Every function here is vectorised over numpy arrays and returns a float when
called with scalars.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SEPARABLE_TOL = 1e-12
# exponent saturation for exp(-rho c)
EXP_CLIP = 700.0
# relative slack before an argument just outside a closed domain is an error
_EDGE_SLACK = 1e-12
# below this CARA coefficient the linear limit is exact in double precision
LINEAR_LIMIT = 1e-100


class DomainError(ValueError):
    """An argument lies outside the domain of u, phi or their inverses."""


class Family(str, enum.Enum):
    CRRA_EZ = "crra"
    CARA_EZ = "cara"


class Timing(str, enum.Enum):
    EARLY = "early"
    LATE = "late"
    INDIFFERENT = "indifferent"


class Resolution(str, enum.Enum):
    PERIOD1 = "period1"
    PERIOD2 = "period2"


@dataclass(frozen=True)
class PreferenceSpec:
    family: Family
    alpha: float
    rho: float
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "beta", float(self.beta))
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not (np.isfinite(self.alpha) and np.isfinite(self.rho)):
            raise ValueError("alpha and rho must be finite")
        if self.family is Family.CRRA_EZ:
            if self.alpha > 1.0:
                raise ValueError(f"CRRA requires alpha <= 1, got {self.alpha}")
            if self.rho >= 1.0:
                raise ValueError(f"CRRA requires rho < 1, got {self.rho}")
        else:
            if self.alpha < 0.0 or self.rho < 0.0:
                raise ValueError(
                    f"CARA requires alpha >= 0 and rho >= 0, got ({self.alpha}, {self.rho})"
                )

    @classmethod
    def cara(cls, alpha, rho, beta=0.9):
        return cls(Family.CARA_EZ, alpha, rho, beta)

    @classmethod
    def crra(cls, alpha, rho, beta=0.9):
        return cls(Family.CRRA_EZ, alpha, rho, beta)

    def is_separable(self) -> bool:
        return abs(self.alpha - self.rho) < SEPARABLE_TOL

    @property
    def crra_exponent(self) -> float:
        """(1-alpha)/(1-rho); zero encodes the logarithmic limit alpha -> 1."""
        return (1.0 - self.alpha) / (1.0 - self.rho)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "alpha": self.alpha,
            "rho": self.rho,
            "beta": self.beta,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class TwoPeriodLottery:
    """Sure payoff now, then a lottery over second-period payoffs.

    ``resolution`` says whether the second-period draw is revealed in period 1
    (lottery P) or only in period 2 (lottery Q).
    """

    first_payoff: float
    second_payoffs: tuple
    resolution: Resolution = Resolution.PERIOD1

    def __post_init__(self):
        pairs = tuple((float(c), float(p)) for c, p in self.second_payoffs)
        probs = np.array([p for _, p in pairs])
        if len(pairs) == 0 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("second-period probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "second_payoffs", pairs)
        object.__setattr__(self, "resolution", Resolution(self.resolution))

    def with_resolution(self, resolution) -> "TwoPeriodLottery":
        return TwoPeriodLottery(self.first_payoff, self.second_payoffs, resolution)


def _out(x, scalar):
    return float(x) if scalar else x


def _check(ok, msg):
    if not np.all(ok):
        raise DomainError(msg)


# --- CARA building block u_k(c) = (1 - exp(-k c)) / k and its inverse -------


def _cara_u(k, c):
    if k < LINEAR_LIMIT:
        return c
    with np.errstate(over="ignore", invalid="ignore"):
        return -np.expm1(np.clip(-k * c, -EXP_CLIP, EXP_CLIP)) / k


def _cara_u_inv(k, y):
    if k < LINEAR_LIMIT:
        return y
    t = k * y
    _check(~(t > 1.0 + _EDGE_SLACK), f"argument above the CARA utility ceiling 1/{k}")
    t = np.minimum(t, 1.0)
    with np.errstate(divide="ignore"):
        return -np.log1p(-t) / k


# --- raw u / phi without any separability short-cut -------------------------


def _u(spec: PreferenceSpec, c):
    if spec.family is Family.CARA_EZ:
        return _cara_u(spec.rho, c)
    _check(c >= 0, "CRRA utility requires nonnegative consumption")
    return np.power(c, 1.0 - spec.rho)


def _u_inv(spec: PreferenceSpec, y):
    if spec.family is Family.CARA_EZ:
        return _cara_u_inv(spec.rho, y)
    _check(y >= 0, "CRRA utility inverse requires a nonnegative argument")
    return np.power(y, 1.0 / (1.0 - spec.rho))


def _phi(spec: PreferenceSpec, z):
    if spec.family is Family.CARA_EZ:
        return _cara_u(spec.alpha, _cara_u_inv(spec.rho, z))
    _check(z >= 0, "CRRA aggregator requires a nonnegative argument")
    k = spec.crra_exponent
    if k == 0.0:
        with np.errstate(divide="ignore"):
            return np.log(z)
    return np.power(z, k)


def _phi_inv(spec: PreferenceSpec, v):
    if spec.family is Family.CARA_EZ:
        return _cara_u(spec.rho, _cara_u_inv(spec.alpha, v))
    k = spec.crra_exponent
    if k == 0.0:
        return np.exp(v)
    _check(v >= 0, "CRRA aggregator inverse requires a nonnegative argument")
    return np.power(v, 1.0 / k)


def _phi_prime_ratio(spec: PreferenceSpec, w1, w0):
    """phi'(w1) / phi'(w0) on the utils scale."""
    if spec.family is Family.CARA_EZ:
        # phi'(w) = exp((rho - alpha) * u_rho^{-1}(w))
        c1 = _cara_u_inv(spec.rho, w1)
        c0 = _cara_u_inv(spec.rho, w0)
        gap = spec.rho - spec.alpha
        with np.errstate(invalid="ignore", over="ignore"):
            expo = np.where(np.isinf(c0) & np.isinf(c1) & (c0 == c1), 0.0, gap * (c1 - c0))
            return np.exp(expo)
    k = spec.crra_exponent
    _check(w0 > 0, "CRRA aggregator derivative is singular at zero")
    with np.errstate(divide="ignore"):
        return np.exp((k - 1.0) * (np.log(w1) - np.log(w0)))


# --- public API --------------------------------------------------------------


def utility(spec: PreferenceSpec, c):
    """Per-period utility u(c). CRRA raises DomainError for c < 0."""
    scalar = np.ndim(c) == 0
    return _out(_u(spec, np.asarray(c, dtype=float)), scalar)


def utility_inverse(spec: PreferenceSpec, y):
    scalar = np.ndim(y) == 0
    return _out(_u_inv(spec, np.asarray(y, dtype=float)), scalar)


def aggregator(spec: PreferenceSpec, z):
    """Time aggregator phi; the identity when the preference is separable."""
    scalar = np.ndim(z) == 0
    z = np.asarray(z, dtype=float)
    if spec.is_separable():
        return _out(z.copy(), scalar)
    return _out(_phi(spec, z), scalar)


def aggregator_inverse(spec: PreferenceSpec, v):
    scalar = np.ndim(v) == 0
    v = np.asarray(v, dtype=float)
    if spec.is_separable():
        return _out(v.copy(), scalar)
    return _out(_phi_inv(spec, v), scalar)


def certainty_equivalent(spec: PreferenceSpec, v):
    """Constant consumption stream c with phi(u(c)) == v."""
    return utility_inverse(spec, aggregator_inverse(spec, v))


def psi(spec: PreferenceSpec, y, z):
    """psi_y(z) = phi((1-beta) y + beta phi^{-1}(z))."""
    scalar = np.ndim(y) == 0 and np.ndim(z) == 0
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    b = spec.beta
    if spec.is_separable():
        return _out((1.0 - b) * y + b * z, scalar)
    return _out(_phi(spec, (1.0 - b) * y + b * _phi_inv(spec, z)), scalar)


def psi_prime(spec: PreferenceSpec, y, z):
    """Analytic derivative of psi_y(z) with respect to z."""
    scalar = np.ndim(y) == 0 and np.ndim(z) == 0
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    b = spec.beta
    if spec.is_separable():
        return _out(np.full(np.broadcast(y, z).shape, b), scalar)
    w0 = _phi_inv(spec, z)
    w1 = (1.0 - b) * y + b * w0
    return _out(b * _phi_prime_ratio(spec, w1, w0), scalar)


def arrow_pratt(spec: PreferenceSpec, z):
    """A_phi(z) = -phi''(z) / phi'(z)."""
    scalar = np.ndim(z) == 0
    z = np.asarray(z, dtype=float)
    if spec.is_separable():
        return _out(np.zeros_like(z), scalar)
    if spec.family is Family.CARA_EZ:
        denom = 1.0 - spec.rho * z
        _check(denom > 0, "Arrow-Pratt measure is singular at z >= 1/rho")
        return _out((spec.alpha - spec.rho) / denom, scalar)
    _check(z > 0, "Arrow-Pratt measure is singular at z <= 0 for CRRA")
    return _out((1.0 - spec.crra_exponent) / z, scalar)


def timing_preference(spec: PreferenceSpec) -> Timing:
    if spec.is_separable():
        return Timing.INDIFFERENT
    return Timing.EARLY if spec.rho < spec.alpha else Timing.LATE


def lottery_value(spec: PreferenceSpec, lot: TwoPeriodLottery) -> float:
    """Value of a two-period lottery under early or late resolution."""
    b = spec.beta
    payoffs = np.array([c for c, _ in lot.second_payoffs])
    probs = np.array([p for _, p in lot.second_payoffs])
    now = (1.0 - b) * utility(spec, lot.first_payoff)
    z = (1.0 - b) * utility(spec, payoffs)
    if lot.resolution is Resolution.PERIOD1:
        return float(np.dot(probs, aggregator(spec, now + b * z)))
    later = aggregator_inverse(spec, float(np.dot(probs, aggregator(spec, z))))
    return float(aggregator(spec, now + b * later))


def lottery_timing(spec: PreferenceSpec, first_payoff: float,
                   second_payoffs: Sequence, tie_tol: float = 1e-12) -> Timing:
    """Classify the timing preference revealed by V(P) - V(Q) on one lottery."""
    lot = TwoPeriodLottery(first_payoff, tuple(second_payoffs), Resolution.PERIOD1)
    gap = lottery_value(spec, lot) - lottery_value(spec, lot.with_resolution(Resolution.PERIOD2))
    if abs(gap) <= tie_tol:
        return Timing.INDIFFERENT
    return Timing.EARLY if gap > 0 else Timing.LATE
