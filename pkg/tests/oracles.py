"""Independent reference computations for the risk-neutral separable model with Gumbel shocks."""

import math

import numpy as np
from scipy.special import logsumexp


def _mean_choice_values(model, V):
    """m[d, x] = E_Delta[(1-beta) pi + beta V(x')] without the shock."""
    b = model.beta
    pi = model.payoff_table()
    xn = model.next_state_table()
    P = model.transition_table()
    return np.sum(P * ((1 - b) * pi + b * V[xn]), axis=2)


def gumbel_scale(model) -> float:
    """Scale of (1-beta) sigma eps_d when eps_d is a unit-variance, mean-zero Gumbel shock."""
    return (1 - model.beta) * model.payoff.sigma * math.sqrt(6.0) / math.pi


def logit_value_function(model, tol=1e-14, max_iters=100_000):
    """Exact ex-ante value function via log-sum-exp value iteration."""
    s = gumbel_scale(model)
    V = np.zeros(model.n_bins)
    for _ in range(max_iters):
        m = _mean_choice_values(model, V)
        V_new = s * logsumexp(m / s, axis=0)
        if np.max(np.abs(V_new - V)) < tol:
            return V_new
        V = V_new
    raise RuntimeError("oracle value iteration did not converge")


def logit_ccp(model, V):
    """Exact replacement probability at the oracle value function."""
    s = gumbel_scale(model)
    m = _mean_choice_values(model, V)
    return 1.0 / (1.0 + np.exp((m[0] - m[1]) / s))


def simulated_fixed_point_se(model, V, eps):
    """Per-state standard error of the simulated fixed point built on the draw block ``eps``.

    Linearises V_S - V = (I - G)^{-1} (T_S V - V) around the exact solution,
    where G is the Jacobian of the simulated operator, and propagates the
    per-draw variance of T_S V.
    """
    b = model.beta
    n = model.n_bins
    m = _mean_choice_values(model, V)
    shocks = (1 - b) * model.payoff.sigma * eps
    vals = m[None, :, :] + shocks[:, :, None]  # (S, 2, n)
    choice = np.argmax(vals, axis=1)  # (S, n)
    per_draw = np.max(vals, axis=1) - V[None, :]
    xn = model.next_state_table()
    P = model.transition_table()
    G = np.zeros((n, n))
    for d in (0, 1):
        share = np.mean(choice == d, axis=0)
        for x in range(n):
            np.add.at(G[x], xn[d, x], b * share[x] * P[d, x])
    A = np.linalg.inv(np.eye(n) - G)
    C = np.cov(per_draw, rowvar=False)
    return np.sqrt(np.diag(A @ C @ A.T) / len(eps))
