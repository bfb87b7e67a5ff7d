"""Loopy belief propagation on the pool factor graph.

Each pool ``r`` carries a vector ``xi_r`` supported on its members, and the
approximate posterior is the independent model ``sigmoid(h + theta)`` with
``theta = sum_r xi_r``. A pool update projects the tilted distribution

    p(x) ~ exp{(h + theta - xi_r).x + c_r(z_r(x))}

onto independent Bernoulli marginals. For a pool term that only depends on
``z_r`` the projection has a closed form: with
``L_{-i} = sum_{j in r, j != i} log(1 + exp(eta_j))``,

    xi_ri = c1 + L_{-i} - logaddexp(c0, c1 + log(exp(L_{-i}) - 1)),

which does not depend on ``eta_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .design import PoolingDesign
from .exact import MarginalVector
from .model import PoolPotential, potential_arrays

__all__ = [
    "BpOptions",
    "BpState",
    "pool_messages",
    "pool_marginals_closed_form",
    "pool_update",
    "pool_objective",
    "bp_solve",
]


@dataclass(frozen=True)
class BpOptions:
    damping: float = 0.5
    tol: float = 1e-8
    max_iter: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class BpState:
    """Per-pool parameters ``xi[r]`` (aligned with ``pools[r]``) and their sum."""

    pools: tuple[tuple[int, ...], ...]
    xi: list[np.ndarray]
    theta: np.ndarray
    iterations: int = 0
    converged: bool = False
    residual: float = field(default=np.inf)

    @classmethod
    def zeros(cls, d: PoolingDesign) -> "BpState":
        return cls(d.pools, [np.zeros(len(p)) for p in d.pools], np.zeros(d.n))

    def xi_dense(self) -> np.ndarray:
        """``(m, n)`` array with ``xi[r, i] = 0`` for clones outside pool ``r``."""
        out = np.zeros((len(self.pools), self.theta.size))
        for r, pool in enumerate(self.pools):
            out[r, list(pool)] = self.xi[r]
        return out

    def zeta(self, r: int) -> np.ndarray:
        """``theta - xi_r`` restricted to pool ``r``."""
        return self.theta[list(self.pools[r])] - self.xi[r]

    def recompute_theta(self) -> None:
        theta = np.zeros_like(self.theta)
        for pool, x in zip(self.pools, self.xi):
            theta[list(pool)] += x
        self.theta = theta


def _log_expm1(x: np.ndarray) -> np.ndarray:
    # log(exp(x) - 1) for x >= 0; -inf at 0
    with np.errstate(divide="ignore"):
        return x + np.log(-np.expm1(-x))


def pool_messages(eta, c0: float, c1: float) -> np.ndarray:
    """Closed-form projected parameters ``xi_r`` for fields ``eta`` on the pool."""
    eta = np.asarray(eta, dtype=float)
    sp = np.logaddexp(0.0, eta)
    loo = sp.sum() - sp
    loo = np.maximum(loo, 0.0)
    return c1 + loo - np.logaddexp(c0, c1 + _log_expm1(loo))


def pool_marginals_closed_form(eta, pot: PoolPotential) -> np.ndarray:
    """Marginals of ``p(x) ~ exp{eta.x + c(z(x))}`` in O(pool size)."""
    eta = np.asarray(eta, dtype=float)
    return expit(eta + pool_messages(eta, pot.c0, pot.c1))


def pool_update(state: BpState, r: int, h, pot: PoolPotential) -> np.ndarray:
    """New ``xi_r`` (on pool ``r``'s members) given the other pools' parameters."""
    pool = list(state.pools[r])
    eta = np.asarray(h, dtype=float)[pool] + state.zeta(r)
    new = pool_messages(eta, pot.c0, pot.c1)
    if not np.all(np.isfinite(new)):
        raise FloatingPointError(f"pool {r}: projected marginal hit 0 or 1")
    return new


def pool_objective(xi_r, eta, pot: PoolPotential) -> float:
    """The projection objective for one pool, summed over its ``2**|r|`` states.

    ``sum_x w(x) {xi_r.x - sum_i log(1 + exp(eta_i + xi_ri))}`` with
    ``w(x) = exp{eta.x + c(z(x))}``; maximized by the projected ``xi_r``.
    """
    xi_r = np.asarray(xi_r, dtype=float)
    eta = np.asarray(eta, dtype=float)
    k = eta.size
    x = ((np.arange(1 << k)[:, None] >> np.arange(k)) & 1).astype(float)
    logw = x @ eta + np.where(x.any(axis=1), pot.c1, pot.c0)
    w = np.exp(logw - logw.max())
    return float(w @ (x @ xi_r - np.logaddexp(0.0, eta + xi_r).sum()))


def bp_solve(d: PoolingDesign, h, pots: Sequence[PoolPotential],
             opts: BpOptions | None = None, state: BpState | None = None):
    """Damped sequential loopy BP.

    Returns ``(theta0, marginals, state)``; non-convergence is reported by
    ``state.converged`` and ``state.residual`` rather than raised.
    """
    opts = opts or BpOptions()
    h = np.asarray(h, dtype=float)
    if len(pots) != d.m:
        raise ValueError(f"{len(pots)} potentials for {d.m} pools")
    c0, c1 = potential_arrays(pots)
    state = state or BpState.zeros(d)
    pools = [np.asarray(p) for p in d.pools]
    g = opts.damping
    theta = state.theta
    for it in range(1, opts.max_iter + 1):
        before = theta.copy()
        for r, pool in enumerate(pools):
            old = state.xi[r]
            eta = h[pool] + theta[pool] - old
            new = pool_messages(eta, c0[r], c1[r])
            if g:
                new = (1.0 - g) * new + g * old
            theta[pool] += new - old
            state.xi[r] = new
        state.theta = theta
        state.recompute_theta()
        theta = state.theta
        state.residual = float(np.max(np.abs(theta - before))) if theta.size else 0.0
        state.iterations = it
        if state.residual < opts.tol:
            state.converged = True
            break
    else:
        state.converged = False
    q = expit(h + theta)
    return theta.copy(), MarginalVector(q, "bp"), state
