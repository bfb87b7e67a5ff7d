"""Exact posterior marginals by exhaustive summation over all labelings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .design import PoolingDesign
from .model import PoolPotential, potential_arrays

__all__ = [
    "MarginalVector",
    "ENUMERATION_CAP",
    "exact_marginals",
    "enumerate_marginals",
    "exact_pool_tilted_marginals",
]

ENUMERATION_CAP = 26
_CHUNK = 1 << 15


@dataclass
class MarginalVector:
    """Per-clone estimates of ``P(X_i = 1 | s)``.

    ``raw`` holds the unclamped values when ``q`` had to be clamped into
    [0, 1] (bias-corrected estimates), ``stderr`` the Monte Carlo errors.
    """

    q: np.ndarray
    method: str
    stderr: np.ndarray | None = None
    raw: np.ndarray | None = None

    def __len__(self):
        return self.q.size


def _bits(k: int, start: int = 0, count: int | None = None) -> np.ndarray:
    if count is None:
        count = 1 << k
    codes = np.arange(start, start + count, dtype=np.int64)
    return ((codes[:, None] >> np.arange(k)) & 1).astype(np.float64)


def _check(d: PoolingDesign, h, pots, cap: int):
    if d.n > cap:
        raise ValueError(f"exact enumeration is capped at n={cap}, design has n={d.n}")
    h = np.asarray(h, dtype=float)
    if h.shape != (d.n,):
        raise ValueError(f"h has shape {h.shape}, expected ({d.n},)")
    if len(pots) != d.m:
        raise ValueError(f"{len(pots)} potentials for {d.m} pools")
    c0, c1 = potential_arrays(pots)
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(c0)) and np.all(np.isfinite(c1))):
        raise ValueError("fields and potentials must be finite")
    return h, c0, c1


def _half(idx: np.ndarray, h: np.ndarray, inc: np.ndarray):
    """Collapse all labelings of the clones ``idx`` by the set of pools they hit."""
    states = _bits(idx.size)
    logw = states @ h[idx]
    hit = (states @ inc[:, idx].T.astype(np.float64)) > 0
    patterns, inv = np.unique(hit, axis=0, return_inverse=True)
    inv = inv.ravel()
    w = np.exp(logw - logw.max())
    total = np.bincount(inv, weights=w, minlength=len(patterns))
    per_clone = np.stack([np.bincount(inv, weights=w * states[:, j], minlength=len(patterns))
                          for j in range(idx.size)]) if idx.size else np.zeros((0, len(patterns)))
    return patterns.astype(np.float64), total, per_clone


def exact_marginals(d: PoolingDesign, h, pots: Sequence[PoolPotential],
                    cap: int = ENUMERATION_CAP) -> MarginalVector:
    """Exact ``P(X_i = 1 | s)`` under ``exp{h.x + sum_r c_r(z_r(x))}``.

    The clones are split into two halves. Labelings of each half are grouped
    by the set of pools they make positive, and the two halves are joined
    pattern by pattern: the pool term of a joint labeling depends only on the
    union of the two patterns, and ``rho . (a OR b) = rho.a + rho.b -
    (a * rho).b``. Every summand is nonnegative and the join is rescaled by
    its maximum log-weight, so no cancellation or overflow occurs.
    """
    h, c0, c1 = _check(d, h, pots, cap)
    rho = c1 - c0
    inc = d.incidence
    idx_a = np.arange(d.n // 2)
    idx_b = np.arange(d.n // 2, d.n)
    pa, wa, wa_i = _half(idx_a, h, inc)
    pb, wb, wb_i = _half(idx_b, h, inc)

    la = pa @ rho
    lb = pb @ rho
    pa_rho = pa * rho
    rows = max(1, _CHUNK * 32 // max(len(pb), 1))
    top = -np.inf
    for lo in range(0, len(pa), rows):
        blk = la[lo:lo + rows, None] + lb[None, :] - pa_rho[lo:lo + rows] @ pb.T
        top = max(top, blk.max())
    mv_b = np.zeros(len(pa))   # M @ wb
    mt_a = np.zeros(len(pb))   # M.T @ wa
    for lo in range(0, len(pa), rows):
        blk = np.exp(la[lo:lo + rows, None] + lb[None, :] - pa_rho[lo:lo + rows] @ pb.T - top)
        mv_b[lo:lo + rows] = blk @ wb
        mt_a += wa[lo:lo + rows] @ blk
    z = wa @ mv_b
    q = np.concatenate([wa_i @ mv_b, wb_i @ mt_a]) / z
    return MarginalVector(np.clip(q, 0.0, 1.0), "exact")


def enumerate_marginals(d: PoolingDesign, h, pots: Sequence[PoolPotential],
                        cap: int = ENUMERATION_CAP, chunk: int = _CHUNK) -> MarginalVector:
    """Plain streamed enumeration of all ``2**n`` labelings.

    Slower than :func:`exact_marginals` and kept as its independent check.
    Weights are accumulated with a running maximum in log space.
    """
    h, c0, c1 = _check(d, h, pots, cap)
    inc = d.incidence.T.astype(np.float64)
    top = -np.inf
    total = 0.0
    per_clone = np.zeros(d.n)
    n_states = 1 << d.n
    for start in range(0, n_states, chunk):
        x = _bits(d.n, start, min(chunk, n_states - start))
        z = (x @ inc) > 0
        logw = x @ h + np.where(z, c1, c0).sum(axis=1)
        cmax = logw.max()
        if cmax > top:
            scale = np.exp(top - cmax) if np.isfinite(top) else 0.0
            total *= scale
            per_clone *= scale
            top = cmax
        w = np.exp(logw - top)
        total += w.sum()
        per_clone += w @ x
    return MarginalVector(per_clone / total, "exact")


def exact_pool_tilted_marginals(eta, pot: PoolPotential, max_size: int = 25) -> np.ndarray:
    """Marginals of ``p(x) ~ exp{eta.x + c(z(x))}`` over one pool's members.

    ``eta`` is the field on the pool members, in pool order. Sums all
    ``2**len(eta)`` states.
    """
    eta = np.asarray(eta, dtype=float)
    k = eta.size
    if k > max_size:
        raise ValueError(f"pool of size {k} exceeds enumeration limit {max_size}")
    if k == 0:
        return np.zeros(0)
    x = _bits(k)
    logw = x @ eta + np.where(x.any(axis=1), pot.c1, pot.c0)
    w = np.exp(logw - logw.max())
    return (w @ x) / w.sum()

