"""Single-site Gibbs sampling of the pool posterior.

Used as the reference when the design is too large for exhaustive
summation. The chain keeps, for every pool, the number of currently positive
members, so the flip conditional of clone ``i`` only needs the pools
containing ``i`` and each flip costs O(degree of i).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .design import PoolingDesign
from .exact import MarginalVector
from .model import PoolPotential, potential_arrays

__all__ = ["ChainOptions", "gibbs_marginals", "N_BATCHES"]

N_BATCHES = 50


@dataclass(frozen=True)
class ChainOptions:
    burnin: int = 1000
    sweeps: int = 10000
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.burnin < 1 or self.sweeps < 1 or self.thin < 1:
            raise ValueError("burnin, sweeps and thin must all be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@numba.njit(cache=True)
def _sweeps(x, counts, h, rho, indptr, indices, u, acc, keep_from, thin):
    """Run ``u.shape[0]`` systematic-scan sweeps in place.

    ``indptr/indices`` list the pools of each clone (CSR). Sweeps with index
    ``>= keep_from`` whose offset is a multiple of ``thin`` are added to
    ``acc`` (one row per kept sweep). Returns the number of kept sweeps.
    """
    n = x.size
    kept = 0
    for t in range(u.shape[0]):
        for i in range(n):
            field = h[i]
            for p in range(indptr[i], indptr[i + 1]):
                r = indices[p]
                # clone i is pivotal when no other member of r is positive
                if counts[r] - x[i] == 0:
                    field += rho[r]
            if field >= 0:
                prob = 1.0 / (1.0 + np.exp(-field))
            else:
                e = np.exp(field)
                prob = e / (1.0 + e)
            new = 1 if u[t, i] < prob else 0
            if new != x[i]:
                delta = new - x[i]
                for p in range(indptr[i], indptr[i + 1]):
                    counts[indices[p]] += delta
                x[i] = new
        if t >= keep_from and (t - keep_from) % thin == 0:
            for i in range(n):
                acc[kept, i] = x[i]
            kept += 1
    return kept


def _clone_lists(d: PoolingDesign):
    inc = d.incidence
    indptr = np.zeros(d.n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(inc.sum(axis=0))
    indices = np.nonzero(inc.T)[1].astype(np.int64)
    return indptr, indices


def _batch_means(samples: np.ndarray, n_batches: int):
    """Means and batch-means standard errors of the rows of ``samples``.

    A clone that never (or always) changes state has zero spread between
    batches; its error is floored at the binomial error of the
    Laplace-smoothed frequency ``(count + 1) / (T + 2)`` so rare events the
    chain did not visit are not reported as known exactly.
    """
    t = samples.shape[0]
    b = min(n_batches, t)
    size = t // b
    batches = samples[: b * size].reshape(b, size, -1).mean(axis=1)
    mean = samples.mean(axis=0)
    if b < 2:
        return mean, np.full(mean.shape, np.inf)
    se = batches.std(axis=0, ddof=1) / np.sqrt(b)
    smooth = (samples.sum(axis=0) + 1.0) / (t + 2.0)
    return mean, np.maximum(se, np.sqrt(smooth * (1 - smooth) / t))


def gibbs_marginals(d: PoolingDesign, h, pots: Sequence[PoolPotential],
                    opts: ChainOptions | None = None, rng: np.random.Generator | None = None,
                    check_counts: bool = False, batch: int = 256,
                    n_batches: int = N_BATCHES) -> MarginalVector:
    """Posterior marginals by systematic-scan Gibbs sampling.

    The flip conditional of clone ``i`` is ``sigmoid(h_i + sum rho_r)`` over
    the pools ``r`` in which ``i`` is the only positive member (or would be).
    The uniforms are drawn from ``rng`` (default: seeded from
    ``opts.seed``), one batch of sweeps at a time, so a chain is a pure
    function of its seed. Standard errors use ``n_batches`` batch means.
    """
    opts = opts or ChainOptions()
    if check_counts:
        batch = 1
    rng = rng if rng is not None else np.random.default_rng(opts.seed)
    h = np.ascontiguousarray(h, dtype=float)
    if h.shape != (d.n,):
        raise ValueError(f"h has shape {h.shape}, expected ({d.n},)")
    if len(pots) != d.m:
        raise ValueError(f"{len(pots)} potentials for {d.m} pools")
    c0, c1 = potential_arrays(pots)
    rho = np.ascontiguousarray(c1 - c0)
    indptr, indices = _clone_lists(d)
    inc = d.incidence.astype(np.int64)

    # start from a prior draw
    x = (rng.random(d.n) < 1.0 / (1.0 + np.exp(-h))).astype(np.int64)
    counts = inc @ x
    n_keep = opts.sweeps // opts.thin + (opts.sweeps % opts.thin > 0)
    samples = np.zeros((n_keep, d.n), dtype=np.int8)
    total = opts.burnin + opts.sweeps
    done = 0
    kept = 0
    while done < total:
        nb = min(batch, total - done)
        u = rng.random((nb, d.n))
        keep_from = max(opts.burnin - done, 0)
        # align thinning with the global kept-sweep index
        if keep_from == 0:
            phase = (done - opts.burnin) % opts.thin
            keep_from = (opts.thin - phase) % opts.thin
        acc = np.zeros((nb, d.n), dtype=np.int8)
        k = _sweeps(x, counts, h, rho, indptr, indices, u, acc, keep_from, opts.thin)
        samples[kept:kept + k] = acc[:k]
        kept += k
        done += nb
        if check_counts and not np.array_equal(counts, inc @ x):
            raise AssertionError("incremental pool counts diverged from recomputed counts")
    mean, se = _batch_means(samples[:kept].astype(float), n_batches)
    return MarginalVector(mean, "mcmc", stderr=se)
