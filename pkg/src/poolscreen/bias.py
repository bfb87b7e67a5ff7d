"""Leading-order bias of loopy BP marginals and its correction.

Every pool function can be written as

    c_r(x) = const + sum_l b_l * prod_{i in r} (x_i - a_li),   a_li in [0, 1],

and the bias tensor ``B_rsi`` is bilinear in the centered pool functions, so
it reduces to products of single terms. All moments are taken under the
independent BP approximation with means ``xbar``.

For single terms with ``alpha_j = xbar_j - a_rj``, ``beta_j = xbar_j - a_sj``,
``g_j = xbar_j (1 - xbar_j)`` and overlap ``L = r & s``:

* ``i`` in ``r - s``:  ``B = -g_i * sum_{v <= L, |v| >= 2} e_r(r - v - {i}) e_s(s - v) prod_v g``
* ``i`` in ``L``: ``B = g_i [ (2 xbar_i - 1) sum_{k in L-i} g_k e_r(r-{i,k}) e_s(s-{i,k})
  - (1 - a_ri - a_si) sum_{v <= L-i, |v| >= 2} e_r(r-i-v) e_s(s-i-v) prod_v g ]``

with ``e_r(t) = prod_{j in t} alpha_j``. Both sums are empty when
``|L| <= 1``, so packing designs carry no leading-order bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import prod
from typing import Sequence

import numpy as np

from .design import PoolingDesign, profile
from .model import PoolPotential

__all__ = [
    "CanonicalPotential",
    "BiasReport",
    "group_test_potential",
    "ldpc_potential",
    "canonical_from_table",
    "as_canonical",
    "e_product",
    "b_tensor_direct",
    "b_tensor_closed",
    "pair_bias",
    "bias_correction",
    "bound_constants",
    "bias_upper_bound",
    "design_bias_bound",
    "CLAMP",
]

CLAMP = 1e-12


@dataclass(frozen=True)
class CanonicalPotential:
    """``const + sum_l coefs[l] * prod_j (x_{pool[j]} - anchors[l, j])``.

    ``family`` is ``"group-test"``, ``"ldpc"`` or ``"general"``; ``rho`` is the
    strength for the first two.
    """

    pool: tuple[int, ...]
    const: float
    coefs: np.ndarray
    anchors: np.ndarray
    family: str = "general"
    rho: float | None = None

    def __post_init__(self):
        coefs = np.atleast_1d(np.asarray(self.coefs, dtype=float))
        anchors = np.asarray(self.anchors, dtype=float).reshape(coefs.size, len(self.pool))
        if np.any((anchors < 0) | (anchors > 1)):
            raise ValueError("anchors must lie in [0, 1]")
        object.__setattr__(self, "pool", tuple(int(i) for i in self.pool))
        object.__setattr__(self, "const", float(self.const))
        object.__setattr__(self, "coefs", coefs)
        object.__setattr__(self, "anchors", anchors)

    @property
    def n_terms(self) -> int:
        return self.coefs.size

    def evaluate(self, x) -> np.ndarray:
        """Values on labelings of the pool members, ``x`` of shape ``(N, |pool|)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.full(x.shape[0], self.const)
        for b, a in zip(self.coefs, self.anchors):
            out += b * np.prod(x - a, axis=1)
        return out

    def scaled(self, alpha: float) -> "CanonicalPotential":
        rho = None if self.rho is None else alpha * self.rho
        return CanonicalPotential(self.pool, alpha * self.const, alpha * self.coefs,
                                  self.anchors, self.family, rho)

    def term_anchor_map(self, l: int) -> dict[int, float]:
        return dict(zip(self.pool, self.anchors[l]))


def group_test_potential(pool: Sequence[int], c0: float, c1: float) -> CanonicalPotential:
    """``c0`` when no member is positive, ``c1`` otherwise."""
    pool = tuple(pool)
    rho = c1 - c0
    if rho == 0:
        return CanonicalPotential(pool, c1, np.zeros(0), np.zeros((0, len(pool))), "group-test", 0.0)
    b = -rho * (-1.0) ** len(pool)
    return CanonicalPotential(pool, c1, [b], np.ones((1, len(pool))), "group-test", rho)


def ldpc_potential(pool: Sequence[int], rho: float, const: float = 0.0) -> CanonicalPotential:
    """``const + rho * prod_i (1 - 2 x_i)``."""
    pool = tuple(pool)
    if rho == 0:
        return CanonicalPotential(pool, const, np.zeros(0), np.zeros((0, len(pool))), "ldpc", 0.0)
    b = rho * (-2.0) ** len(pool)
    return CanonicalPotential(pool, const, [b], np.full((1, len(pool)), 0.5), "ldpc", rho)


def canonical_from_table(pool: Sequence[int], values) -> CanonicalPotential:
    """Canonical form of a pool function.

    ``values`` is either a ``(c0, c1)`` pair (group test) or a full table of
    length ``2**|pool|`` whose entry ``code`` is the value at the labeling
    with ``x[pool[j]] = (code >> j) & 1``. Constant, group-test and parity
    shaped tables get their one-term forms; anything else is expanded over
    all ``2**|pool|`` corner indicators.
    """
    pool = tuple(pool)
    k = len(pool)
    if isinstance(values, PoolPotential) or (np.ndim(values) == 1 and len(values) == 2 and k != 1):
        c0, c1 = (float(v) for v in values)
        return group_test_potential(pool, c0, c1)
    table = np.asarray(values, dtype=float)
    if table.shape != (1 << k,):
        raise ValueError(f"table for a pool of size {k} needs {1 << k} entries")
    if np.all(table == table[0]):
        return CanonicalPotential(pool, float(table[0]), np.zeros(0), np.zeros((0, k)))
    if np.all(table[1:] == table[1]):
        return group_test_potential(pool, float(table[0]), float(table[1]))
    codes = np.arange(1 << k)
    parity = np.array([bin(c).count("1") & 1 for c in codes])
    even, odd = table[parity == 0], table[parity == 1]
    if np.all(even == even[0]) and np.all(odd == odd[0]):
        return ldpc_potential(pool, (even[0] - odd[0]) / 2, (even[0] + odd[0]) / 2)
    bits = ((codes[:, None] >> np.arange(k)) & 1).astype(float)
    sign = np.prod(2 * bits - 1, axis=1)
    coefs = table * sign
    keep = coefs != 0
    return CanonicalPotential(pool, 0.0, coefs[keep], (1 - bits)[keep])


def as_canonical(pot, pool: Sequence[int]) -> CanonicalPotential:
    if isinstance(pot, CanonicalPotential):
        return pot
    return group_test_potential(pool, float(pot[0]), float(pot[1]))


def e_product(subset, xbar, anchor: dict[int, float]) -> float:
    """``prod_{i in subset} (xbar_i - anchor_i)``; 1 for the empty set."""
    return float(prod(xbar[i] - anchor[i] for i in subset))


# ---------------------------------------------------------------------------
# direct evaluation from moments


def _check_xbar(xbar, clones):
    xb = np.asarray(xbar, dtype=float)[list(clones)]
    if np.any((xb <= 0) | (xb >= 1)):
        raise ValueError("means must lie strictly inside (0, 1)")


def b_tensor_direct(i: int, xbar, pot_r: CanonicalPotential, pot_s: CanonicalPotential,
                    max_vars: int = 25) -> float:
    """``B_rsi`` from its defining moments, summed over every labeling of ``r | s | {i}``.

    Uses the full third-order tensor and the Fisher-normalized couplings
    without any knowledge of their sparsity.
    """
    xbar = np.asarray(xbar, dtype=float)
    u_set = sorted(set(pot_r.pool) | set(pot_s.pool) | {i})
    if len(u_set) > max_vars:
        raise ValueError(f"{len(u_set)} variables exceed the enumeration limit {max_vars}")
    _check_xbar(xbar, u_set)
    pos = {c: j for j, c in enumerate(u_set)}
    k = len(u_set)
    x = ((np.arange(1 << k)[:, None] >> np.arange(k)) & 1).astype(float)
    mu = xbar[u_set]
    p = np.prod(np.where(x > 0, mu, 1 - mu), axis=1)
    u = x - mu
    cr = pot_r.evaluate(x[:, [pos[c] for c in pot_r.pool]])
    cs = pot_s.evaluate(x[:, [pos[c] for c in pot_s.pool]])
    dr = cr - p @ cr
    ds = cs - p @ cs
    g = p @ (u * u)
    gt_r = (p * dr) @ u / g
    gt_s = (p * ds) @ u / g
    ui = u[:, pos[i]]
    w = p * ui
    t3 = (w[:, None] * u).T @ u
    t_r = (w * dr) @ u
    t_s = (w * ds) @ u
    t_rs = w @ (dr * ds)
    return float(-t_rs - gt_r @ t3 @ gt_s + t_r @ gt_s + t_s @ gt_r)


# ---------------------------------------------------------------------------
# closed forms


def _closed_single(i, xbar, r, ar, s, as_) -> float:
    overlap = sorted(set(r) & set(s))
    if len(overlap) <= 1:
        return 0.0
    in_r, in_s = i in ar, i in as_
    if not (in_r or in_s):
        return 0.0
    if in_s and not in_r:
        r, ar, s, as_ = s, as_, r, ar
        in_r, in_s = True, False

    def g(j):
        return xbar[j] * (1 - xbar[j])

    rset, sset = set(r), set(s)
    if not in_s:
        total = 0.0
        for k in range(2, len(overlap) + 1):
            for v in combinations(overlap, k):
                vs = set(v)
                total += (e_product(rset - vs - {i}, xbar, ar) * e_product(sset - vs, xbar, as_)
                          * prod(g(j) for j in v))
        return -g(i) * total
    rest = [j for j in overlap if j != i]
    first = sum(g(k) * e_product(rset - {i, k}, xbar, ar) * e_product(sset - {i, k}, xbar, as_)
                for k in rest)
    second = 0.0
    for k in range(2, len(overlap)):
        for v in combinations(rest, k):
            vs = set(v) | {i}
            second += (e_product(rset - vs, xbar, ar) * e_product(sset - vs, xbar, as_)
                       * prod(g(j) for j in v))
    return g(i) * ((2 * xbar[i] - 1) * first - (1 - ar[i] - as_[i]) * second)


def b_tensor_closed(i: int, xbar, pot_r: CanonicalPotential, pot_s: CanonicalPotential) -> float:
    """``B_rsi`` from the explicit subset-sum formulas, summed over term pairs."""
    xbar = np.asarray(xbar, dtype=float)
    if len(set(pot_r.pool) & set(pot_s.pool)) <= 1:
        return 0.0
    if i not in pot_r.pool and i not in pot_s.pool:
        return 0.0
    _check_xbar(xbar, set(pot_r.pool) | set(pot_s.pool))
    total = 0.0
    for lr, br in enumerate(pot_r.coefs):
        ar = pot_r.term_anchor_map(lr)
        for ls, bs in enumerate(pot_s.coefs):
            total += br * bs * _closed_single(i, xbar, pot_r.pool, ar, pot_s.pool,
                                              pot_s.term_anchor_map(ls))
    return total


def _subset_poly(ab: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Coefficients of ``prod_j (ab_j + g_j t)``: entry k sums over |v| = k."""
    poly = np.ones(1)
    for a, b in zip(ab, g):
        nxt = np.zeros(poly.size + 1)
        nxt[:-1] += poly * a
        nxt[1:] += poly * b
        poly = nxt
    return poly


def _leave_one_out_prod(a: np.ndarray) -> np.ndarray:
    if a.size == 0:
        return a
    left = np.concatenate([[1.0], np.cumprod(a[:-1])])
    right = np.concatenate([np.cumprod(a[::-1][:-1])[::-1], [1.0]])
    return left * right


def _pair_single(xb, ar, as_, n_r, n_s):
    """``B_rsi`` for one term pair at every clone of ``r | s``.

    Local coordinates: ``xb``, ``ar`` and ``as_`` are indexed by position in
    ``only_r + only_s + overlap`` with ``n_r``/``n_s`` the sizes of the first
    two groups.
    """
    lo = n_r + n_s
    g = xb * (1 - xb)
    alpha_r = xb[:n_r] - ar[:n_r]
    beta_s = xb[n_r:lo] - as_[n_r:lo]
    e_r = np.prod(alpha_r)
    e_s = np.prod(beta_s)
    ab = (xb[lo:] - ar[lo:]) * (xb[lo:] - as_[lo:])
    g_l = g[lo:]
    tail = _subset_poly(ab, g_l)[2:].sum()
    out_r = -g[:n_r] * _leave_one_out_prod(alpha_r) * e_s * tail
    out_s = -g[n_r:lo] * _leave_one_out_prod(beta_s) * e_r * tail
    out_l = np.empty(ab.size)
    for t in range(ab.size):
        mask = np.arange(ab.size) != t
        pw = _subset_poly(ab[mask], g_l[mask])
        first = pw[1] if pw.size > 1 else 0.0
        rest = pw[2:].sum()
        j = lo + t
        out_l[t] = (g[j] * e_r * e_s
                    * ((2 * xb[j] - 1) * first - (1 - ar[j] - as_[j]) * rest))
    return np.concatenate([out_r, out_s, out_l])


def pair_bias(xbar, pot_r: CanonicalPotential, pot_s: CanonicalPotential):
    """``B_rsi`` for every clone ``i`` of ``r | s`` at once.

    Returns ``(clones, values)``. Same quantity as :func:`b_tensor_closed`,
    with the subset sums collapsed into a polynomial product.
    """
    xbar = np.asarray(xbar, dtype=float)
    rset, sset = set(pot_r.pool), set(pot_s.pool)
    overlap = sorted(rset & sset)
    only_r = sorted(rset - sset)
    only_s = sorted(sset - rset)
    clones = np.array(only_r + only_s + overlap, dtype=int)
    values = np.zeros(clones.size)
    if len(overlap) <= 1:
        return clones, values
    _check_xbar(xbar, clones)
    xb = xbar[clones]
    local = {c: j for j, c in enumerate(clones.tolist())}
    pos_r = [local[c] for c in pot_r.pool]
    pos_s = [local[c] for c in pot_s.pool]
    ar = np.zeros(clones.size)
    as_ = np.zeros(clones.size)
    for lr, br in enumerate(pot_r.coefs):
        ar[pos_r] = pot_r.anchors[lr]
        for ls, bs in enumerate(pot_s.coefs):
            as_[pos_s] = pot_s.anchors[ls]
            values += br * bs * _pair_single(xb, ar, as_, len(only_r), len(only_s))
    return clones, values


@dataclass
class BiasReport:
    """Correction ``delta_i = -1/2 sum_{r != s} B_rsi`` and the corrected marginals."""

    delta: np.ndarray
    bp: np.ndarray
    corrected_raw: np.ndarray
    corrected: np.ndarray
    contributions: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def bias_correction(d: PoolingDesign, xbar, pots, clamp: float = CLAMP,
                    keep_contributions: bool = False) -> BiasReport:
    """Correct converged BP marginals ``xbar`` by the leading-order bias.

    The error of BP to leading order in the pool strengths is
    ``q_i - xbar_i = -1/2 sum_{r != s} B_rsi``; the minus sign is fixed by
    the weak-coupling limit, where exact and BP marginals can be compared
    directly (see ``tests/test_bias.py``). ``B_rsi = B_sri``, so the
    half-sum over ordered pairs is the full sum over unordered pairs. Pairs
    overlapping in at most one clone contribute nothing and are skipped.
    """
    xbar = np.asarray(xbar, dtype=float)
    if xbar.shape != (d.n,):
        raise ValueError(f"xbar has shape {xbar.shape}, expected ({d.n},)")
    canon = [as_canonical(p, pool) for p, pool in zip(pots, d.pools)]
    delta = np.zeros(d.n)
    contrib = {}
    inc = d.incidence.astype(np.int64)
    gram = inc @ inc.T
    rr, ss = np.nonzero(np.triu(gram, k=1) >= 2)
    for r, s in zip(rr, ss):
        clones, vals = pair_bias(xbar, canon[r], canon[s])
        np.add.at(delta, clones, vals)
        if keep_contributions:
            contrib[(int(r), int(s))] = (clones, vals)
    delta = 0.0 - delta
    raw = xbar + delta
    return BiasReport(delta, xbar.copy(), raw, np.clip(raw, clamp, 1 - clamp), contrib)


# ---------------------------------------------------------------------------
# bounds


def bound_constants(xbar, pot_r: CanonicalPotential, pot_s: CanonicalPotential) -> tuple[float, float]:
    """``C = sum |b_rl b_sl'|`` and ``delta = max |xbar_i - a_i|`` over both pools' terms."""
    xbar = np.asarray(xbar, dtype=float)
    c = float(np.abs(pot_r.coefs).sum() * np.abs(pot_s.coefs).sum())
    devs = [np.abs(xbar[list(p.pool)] - p.anchors).max() for p in (pot_r, pot_s) if p.n_terms]
    delta = float(max(devs)) if devs else 0.0
    if not 0 < delta < 1:
        raise ValueError(f"delta={delta} outside (0, 1)")
    return c, delta


def bias_upper_bound(r, s, C: float, delta: float) -> float:
    """``C delta^(|r|+|s|-2) / 2 * (1 + 1/(4 delta^2))^|r & s|``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    r, s = set(r), set(s)
    return C * delta ** (len(r) + len(s) - 2) / 2 * (1 + 1 / (4 * delta ** 2)) ** len(r & s)


def design_bias_bound(d: PoolingDesign, C: float, delta: float) -> float:
    """Bound on ``|delta_i|`` for an equal-size design, driven by the largest overlap."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    prof = profile(d)
    if np.unique(prof.pool_sizes).size > 1:
        raise ValueError("design bound needs equal pool sizes")
    size = int(prof.pool_sizes[0]) if d.m else 0
    return (C * d.m * (d.m - 1) / 2 * delta ** (2 * size - 2)
            * (1 + 1 / (4 * delta ** 2)) ** prof.lambda_max)
