"""Pooling designs: parsing, profiling, BIBD verification and construction.

Clone and point indices are 0-based everywhere. The 3-pool example design
with pools {1,2}, {1,3}, {2,3,4} in 1-based labels is written here as::

    4 3
    0 1
    0 2
    1 2 3
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DesignError",
    "PoolingDesign",
    "BlockDesign",
    "DesignProfile",
    "BibdParams",
    "BibdReport",
    "NearOptimality",
    "load_design",
    "load_blocks",
    "format_design",
    "profile",
    "verify_bibd",
    "dualize",
    "replicate_randomized",
    "cyclic_design",
    "check_near_optimal",
    "CATALOG",
    "catalog_bibd",
    "benchmark_design",
]


class DesignError(ValueError):
    """Raised for malformed or degenerate designs."""


def _check_sets(n: int, sets: Sequence[Sequence[int]], what: str) -> tuple[tuple[int, ...], ...]:
    out = []
    for j, members in enumerate(sets):
        members = [int(i) for i in members]
        if not members:
            raise DesignError(f"{what} {j} is empty")
        bad = [i for i in members if i < 0 or i >= n]
        if bad:
            raise DesignError(f"{what} {j}: index {bad[0]} out of range [0, {n})")
        if len(set(members)) != len(members):
            dup = next(i for i in members if members.count(i) > 1)
            raise DesignError(f"{what} {j}: duplicate index {dup}")
        out.append(tuple(sorted(members)))
    return tuple(out)


@dataclass(frozen=True)
class PoolingDesign:
    """A family of ``m`` distinct, nonempty pools over ``n`` clones."""

    n: int
    pools: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.n < 1:
            raise DesignError("a design needs at least one clone")
        pools = _check_sets(self.n, self.pools, "pool")
        if len(set(pools)) != len(pools):
            seen = {}
            for j, p in enumerate(pools):
                if p in seen:
                    raise DesignError(f"pools {seen[p]} and {j} are identical")
                seen[p] = j
        object.__setattr__(self, "pools", pools)

    @property
    def m(self) -> int:
        return len(self.pools)

    @cached_property
    def incidence(self) -> np.ndarray:
        """Boolean ``(m, n)`` matrix, True where clone ``i`` is in pool ``r``."""
        a = np.zeros((self.m, self.n), dtype=bool)
        for r, pool in enumerate(self.pools):
            a[r, list(pool)] = True
        return a

    @cached_property
    def clone_pools(self) -> tuple[tuple[int, ...], ...]:
        """For every clone, the indices of the pools that contain it."""
        acc: list[list[int]] = [[] for _ in range(self.n)]
        for r, pool in enumerate(self.pools):
            for i in pool:
                acc[i].append(r)
        return tuple(tuple(a) for a in acc)

    def permuted(self, perm: Sequence[int]) -> "PoolingDesign":
        """Relabel clone ``i`` as ``perm[i]``."""
        perm = list(perm)
        return PoolingDesign(self.n, tuple(tuple(perm[i] for i in p) for p in self.pools))

    def as_blocks(self) -> "BlockDesign":
        return BlockDesign(self.n, self.pools)


@dataclass(frozen=True)
class BlockDesign:
    """Blocks over ``v`` points. Unlike pools, blocks may repeat."""

    v: int
    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.v < 1:
            raise DesignError("a block design needs at least one point")
        object.__setattr__(self, "blocks", _check_sets(self.v, self.blocks, "block"))

    @property
    def b(self) -> int:
        return len(self.blocks)

    @cached_property
    def incidence(self) -> np.ndarray:
        """Boolean ``(v, b)`` point-by-block matrix."""
        a = np.zeros((self.v, self.b), dtype=bool)
        for j, blk in enumerate(self.blocks):
            a[list(blk), j] = True
        return a


# ---------------------------------------------------------------------------
# text format


def _parse(text: str) -> tuple[int, int, list[list[int]]]:
    header = None
    rows: list[list[int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values = [int(tok) for tok in line.split()]
        except ValueError:
            raise DesignError(f"line {lineno}: expected integers, got {line!r}") from None
        if header is None:
            if len(values) != 2 or values[0] < 1 or values[1] < 0:
                raise DesignError(f"line {lineno}: header must be two counts, got {line!r}")
            header = values
            continue
        if not values:
            raise DesignError(f"line {lineno}: empty set")
        size = header[0]
        for i in values:
            if i < 0 or i >= size:
                raise DesignError(f"line {lineno}: index {i} out of range [0, {size})")
        if len(set(values)) != len(values):
            raise DesignError(f"line {lineno}: duplicate index in {line!r}")
        rows.append(values)
    if header is None:
        raise DesignError("missing header line")
    if len(rows) != header[1]:
        raise DesignError(f"header announces {header[1]} sets but {len(rows)} were given")
    return header[0], header[1], rows


def load_design(text: str) -> PoolingDesign:
    """Parse design-file content (header ``n m`` then one pool per line)."""
    n, _, rows = _parse(text)
    return PoolingDesign(n, tuple(tuple(r) for r in rows))


def load_blocks(text: str) -> BlockDesign:
    """Parse block-list content (header ``v b`` then one block per line)."""
    v, _, rows = _parse(text)
    return BlockDesign(v, tuple(tuple(r) for r in rows))


def format_design(d: PoolingDesign | BlockDesign) -> str:
    if isinstance(d, PoolingDesign):
        head, sets = (d.n, d.m), d.pools
    else:
        head, sets = (d.v, d.b), d.blocks
    lines = [f"{head[0]} {head[1]}"]
    lines += [" ".join(str(i) for i in s) for s in sets]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# profile


@dataclass(frozen=True)
class DesignProfile:
    pool_sizes: np.ndarray
    overlaps: np.ndarray  # |r ∩ s| over unordered pairs r < s
    degrees: np.ndarray
    lambda_max: int

    @property
    def overlap_matrix_sum(self) -> int:
        """Sum of overlaps over ordered pairs r != s."""
        return int(2 * self.overlaps.sum())


def profile(d: PoolingDesign) -> DesignProfile:
    a = d.incidence.astype(np.int64)
    gram = a @ a.T
    iu = np.triu_indices(d.m, k=1)
    overlaps = gram[iu]
    return DesignProfile(
        pool_sizes=a.sum(axis=1),
        overlaps=overlaps,
        degrees=a.sum(axis=0),
        lambda_max=int(overlaps.max()) if overlaps.size else 0,
    )


# ---------------------------------------------------------------------------
# BIBD


@dataclass(frozen=True)
class BibdParams:
    """Conventional ``(v, r, b, k, lambda)`` parameters of a 2-design."""

    v: int
    r: int
    b: int
    k: int
    lam: int

    def __post_init__(self):
        if min(self.v, self.r, self.b, self.k, self.lam) < 1:
            raise DesignError("BIBD parameters must be positive")
        if self.v * self.r != self.b * self.k:
            raise DesignError(f"vr != bk for {self}")
        if self.lam * (self.v - 1) != self.r * (self.k - 1):
            raise DesignError(f"lambda(v-1) != r(k-1) for {self}")

    def __str__(self):
        return f"BIBD({self.v},{self.r},{self.b},{self.k},{self.lam})"


@dataclass
class BibdReport:
    params: BibdParams
    counts_ok: bool = True
    bad_blocks: list[tuple[int, int]] = field(default_factory=list)  # (block, size)
    bad_points: list[tuple[int, int]] = field(default_factory=list)  # (point, replication)
    bad_pairs: list[tuple[tuple[int, int], int]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.counts_ok and not (self.bad_blocks or self.bad_points or self.bad_pairs)

    def summary(self) -> str:
        if self.passed:
            return f"{self.params}: PASS"
        parts = [f"{self.params}: FAIL"]
        if not self.counts_ok:
            parts.append("point/block counts do not match the parameters")
        if self.bad_blocks:
            parts.append(f"{len(self.bad_blocks)} blocks of wrong size, e.g. {self.bad_blocks[0]}")
        if self.bad_points:
            parts.append(f"{len(self.bad_points)} points with wrong replication, e.g. {self.bad_points[0]}")
        if self.bad_pairs:
            parts.append(f"{len(self.bad_pairs)} unbalanced pairs, e.g. {self.bad_pairs[0]}")
        return "; ".join(parts)


def verify_bibd(blocks: BlockDesign | PoolingDesign, p: BibdParams) -> BibdReport:
    """Check block sizes, replication numbers and pair balance against ``p``."""
    if isinstance(blocks, PoolingDesign):
        blocks = blocks.as_blocks()
    rep = BibdReport(p, counts_ok=(blocks.v == p.v and blocks.b == p.b))
    a = blocks.incidence.astype(np.int64)
    sizes = a.sum(axis=0)
    rep.bad_blocks = [(int(j), int(s)) for j, s in enumerate(sizes) if s != p.k]
    repl = a.sum(axis=1)
    rep.bad_points = [(int(i), int(c)) for i, c in enumerate(repl) if c != p.r]
    gram = a @ a.T
    iu, ju = np.triu_indices(blocks.v, k=1)
    cnt = gram[iu, ju]
    wrong = np.flatnonzero(cnt != p.lam)
    rep.bad_pairs = [((int(iu[w]), int(ju[w])), int(cnt[w])) for w in wrong]
    return rep


def dualize(blocks: BlockDesign | PoolingDesign) -> PoolingDesign:
    """Points become pools and blocks become clones."""
    if isinstance(blocks, PoolingDesign):
        blocks = blocks.as_blocks()
    a = blocks.incidence
    empty = np.flatnonzero(~a.any(axis=1))
    if empty.size:
        raise DesignError(f"point {empty[0]} lies in no block, its pool would be empty")
    return PoolingDesign(blocks.b, tuple(tuple(np.flatnonzero(row)) for row in a))


def replicate_randomized(base: BlockDesign | PoolingDesign, t: int, seed=None,
                         max_retries: int = 100) -> PoolingDesign:
    """Dual of ``t`` randomized copies of ``base``, with all clones separable.

    Copy 0 keeps the base point labels; every later copy gets an independent
    uniform relabelling of the points. Block order inside each copy is
    shuffled before fresh clone ids are assigned. Attempts are repeated until
    no two clones sit in exactly the same set of pools.
    """
    if t < 1:
        raise DesignError("repetition count must be at least 1")
    if isinstance(base, PoolingDesign):
        base = base.as_blocks()
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        blocks: list[tuple[int, ...]] = []
        for copy in range(t):
            relabel = np.arange(base.v) if copy == 0 else rng.permutation(base.v)
            for j in rng.permutation(base.b):
                blocks.append(tuple(sorted(int(relabel[p]) for p in base.blocks[j])))
        if len(set(blocks)) == len(blocks):
            return dualize(BlockDesign(base.v, tuple(blocks)))
    raise DesignError(f"could not separate all clones after {max_retries} attempts")


def cyclic_design(v: int, base_blocks: Iterable[Iterable[int]]) -> BlockDesign:
    """All translates ``B + g (mod v)`` of the base blocks, block-major order."""
    base = [sorted(int(x) % v for x in blk) for blk in base_blocks]
    if len({len(b) for b in base}) > 1:
        raise DesignError("base blocks must have equal size")
    out = [tuple((x + g) % v for x in blk) for blk in base for g in range(v)]
    return BlockDesign(v, tuple(out))


@dataclass
class NearOptimality:
    ok: bool
    lambda_bar: int
    k_bar: int
    bad_pairs: list[tuple[tuple[int, int], int]]
    bad_clones: list[tuple[int, int]]


def check_near_optimal(d: PoolingDesign) -> NearOptimality:
    """Test the sufficient condition for minimal maximum pool overlap.

    Holds when every pairwise overlap is ``lam`` or ``lam - 1`` (``lam`` the
    largest overlap, and ``lam - 1`` clamped at 0) and every clone degree is
    ``kbar`` or ``kbar - 1`` with ``kbar = ceil(m d / n)``.
    """
    prof = profile(d)
    if np.unique(prof.pool_sizes).size != 1:
        raise DesignError("near-optimality needs equal pool sizes")
    size = int(prof.pool_sizes[0])
    lam = prof.lambda_max
    kbar = math.ceil(d.m * size / d.n)
    allowed_overlap = {lam, max(lam - 1, 0)}
    iu, ju = np.triu_indices(d.m, k=1)
    bad_pairs = [((int(iu[w]), int(ju[w])), int(prof.overlaps[w]))
                 for w in range(prof.overlaps.size) if int(prof.overlaps[w]) not in allowed_overlap]
    bad_clones = [(i, int(k)) for i, k in enumerate(prof.degrees) if int(k) not in (kbar, kbar - 1)]
    return NearOptimality(not bad_pairs and not bad_clones, lam, kbar, bad_pairs, bad_clones)


# ---------------------------------------------------------------------------
# catalog

# affine plane of order 3, point (x, y) -> 3x + y
_AG23 = (
    (0, 3, 6), (1, 4, 7), (2, 5, 8), (0, 4, 8), (1, 5, 6), (2, 3, 7),
    (0, 5, 7), (1, 3, 8), (2, 4, 6), (0, 1, 2), (3, 4, 5), (6, 7, 8),
)
_FANO = ((0, 1, 3), (1, 2, 4), (2, 3, 5), (3, 4, 6), (4, 5, 0), (5, 6, 1), (6, 0, 2))
_PG23 = tuple(tuple(sorted((x + g) % 13 for x in (0, 1, 3, 9))) for g in range(13))

# (v, 4, 1) cyclic difference families, developed mod v
_DF73 = ((0, 1, 25, 61), (0, 2, 30, 53), (0, 3, 34, 66), (0, 4, 19, 33), (0, 5, 21, 67), (0, 8, 26, 64))
_DF97 = ((0, 1, 9, 24), (0, 2, 52, 80), (0, 3, 7, 60), (0, 5, 48, 66), (0, 6, 71, 81),
         (0, 11, 38, 67), (0, 12, 25, 58), (0, 14, 34, 76))

CATALOG: dict[str, tuple[BibdParams, object]] = {
    "9-4-12-3-1": (BibdParams(9, 4, 12, 3, 1), _AG23),
    "7-3-7-3-1": (BibdParams(7, 3, 7, 3, 1), _FANO),
    "13-4-13-4-1": (BibdParams(13, 4, 13, 4, 1), _PG23),
    "73-24-438-4-1": (BibdParams(73, 24, 438, 4, 1), ("cyclic", 73, _DF73)),
    "97-32-776-4-1": (BibdParams(97, 32, 776, 4, 1), ("cyclic", 97, _DF97)),
}


def catalog_bibd(name: str) -> tuple[BlockDesign, BibdParams]:
    """Return a verified catalog design, e.g. ``catalog_bibd("9-4-12-3-1")``."""
    try:
        params, source = CATALOG[name]
    except KeyError:
        raise DesignError(f"unknown catalog design {name!r}; have {sorted(CATALOG)}") from None
    if isinstance(source, tuple) and source and source[0] == "cyclic":
        blocks = cyclic_design(source[1], source[2])
    else:
        blocks = BlockDesign(params.v, source)
    report = verify_bibd(blocks, params)
    if not report.passed:
        raise DesignError(f"catalog entry {name} failed verification: {report.summary()}")
    return blocks, params


# benchmark pooling designs: n -> (base design, repetition)
_BENCHMARKS = {24: ("9-4-12-3-1", 2), 1314: ("73-24-438-4-1", 3), 1552: ("97-32-776-4-1", 2)}


def benchmark_design(n: int, seed=0) -> PoolingDesign:
    """Randomized repeated-BIBD pooling design with ``n`` in (24, 1314, 1552)."""
    try:
        name, t = _BENCHMARKS[n]
    except KeyError:
        raise DesignError(f"no experiment design with n={n}; have {sorted(_BENCHMARKS)}") from None
    blocks, _ = catalog_bibd(name)
    return replicate_randomized(blocks, t, seed=seed)

