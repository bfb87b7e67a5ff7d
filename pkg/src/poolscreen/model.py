"""Generative model of a pooled screen.

Clone labels are independent Bernoulli draws, a pool reads positive when
any of its clones is positive, and each pool's four-level readout depends
on that indicator only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logit

from .design import PoolingDesign

__all__ = [
    "PriorModel",
    "ObservationModel",
    "PoolPotential",
    "default_observation_model",
    "z_of",
    "sample_labels",
    "place_positives",
    "sample_observations",
    "potentials_from_observations",
    "potential_arrays",
    "trial_rng",
]


@dataclass(frozen=True)
class PriorModel:
    """Independent clone priors, kept both as probabilities and logits."""

    p: np.ndarray
    h: np.ndarray

    @classmethod
    def from_probability(cls, p, n: int | None = None) -> "PriorModel":
        p = np.asarray(p, dtype=float)
        if p.ndim == 0:
            if n is None:
                raise ValueError("n is required for a scalar prior")
            p = np.full(n, float(p))
        if np.any((p < 0) | (p > 1)):
            raise ValueError("prior probabilities must lie in [0, 1]")
        with np.errstate(divide="ignore"):
            h = logit(p)
        return cls(p, h)

    @classmethod
    def from_natural(cls, h) -> "PriorModel":
        h = np.asarray(h, dtype=float)
        return cls(1.0 / (1.0 + np.exp(-h)), h)

    @property
    def n(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class ObservationModel:
    """``table[s, z] = p(S_r = s | Z_r = z)`` for ``s`` in 0..3 and ``z`` in 0..1."""

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.shape != (4, 2):
            raise ValueError(f"observation table must be 4x2, got {t.shape}")
        if np.any(t < 0):
            raise ValueError("observation probabilities must be nonnegative")
        if np.any(np.abs(t.sum(axis=0) - 1.0) > 1e-12):
            raise ValueError(f"columns must sum to one, got {t.sum(axis=0)}")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @classmethod
    def from_text(cls, text: str) -> "ObservationModel":
        """Parse four lines ``s p(s|0) p(s|1)``; ``#`` lines are comments."""
        t = np.full((4, 2), np.nan)
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 's p0 p1', got {line!r}")
            s = int(parts[0])
            if not 0 <= s <= 3:
                raise ValueError(f"line {lineno}: level {s} outside 0..3")
            t[s] = float(parts[1]), float(parts[2])
        if np.isnan(t).any():
            raise ValueError("all four levels must be given")
        return cls(t)

    def to_text(self) -> str:
        return "".join(f"{s} {float(self.table[s, 0])!r} {float(self.table[s, 1])!r}\n" for s in range(4))


class PoolPotential(NamedTuple):
    """Log-weights of a pool given its indicator: ``c0`` for z=0, ``c1`` for z=1."""

    c0: float
    c1: float

    @property
    def rho(self) -> float:
        return self.c1 - self.c0


def default_observation_model() -> ObservationModel:
    # measured readout frequencies of a real library screen
    return ObservationModel(np.array([
        [0.871, 0.05],
        [0.016, 0.11],
        [0.035, 0.27],
        [0.078, 0.57],
    ]))


def z_of(pool: Sequence[int], x) -> int:
    if len(pool) == 0:
        raise ValueError("empty pool")
    x = np.asarray(x)
    return int(np.max(x[list(pool)]))


def sample_labels(prior: PriorModel, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(prior.n) < prior.p).astype(np.int8)


def place_positives(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Labels with a uniformly random ``k``-subset of the ``n`` clones positive."""
    if not 0 <= k <= n:
        raise ValueError(f"cannot place {k} positives among {n} clones")
    x = np.zeros(n, dtype=np.int8)
    x[rng.choice(n, size=k, replace=False)] = 1
    return x


def sample_observations(d: PoolingDesign, x, obs: ObservationModel,
                        rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (d.n,):
        raise ValueError(f"label vector has shape {x.shape}, design has n={d.n}")
    if d.m == 0:
        return np.zeros(0, dtype=np.int8)
    z = (d.incidence & (x > 0)).any(axis=1).astype(int)
    # inverse-CDF draw from the column selected by each pool's indicator
    cdf = np.cumsum(obs.table[:, z].T, axis=1)
    u = rng.random(d.m)[:, None]
    s = (u >= cdf[:, :-1]).sum(axis=1)
    return s.astype(np.int8)


def potentials_from_observations(s, obs: ObservationModel) -> list[PoolPotential]:
    """Per-pool ``(log p(s_r|0), log p(s_r|1))``."""
    out = []
    for r, level in enumerate(np.asarray(s, dtype=int)):
        if not 0 <= level <= 3:
            raise ValueError(f"pool {r}: observation {level} outside 0..3")
        p0, p1 = obs.table[level]
        if p0 <= 0 or p1 <= 0:
            raise ValueError(f"pool {r}: observation {level} has zero probability under one "
                             "indicator value, potential would be infinite")
        out.append(PoolPotential(float(np.log(p0)), float(np.log(p1))))
    return out


def potential_arrays(pots: Sequence[PoolPotential]) -> tuple[np.ndarray, np.ndarray]:
    """Split a potential list into ``(c0, c1)`` arrays."""
    if len(pots) == 0:
        return np.zeros(0), np.zeros(0)
    a = np.asarray(pots, dtype=float)
    return a[:, 0].copy(), a[:, 1].copy()


def trial_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for ``(master_seed, *keys)``, e.g. one per trial."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, keys)]))
