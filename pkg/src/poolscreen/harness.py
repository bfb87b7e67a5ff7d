"""Simulation experiments comparing BP and bias-corrected BP to a reference.

An experiment fixes a pooling design, a prior and an observation model, and
for each number of positives ``k`` runs independent trials: place ``k``
positives at random, simulate the pool readouts, run BP and the bias
correction, compute reference marginals (exact or Gibbs) and record the
averaged Bernoulli KL divergence of each estimate from the reference.

Configuration is a flat ``key = value`` text file, e.g.::

    design = benchmark:24
    prior = 0.1
    ks = 1,2,3,4
    trials = 1000
    seed = 0
    reference = exact
    output = results/n24
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import rel_entr

from .bias import bias_correction
from .bp import BpOptions, bp_solve
from .design import PoolingDesign, benchmark_design, catalog_bibd, dualize, load_design
from .exact import ENUMERATION_CAP, MarginalVector, exact_marginals
from .mcmc import ChainOptions, gibbs_marginals
from .model import (
    ObservationModel,
    PriorModel,
    default_observation_model,
    place_positives,
    potentials_from_observations,
    sample_observations,
    trial_rng,
)

__all__ = [
    "kl_bernoulli_avg",
    "ExperimentConfig",
    "TrialRecord",
    "SummaryRow",
    "ExperimentResult",
    "resolve_design",
    "run_trial",
    "run_experiment",
    "format_summary",
    "TimingRow",
    "timing_smoke",
    "TRIAL_HEADER",
    "SUMMARY_HEADER",
]

log = logging.getLogger(__name__)

TRIAL_HEADER = ("k", "trial", "positives", "observations", "converged", "iterations",
                "kl_bp", "kl_corrected", "ref_stderr_max", "error")
SUMMARY_HEADER = ("k", "trials", "converged", "included", "failed",
                  "mean_kl_bp", "mean_kl_corrected", "improved")


def _as_array(q) -> np.ndarray:
    return np.asarray(q.q if isinstance(q, MarginalVector) else q, dtype=float)


def kl_bernoulli_avg(qref, qest) -> float:
    """Mean over clones of ``KL(Bernoulli(qref_i) || Bernoulli(qest_i))``.

    ``qest`` must lie strictly inside (0, 1); clamp before calling.
    """
    q = _as_array(qref)
    e = _as_array(qest)
    if q.shape != e.shape or q.ndim != 1:
        raise ValueError(f"shape mismatch: {q.shape} vs {e.shape}")
    if np.any((q < 0) | (q > 1)):
        raise ValueError("reference probabilities must lie in [0, 1]")
    if np.any((e <= 0) | (e >= 1)):
        raise ValueError("estimates must lie strictly inside (0, 1); clamp them first")
    if q.size == 0:
        return 0.0
    return float(np.mean(rel_entr(q, e) + rel_entr(1 - q, 1 - e)))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    design: str = "benchmark:24"
    design_seed: int = 0
    prior: float = 0.1
    obs: str = "default"
    ks: tuple[int, ...] = (1, 2, 3, 4)
    trials: int = 1000
    seed: int = 0
    reference: str = "auto"
    damping: float = 0.5
    tol: float = 1e-8
    max_iter: int = 1000
    burnin: int = 1000
    sweeps: int = 10000
    include_nonconverged: bool = True
    workers: int = 1
    output: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.ks or any(k < 0 for k in self.ks):
            raise ValueError("ks must be a nonempty list of nonnegative counts")
        if self.reference not in ("auto", "exact", "mcmc"):
            raise ValueError(f"reference must be auto, exact or mcmc, got {self.reference!r}")
        if not 0 < self.prior < 1:
            raise ValueError("prior must lie strictly between 0 and 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        # delegate range checks
        self.bp_options()
        self.chain_options()

    def bp_options(self) -> BpOptions:
        return BpOptions(self.damping, self.tol, self.max_iter)

    def chain_options(self, seed: int = 0) -> ChainOptions:
        return ChainOptions(self.burnin, self.sweeps, 1, seed)

    @classmethod
    def from_text(cls, text: str, base_dir: str | Path | None = None) -> "ExperimentConfig":
        """Parse ``key = value`` lines; relative paths resolve against ``base_dir``."""
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            kw[key] = _convert(key, types[key], value, lineno)
        cfg = cls(**kw)
        if base_dir is not None:
            base = Path(base_dir)
            upd = {}
            if cfg.obs != "default" and not Path(cfg.obs).is_absolute():
                upd["obs"] = str(base / cfg.obs)
            if cfg.design.startswith("file:") and not Path(cfg.design[5:]).is_absolute():
                upd["design"] = "file:" + str(base / cfg.design[5:])
            if cfg.output and not Path(cfg.output).is_absolute():
                upd["output"] = str(base / cfg.output)
            cfg = replace(cfg, **upd)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_text(path.read_text(), base_dir=path.parent)


def _convert(key, typ, value: str, lineno: int):
    try:
        if key == "ks":
            return tuple(int(v) for v in value.replace(",", " ").split())
        if key == "output":
            return value or None
        if "bool" in str(typ):
            low = value.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(value)
            return low in ("true", "yes", "1")
        if "int" in str(typ):
            return int(value)
        if "float" in str(typ):
            return float(value)
        return value
    except ValueError:
        raise ValueError(f"line {lineno}: bad value {value!r} for {key}") from None


def resolve_design(spec: str, seed: int = 0) -> PoolingDesign:
    """Build a design from ``benchmark:N``, ``catalog:NAME``, ``file:PATH`` or a path."""
    if spec.startswith("benchmark:"):
        return benchmark_design(int(spec.split(":", 1)[1]), seed=seed)
    if spec.startswith("catalog:"):
        blocks, _ = catalog_bibd(spec.split(":", 1)[1])
        return dualize(blocks)
    path = spec[5:] if spec.startswith("file:") else spec
    return load_design(Path(path).read_text())


def _observation_model(cfg: ExperimentConfig) -> ObservationModel:
    if cfg.obs == "default":
        return default_observation_model()
    return ObservationModel.from_text(Path(cfg.obs).read_text())


# ---------------------------------------------------------------------------
# trials


@dataclass
class TrialRecord:
    k: int
    trial: int
    positives: tuple[int, ...]
    observations: tuple[int, ...]
    converged: bool
    iterations: int
    kl_bp: float
    kl_corrected: float
    ref_stderr_max: float = float("nan")
    error: str | None = None

    def row(self) -> list:
        return [self.k, self.trial, " ".join(map(str, self.positives)),
                " ".join(map(str, self.observations)), int(self.converged), self.iterations,
                repr(self.kl_bp), repr(self.kl_corrected), repr(self.ref_stderr_max),
                self.error or ""]


def _reference_kind(cfg: ExperimentConfig, d: PoolingDesign) -> str:
    if cfg.reference == "auto":
        return "exact" if d.n <= ENUMERATION_CAP else "mcmc"
    if cfg.reference == "exact" and d.n > ENUMERATION_CAP:
        raise ValueError(f"exact reference needs n <= {ENUMERATION_CAP}, design has n={d.n}")
    return cfg.reference


def run_trial(cfg: ExperimentConfig, d: PoolingDesign, obs: ObservationModel,
              k: int, t: int) -> TrialRecord:
    """One trial; its random stream depends only on ``(cfg.seed, k, t)``."""
    rng = trial_rng(cfg.seed, k, t)
    prior = PriorModel.from_probability(cfg.prior, d.n)
    x = place_positives(d.n, k, rng)
    s = sample_observations(d, x, obs, rng)
    chain_seed = int(rng.integers(2**63))
    rec = TrialRecord(k, t, tuple(int(i) for i in np.flatnonzero(x)), tuple(int(v) for v in s),
                      False, 0, float("nan"), float("nan"))
    try:
        pots = potentials_from_observations(s, obs)
        _, qbp, state = bp_solve(d, prior.h, pots, cfg.bp_options())
        rec.converged, rec.iterations = state.converged, state.iterations
        corr = bias_correction(d, qbp.q, pots)
        if _reference_kind(cfg, d) == "exact":
            ref = exact_marginals(d, prior.h, pots)
        else:
            ref = gibbs_marginals(d, prior.h, pots, cfg.chain_options(chain_seed))
            rec.ref_stderr_max = float(np.max(ref.stderr))
        rec.kl_bp = kl_bernoulli_avg(ref, qbp)
        rec.kl_corrected = kl_bernoulli_avg(ref, corr.corrected)
    except (ValueError, FloatingPointError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        log.warning("trial k=%d t=%d aborted: %s", k, t, rec.error)
    return rec


def _trial_job(args):
    return run_trial(*args)


@dataclass
class SummaryRow:
    k: int
    trials: int
    converged: int
    included: int
    failed: int
    mean_kl_bp: float
    mean_kl_corrected: float

    @property
    def improved(self) -> bool:
        return bool(self.mean_kl_corrected < self.mean_kl_bp)

    def row(self) -> list:
        return [self.k, self.trials, self.converged, self.included, self.failed,
                repr(self.mean_kl_bp), repr(self.mean_kl_corrected), int(self.improved)]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    n: int
    m: int
    reference: str
    records: list[TrialRecord]
    summary: list[SummaryRow] = field(default_factory=list)

    def trial_csv(self) -> str:
        return _csv(TRIAL_HEADER, [r.row() for r in self.records])

    def summary_csv(self) -> str:
        return _csv(SUMMARY_HEADER, [r.row() for r in self.summary])


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _summarize(records: Sequence[TrialRecord], ks, include_nonconverged: bool) -> list[SummaryRow]:
    out = []
    for k in ks:
        rs = [r for r in records if r.k == k]
        ok = [r for r in rs if r.error is None and (include_nonconverged or r.converged)]
        a = np.array([r.kl_bp for r in ok])
        b = np.array([r.kl_corrected for r in ok])
        out.append(SummaryRow(
            k, len(rs), sum(r.converged for r in rs), len(ok), sum(r.error is not None for r in rs),
            float(a.mean()) if a.size else float("nan"),
            float(b.mean()) if b.size else float("nan")))
    return out


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every trial of ``cfg``; write CSVs and a text summary if ``cfg.output`` is set.

    Records are ordered by ``(k, trial)`` whatever the number of workers.
    """
    d = resolve_design(cfg.design, cfg.design_seed)
    obs = _observation_model(cfg)
    ref = _reference_kind(cfg, d)
    jobs = [(cfg, d, obs, k, t) for k in cfg.ks for t in range(cfg.trials)]
    log.info("experiment: n=%d m=%d reference=%s, %d trials", d.n, d.m, ref, len(jobs))
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            records = list(pool.map(_trial_job, jobs, chunksize=max(1, len(jobs) // (8 * cfg.workers))))
    else:
        records = [_trial_job(j) for j in jobs]
    result = ExperimentResult(cfg, d.n, d.m, ref, records,
                              _summarize(records, cfg.ks, cfg.include_nonconverged))
    if cfg.output:
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trials.csv").write_text(result.trial_csv())
        (out / "summary.csv").write_text(result.summary_csv())
        (out / "summary.txt").write_text(format_summary(result))
    return result


def format_summary(result: ExperimentResult) -> str:
    """Aligned text table: one row per ``k`` with both mean KL values."""
    head = f"n={result.n} m={result.m} reference={result.reference}\n"
    cols = ("k", "trials", "converged", "KL bp", "KL corrected", "")
    lines = [f"{cols[0]:>3} {cols[1]:>7} {cols[2]:>10} {cols[3]:>12} {cols[4]:>14}"]
    for r in result.summary:
        mark = "improved" if r.improved else ""
        lines.append(f"{r.k:>3} {r.trials:>7} {r.converged:>10} {r.mean_kl_bp:>12.4e} "
                     f"{r.mean_kl_corrected:>14.4e}  {mark}")
    return head + "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# timing


@dataclass
class TimingRow:
    n: int
    bp_seconds: float
    mcmc_seconds: float


def timing_smoke(sizes: Sequence[int], k: int = 2, seed: int = 0,
                 chain: ChainOptions | None = None) -> list[TimingRow]:
    """Wall time of one BP solve and one (short) Gibbs run per benchmark size."""
    chain = chain or ChainOptions(burnin=100, sweeps=1000)
    obs = default_observation_model()
    rows = []
    if sizes:
        # compile the sampler outside the timed region
        gibbs_marginals(PoolingDesign(1, ((0,),)), np.zeros(1), [(0.0, 0.0)],
                        ChainOptions(burnin=1, sweeps=1))
    for n in sizes:
        d = benchmark_design(n)
        rng = trial_rng(seed, n)
        prior = PriorModel.from_probability(0.1 if n <= ENUMERATION_CAP else 0.002, n)
        s = sample_observations(d, place_positives(n, k, rng), obs, rng)
        pots = potentials_from_observations(s, obs)
        t0 = time.perf_counter()
        bp_solve(d, prior.h, pots)
        t1 = time.perf_counter()
        gibbs_marginals(d, prior.h, pots, chain, rng)
        t2 = time.perf_counter()
        rows.append(TimingRow(n, t1 - t0, t2 - t1))
    return rows
