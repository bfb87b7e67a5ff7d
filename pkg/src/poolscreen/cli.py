"""Command line interface: ``python -m poolscreen <command> ...``.

Commands::

    design verify    --blocks F (--params v,r,b,k,lam | --catalog NAME)
    design dualize   --blocks F
    design replicate --blocks F --t T --seed S
    design profile   --design F
    simulate         --design F --prior p [--obs F] --k K --seed S
    infer exact|bp|mcmc --design F --prior p [--obs F] --s "3 0 0"
    bias correct     --design F --state F
    bias bound       --design F --C c --delta d
    experiment run   --config F

``--design`` accepts a design file or ``benchmark:N`` / ``catalog:NAME``.
Marginals are written as CSV to stdout (or ``--out``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .bias import bias_correction, design_bias_bound
from .bp import BpOptions, BpState, bp_solve
from .design import (
    BibdParams,
    DesignError,
    catalog_bibd,
    dualize,
    format_design,
    load_blocks,
    profile,
    replicate_randomized,
    verify_bibd,
)
from .exact import exact_marginals
from .harness import ExperimentConfig, format_summary, resolve_design, run_experiment
from .mcmc import ChainOptions, gibbs_marginals
from .model import (
    ObservationModel,
    PoolPotential,
    PriorModel,
    default_observation_model,
    place_positives,
    potentials_from_observations,
    sample_observations,
    trial_rng,
)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _obs(path: str | None) -> ObservationModel:
    return default_observation_model() if path in (None, "default") else \
        ObservationModel.from_text(Path(path).read_text())


def _marginal_csv(q, stderr=None, comments=()) -> str:
    lines = [f"# {c}" for c in comments]
    lines.append("clone,q" + (",stderr" if stderr is not None else ""))
    for i, v in enumerate(q):
        lines.append(f"{i},{float(v)!r}" + (f",{float(stderr[i])!r}" if stderr is not None else ""))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# design


def cmd_design(a) -> int:
    if a.action == "verify":
        blocks = load_blocks(Path(a.blocks).read_text()) if a.blocks else None
        if a.catalog:
            cat_blocks, params = catalog_bibd(a.catalog)
            blocks = blocks or cat_blocks
        elif a.params:
            params = BibdParams(*_ints(a.params))
        else:
            raise DesignError("verify needs --params or --catalog")
        if blocks is None:
            raise DesignError("verify needs --blocks or --catalog")
        report = verify_bibd(blocks, params)
        print(report.summary())
        return 0 if report.passed else 1
    if a.action == "dualize":
        blocks = load_blocks(Path(a.blocks).read_text())
        _emit(format_design(dualize(blocks)), a.out)
        return 0
    if a.action == "replicate":
        blocks = load_blocks(Path(a.blocks).read_text())
        _emit(format_design(replicate_randomized(blocks, a.t, seed=a.seed)), a.out)
        return 0
    # profile
    d = resolve_design(a.design, a.design_seed)
    p = profile(d)
    sizes, counts = np.unique(p.pool_sizes, return_counts=True)
    ov, ovc = np.unique(p.overlaps, return_counts=True)
    deg, degc = np.unique(p.degrees, return_counts=True)
    fmt = lambda v, c: " ".join(f"{int(x)}:{int(y)}" for x, y in zip(v, c))
    print(f"n={d.n} m={d.m} lambda_max={p.lambda_max}")
    print(f"pool sizes (size:count) {fmt(sizes, counts)}")
    print(f"overlaps (value:pairs) {fmt(ov, ovc)}")
    print(f"clone degrees (degree:clones) {fmt(deg, degc)}")
    return 0


# ---------------------------------------------------------------------------
# simulate / infer


def cmd_simulate(a) -> int:
    d = resolve_design(a.design, a.design_seed)
    obs = _obs(a.obs)
    rng = trial_rng(a.seed)
    if a.k is not None:
        x = place_positives(d.n, a.k, rng)
    else:
        x = (rng.random(d.n) < a.prior).astype(np.int8)
    s = sample_observations(d, x, obs, rng)
    _emit("x " + " ".join(map(str, x)) + "\ns " + " ".join(map(str, s)) + "\n", a.out)
    return 0


def _problem(a):
    d = resolve_design(a.design, a.design_seed)
    s = _ints(a.s)
    if len(s) != d.m:
        raise ValueError(f"{len(s)} observations for {d.m} pools")
    prior = PriorModel.from_probability(a.prior, d.n)
    return d, prior, potentials_from_observations(s, _obs(a.obs))


def cmd_infer(a) -> int:
    d, prior, pots = _problem(a)
    if a.engine == "exact":
        mv = exact_marginals(d, prior.h, pots)
        _emit(_marginal_csv(mv.q), a.out)
    elif a.engine == "bp":
        theta, mv, st = bp_solve(d, prior.h, pots, BpOptions(a.damping, a.tol, a.max_iter))
        meta = [f"converged={st.converged} iterations={st.iterations} residual={st.residual!r}"]
        _emit(_marginal_csv(mv.q, comments=meta), a.out)
        if a.state_out:
            _write_state(a.state_out, prior.h, pots, st)
    else:
        mv = gibbs_marginals(d, prior.h, pots, ChainOptions(a.burnin, a.sweeps, a.thin, a.seed))
        _emit(_marginal_csv(mv.q, mv.stderr), a.out)
    return 0


def _write_state(path, h, pots, st: BpState) -> None:
    """BP state file: JSON with the fields, pool potentials and fixed point."""
    doc = {
        "h": [float(v) for v in h],
        "potentials": [[float(p.c0), float(p.c1)] for p in pots],
        "theta": [float(v) for v in st.theta],
        "converged": bool(st.converged),
        "iterations": int(st.iterations),
        "residual": float(st.residual),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _read_state(path):
    doc = json.loads(Path(path).read_text())
    try:
        h = np.asarray(doc["h"], dtype=float)
        theta = np.asarray(doc["theta"], dtype=float)
        pots = [PoolPotential(float(c0), float(c1)) for c0, c1 in doc["potentials"]]
        converged = bool(doc["converged"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed state file {path}: {exc}") from None
    return h, theta, pots, converged


# ---------------------------------------------------------------------------
# bias / experiment


def cmd_bias(a) -> int:
    d = resolve_design(a.design, a.design_seed)
    if a.action == "bound":
        print(repr(design_bias_bound(d, a.C, a.delta)))
        return 0
    h, theta, pots, converged = _read_state(a.state)
    if h.shape != (d.n,) or theta.shape != (d.n,) or len(pots) != d.m:
        raise ValueError("state file does not match the design")
    if not converged:
        raise ValueError("BP state did not converge; the correction assumes a fixed point")
    xbar = expit(h + theta)
    rep = bias_correction(d, xbar, pots)
    lines = ["clone,bp,delta,corrected_raw,corrected_clamped"]
    for i in range(d.n):
        vals = (rep.bp[i], rep.delta[i], rep.corrected_raw[i], rep.corrected[i])
        lines.append(f"{i}," + ",".join(repr(float(v)) for v in vals))
    _emit("\n".join(lines) + "\n", a.out)
    return 0


def cmd_experiment(a) -> int:
    cfg = ExperimentConfig.load(a.config)
    if a.workers:
        cfg = replace(cfg, workers=a.workers)
    result = run_experiment(cfg)
    sys.stdout.write(format_summary(result))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poolscreen", description="Pooled-screen design and inference.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def design_arg(q, required=True):
        q.add_argument("--design", required=required,
                       help="design file, benchmark:N or catalog:NAME")
        q.add_argument("--design-seed", type=int, default=0,
                       help="randomization seed for benchmark designs")

    def out_arg(q):
        q.add_argument("--out", help="write to this file instead of stdout")

    dz = sub.add_parser("design", help="construct and check designs")
    dsub = dz.add_subparsers(dest="action", required=True)
    q = dsub.add_parser("verify", help="check a block list against BIBD parameters")
    q.add_argument("--blocks")
    q.add_argument("--params", help="v,r,b,k,lambda")
    q.add_argument("--catalog", help="catalog design name, e.g. 9-4-12-3-1")
    q = dsub.add_parser("dualize", help="pools from a block list (points become pools)")
    q.add_argument("--blocks", required=True)
    out_arg(q)
    q = dsub.add_parser("replicate", help="randomized t-fold replication, dualized")
    q.add_argument("--blocks", required=True)
    q.add_argument("--t", type=int, required=True)
    q.add_argument("--seed", type=int, default=0)
    out_arg(q)
    q = dsub.add_parser("profile", help="pool sizes, overlaps and clone degrees")
    design_arg(q)

    q = sub.add_parser("simulate", help="draw labels and pool readouts")
    design_arg(q)
    q.add_argument("--prior", type=float, default=0.1)
    q.add_argument("--obs")
    q.add_argument("--k", type=int, help="exact number of positives (default: draw from prior)")
    q.add_argument("--seed", type=int, default=0)
    out_arg(q)

    q = sub.add_parser("infer", help="posterior marginals")
    q.add_argument("engine", choices=("exact", "bp", "mcmc"))
    design_arg(q)
    q.add_argument("--prior", type=float, required=True)
    q.add_argument("--obs")
    q.add_argument("--s", required=True, help='pool readouts, e.g. "3 0 0"')
    q.add_argument("--damping", type=float, default=0.5)
    q.add_argument("--tol", type=float, default=1e-8)
    q.add_argument("--max-iter", type=int, default=1000)
    q.add_argument("--state-out", help="bp: write the fixed point for `bias correct`")
    q.add_argument("--burnin", type=int, default=1000)
    q.add_argument("--sweeps", type=int, default=10000)
    q.add_argument("--thin", type=int, default=1)
    q.add_argument("--seed", type=int, default=0)
    out_arg(q)

    bz = sub.add_parser("bias", help="bias correction and bounds")
    bsub = bz.add_subparsers(dest="action", required=True)
    q = bsub.add_parser("correct", help="correct a converged BP state")
    design_arg(q)
    q.add_argument("--state", required=True)
    out_arg(q)
    q = bsub.add_parser("bound", help="design-level bound on the bias")
    design_arg(q)
    q.add_argument("--C", type=float, required=True)
    q.add_argument("--delta", type=float, required=True)

    ez = sub.add_parser("experiment", help="simulation experiments")
    esub = ez.add_subparsers(dest="action", required=True)
    q = esub.add_parser("run", help="run a configured experiment")
    q.add_argument("--config", required=True)
    q.add_argument("--workers", type=int)
    return p


_COMMANDS = {"design": cmd_design, "simulate": cmd_simulate, "infer": cmd_infer,
             "bias": cmd_bias, "experiment": cmd_experiment}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (DesignError, ValueError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
