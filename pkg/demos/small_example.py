"""Exact, BP and bias-corrected marginals on the four-clone, three-pool design.

Run: python3 demos/small_example.py
"""

import numpy as np

from poolscreen import (
    PoolingDesign,
    PriorModel,
    bias_correction,
    bp_solve,
    default_observation_model,
    exact_marginals,
    potentials_from_observations,
)

# pools {1,2}, {1,3}, {2,3,4} in 1-based clone labels
design = PoolingDesign(4, ((0, 1), (0, 2), (1, 2, 3)))
prior = PriorModel.from_probability(0.1, design.n)
obs = default_observation_model()

np.set_printoptions(precision=3, suppress=True)
for s in [(3, 0, 0), (2, 2, 0), (0, 1, 3), (0, 0, 3)]:
    pots = potentials_from_observations(s, obs)
    exact = exact_marginals(design, prior.h, pots).q
    _, bp, state = bp_solve(design, prior.h, pots)
    corr = bias_correction(design, bp.q, pots)
    print(f"readouts {s}")
    print(f"  exact      {exact}")
    print(f"  BP         {bp.q}   ({state.iterations} sweeps)")
    # every pool pair shares at most one clone, so the correction is zero here
    print(f"  corrected  {corr.corrected}")
