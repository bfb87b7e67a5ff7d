"""Build the benchmark pooling designs and inspect their overlap structure.

Run: python3 demos/designs.py
"""

import numpy as np

from poolscreen import benchmark_design, catalog_bibd, check_near_optimal, profile, verify_bibd

for name in ["7-3-7-3-1", "9-4-12-3-1", "13-4-13-4-1"]:
    blocks, params = catalog_bibd(name)
    print(verify_bibd(blocks, params).summary())

for n in (24, 1314, 1552):
    d = benchmark_design(n, seed=0)
    p = profile(d)
    near = check_near_optimal(d)
    print(f"n={d.n:5d} m={d.m:3d} pool size {sorted(set(p.pool_sizes.tolist()))} "
          f"overlap {sorted(set(p.overlaps.tolist()))} degrees "
          f"{np.bincount(p.degrees).nonzero()[0].tolist()} near-optimal={near.ok}")
