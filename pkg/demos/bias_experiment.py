"""KL divergence of BP and bias-corrected BP against the exact posterior.

Runs a scaled-down version of the n=24 experiment (200 trials per number of
positives) and prints the summary table. The full-size run is part of the
acceptance suite.

Run: python3 demos/bias_experiment.py [trials]
"""

import sys

from poolscreen import ExperimentConfig, format_summary, run_experiment

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 200
cfg = ExperimentConfig(design="benchmark:24", prior=0.1, ks=(1, 2, 3, 4), trials=trials)
print(format_summary(run_experiment(cfg)))
