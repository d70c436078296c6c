"""Online confidence intervals for x1* + lam1* on eq_quadratic.

Each run keeps running gradient moments, which give a plug-in covariance
estimate at the last iterate. The interval built from it should contain the
true value about 95% of the time.
"""

import numpy as np

from aistosqp.harness import ExperimentConfig, cmd_coverage, cmd_normality

base = ExperimentConfig(problem="eq_quadratic", sigma2=1e-2, c1=2.0, c2=0.7, c3=2.0,
                        sketch="exact", iters=20_000)

cov = cmd_coverage(base.replace(runs=200)).summary
print(f"target w^T (x*, lam*) = {cov['target']:.4f}")
print(f"coverage over {cov['evaluated']} runs: {cov['coverage']:.3f} (nominal {cov['level']})")
print(f"mean interval width: {cov['mean_width']:.4f}")

# Standardized final errors should look standard normal.
norm = cmd_normality(base.replace(runs=200, mode="mc"))
samples = np.array([v for _, v in norm.rows if v is not None])
print(f"standardized error: mean {samples.mean():+.3f}, sd {samples.std():.3f}, "
      f"KS distance {norm.summary['ks_stat']:.3f}")

# Bin the samples as a text histogram
counts, edges = np.histogram(samples, bins=np.linspace(-3, 3, 13))
for c, lo in zip(counts, edges):
    print(f"{lo:+.1f} {'#' * c}")
