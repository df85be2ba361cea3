"""Fitting an extreme-value model to the far end of a distance sample.

OpenMax asks one question per class: how unusual is this distance to the class
centre, compared with the largest distances seen in training? We answer it with
a Weibull model fitted to the upper tail.
"""

import numpy as np

from osreval import WeibullModel, fit_weibull_tail, sample_weibull, weibull_mle

# Distances of correctly classified samples to their class mean behave roughly
# like the norm of a Gaussian vector. Draw some.
rng = np.random.default_rng(0)
distances = np.linalg.norm(rng.normal(size=(2000, 8)), axis=1)
print(f"{len(distances)} distances, median {np.median(distances):.3f}, max {distances.max():.3f}")

# Only the largest eta distances matter. The fit shifts them so the smallest
# tail point sits just above zero, then runs a two-parameter MLE.
for tail in (20, 100, 400):
    m = fit_weibull_tail(distances, tail)
    probe = [3.0, 3.5, 4.0, 5.0]
    cdf = ", ".join(f"{d}: {m.cdf(d):.3f}" for d in probe)
    print(f"tail {tail:3d}: tau={m.tau:.3f} lambda={m.lam:.3f} kappa={m.kappa:.3f} | CDF {cdf}")

# The bare MLE recovers known parameters from a clean sample.
truth = WeibullModel(tau=0.0, lam=3.0, kappa=5.0, tail_size=2)
lam, kappa = weibull_mle(sample_weibull(truth, 10_000, seed=1))
print(f"MLE on 10k draws from lambda=3, kappa=5: lambda={lam:.4f} kappa={kappa:.4f}")
