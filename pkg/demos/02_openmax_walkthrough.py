"""One sample through OpenMax, step by step.

Three known classes live in a 3-D logit space. We calibrate per-class mean
activation vectors and Weibull tails, then push a typical sample and an
overconfident outlier through recalibration.
"""

import numpy as np

from osreval import (
    calibrate_openmax,
    class_cdfs,
    predict_openmax,
    predict_softmax,
    recalibrate_activations,
)

rng = np.random.default_rng(0)
labels = np.repeat([1, 2, 3], 300)
logits = 6.0 * np.eye(3)[labels - 1] + rng.normal(size=(900, 3))

model = calibrate_openmax(logits, labels, tail_size=40, alpha=2, threshold=0.5)
np.set_printoptions(precision=3, suppress=True)
print("mean activation vectors:\n", model.mavs)

for name, v in (("typical class-1 sample", np.array([6.2, 0.3, -0.4])),
                ("far outlier", np.array([25.0, 1.0, 0.0]))):
    print(f"\n{name}: logits {v}")
    print("  softmax probabilities:", predict_softmax(v).probs[1:])
    cdf = class_cdfs(model, v[None, :])[0]
    print("  per-class Weibull CDF of the distance:", cdf)
    print("  recalibrated [unknown, 1, 2, 3]:", recalibrate_activations(model, v))
    pred = predict_openmax(model, v)
    print("  OpenMax probabilities:", pred.probs, "-> label", int(pred.predicted_label))

# Softmax is fooled by the outlier: it is more confident than on the typical
# sample. OpenMax moves most of its mass into the unknown slot.
