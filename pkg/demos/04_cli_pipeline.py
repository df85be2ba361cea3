"""Driving the same pipeline through the command line, one artifact at a time.

Every step writes a file the next step reads, so any stage can be rerun or
inspected on its own. Files land in a temporary directory, or in the directory
given as the first argument.
"""

import json
import sys
import tempfile
from pathlib import Path

from osreval.cli import main
from osreval.protocol import kvasir_like_spec

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="osreval-"))
work.mkdir(parents=True, exist_ok=True)


def step(*argv):
    argv = [str(a) for a in argv]
    print("$ osreval", " ".join(argv))
    code = main(argv)
    if code:
        sys.exit(f"step failed with exit code {code}")


spec = work / "mixture.json"
spec.write_text(json.dumps(kvasir_like_spec(seed=0, per_class=300).to_dict()))

step("gen", "--spec", spec, "--seed", 0, "--split", "0.7,0.1,0.2", "--out", work / "features.csv")
step("train", "--features", work / "features.csv", "--seed", 0, "--weight-decay", 1e-4,
     "--out", work / "classifier.json", "--logits-out", work / "logits.csv")
step("tune", "--activations", work / "logits.csv", "--method", "softmax-threshold", "--budget", 10,
     "--seed", 0, "--out", work / "tune_threshold")
step("tune", "--activations", work / "logits.csv", "--method", "openmax", "--budget", 4,
     "--seed", 0, "--out", work / "tune_openmax")
step("evaluate", "--activations", work / "logits.csv", "--method", "softmax", "--label", "Linear",
     "--out", work / "softmax.json")
step("evaluate", "--activations", work / "logits.csv", "--model", work / "tune_threshold" / "model.json",
     "--label", "Linear", "--out", work / "threshold.json")
step("evaluate", "--activations", work / "logits.csv", "--model", work / "tune_openmax" / "model.json",
     "--label", "Linear", "--out", work / "openmax.json")
step("report", work / "softmax.json", work / "threshold.json", work / "openmax.json", "--out", work / "table")
print(f"\nartifacts in {work}")
