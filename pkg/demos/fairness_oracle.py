"""A metric the optimizer never sees in closed form.

The fairness score (mean accuracy minus the spread of per-group true
positive rates) is handed to the optimizer as an opaque callable. The
training labels of one protected group are noisy.

Run: python3 demos/fairness_oracle.py
"""

import numpy as np

from ewplug.baselines import argmax_baseline
from ewplug.benchmarks import fairness_binary
from ewplug.frank_wolfe import fw_eg
from ewplug.metrics import DatasetOracle

oracle = DatasetOracle("fairness")
bm = fairness_binary(seed=0)
print("basis:", bm.basis.describe())
print(f"argmax     {oracle.evaluate(bm.test, argmax_baseline(2).predict(bm.test)):.4f}")
res = fw_eg(oracle, bm.basis, bm.train, bm.val, T=15, known=False, rng=np.random.default_rng(0))
print(f"FW-EG      {oracle.evaluate(bm.test, res.classifier.proba(bm.test)):.4f}")
print(f"queries spent: {len(res.trace)} iterations")
