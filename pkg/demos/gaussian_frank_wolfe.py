"""Optimize G-mean under cluster-dependent label noise with Frank-Wolfe.

The training labels of one cluster are partly flipped. Plain argmax of a
model fitted on them is the natural baseline; the weight-eliciting
Frank-Wolfe loop only touches the validation metric through queries.

Run: python3 demos/gaussian_frank_wolfe.py
"""

import numpy as np

from ewplug.baselines import argmax_baseline, coordinate_search_plugin
from ewplug.benchmarks import cdln_gaussian3
from ewplug.frank_wolfe import fw_eg
from ewplug.metrics import GMean

metric = GMean()
bm = cdln_gaussian3(seed=0, n_train=10_000, n_val=1_000, n_test=20_000)
print("basis:", bm.basis.describe())


print(f"argmax on noisy model     {metric.evaluate(bm.test, argmax_baseline(3).predict(bm.test)):.4f}")
cs = coordinate_search_plugin(bm.val, metric, spacing=0.01)
print(f"coordinate search         {metric.evaluate(bm.test, cs.rule.predict(bm.test)):.4f}  ({cs.queries} queries)")


def show(state):
    rec = state.trace[-1]
    print(f"  t={rec.t:2d}  step {rec.step:.3f}  psi {rec.psi:.4f}  cond {rec.condition_number:.1f}")


for known in (True, False):
    res = fw_eg(metric, bm.basis, bm.train, bm.val, T=10, known=known, rng=np.random.default_rng(0), callback=show)
    label = "known gradient " if known else "black-box metric"
    print(f"FW-EG, {label}  {metric.evaluate(bm.test, res.classifier.proba(bm.test)):.4f}")
