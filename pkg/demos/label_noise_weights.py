"""Recover correction weights from metric queries alone.

Two discrete problems: symmetric label noise on the training labels, and a
domain shift between training and deployment. In both the learner only
sees the noisy training sample and a small clean validation sample, and
asks the validation metric how well a handful of probe classifiers do.

Run: python3 demos/label_noise_weights.py
"""

import numpy as np

from ewplug.benchmarks import ILN_T, ds_discrete, iln_discrete
from ewplug.elicitation import elicit
from ewplug.metrics import accuracy
from ewplug.plugin import pi_ew

np.set_printoptions(precision=4, suppress=True)


def label_noise():
    print("== label noise, full weight matrix ==")
    print("noise transition T:\n", ILN_T)
    print("inverse (what a loss correction would apply):\n", np.linalg.inv(ILN_T))
    for seed in (0, 1, 2):
        bm = iln_discrete(seed=seed)
        res = elicit(accuracy(2), bm.basis, bm.train, bm.val, mode="full", rng=np.random.default_rng(seed))
        print(f"seed {seed}: elicited {res.alpha.reshape(2, 2).round(4).tolist()}  cond {res.condition_number:.1f}")


def domain_shift():
    print("\n== domain shift, one weight per (point, class) ==")
    bm = ds_discrete(exact=True)
    res = elicit(accuracy(2), bm.basis, bm.train, bm.val, rank="auto")
    print("elicited alpha:", res.alpha, " residual", f"{res.residual:.1e}")
    # the weights are only pinned down up to a per-point rescaling, but the
    # induced classifier is the clean Bayes rule regardless
    rule = pi_ew(accuracy(2), bm.basis, bm.train, bm.val, rank="auto")
    acc = accuracy(2).evaluate(bm.test, rule.predict(bm.test))
    print(f"test accuracy of the plug-in rule: {acc:.4f} (clean Bayes accuracy 0.62)")


if __name__ == "__main__":
    label_noise()
    domain_shift()
