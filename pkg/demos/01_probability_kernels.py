#!/usr/bin/env python3
# Walk through the numeric kernels: temperature softmax, Jensen-Shannon
# divergence, and the epsilon-floored log ratio used by the gain scan.

import numpy as np

from tcd import jsd, log_safe_ratio, softmax

logits = np.array([3.1, -0.4, 0.7])

# Temperature reshapes the distribution but never moves the argmax.
for tau in (0.25, 1.0, 4.0):
    p = softmax(logits, tau)
    bar = " ".join(f"{v:.4f}" for v in p)
    print(f"tau={tau:<5} -> [{bar}]  argmax={int(np.argmax(p))}")

# Shift invariance: adding a constant to every logit changes nothing.
print("\nshift by +100:", np.max(np.abs(softmax(logits + 100.0) - softmax(logits))))

# JSD is symmetric, zero on identical inputs, and capped at ln 2.
uniform = np.ones(4) / 4
peaked = np.array([0.97, 0.01, 0.01, 0.01])
print("\njsd(uniform, uniform) =", jsd(uniform, uniform))
print("jsd(uniform, peaked)  =", jsd(uniform, peaked))
print("jsd disjoint pair     =", jsd([1, 0], [0, 1]), "(ln 2 =", float(np.log(2)), ")")

# The log-ratio gain stays finite even when a probability is exactly zero.
print("\nlog_safe_ratio(0.2, 0.1) =", log_safe_ratio(0.2, 0.1))
print("log_safe_ratio(0.0, 0.0) =", log_safe_ratio(0.0, 0.0))
