#!/usr/bin/env python3
"""Recover weight rows (up to a signed scale) from hinge geometry alone.

First-layer rows come from the gradient jump across a hinge; deeper rows
come from mixed second differences solved against the already-recovered
prefix, giving partial rows that merge across hinge points.
"""
import numpy as np

import relupeel as rp
from relupeel.critical import find_critical_point_for_neuron
from relupeel.errors import RankDeficient
from relupeel.oracle import NetworkOracle
from relupeel.signatures import (
    cluster_and_merge,
    declared_neurons,
    recover_deep_partial_signature,
    recover_layer1_signature,
)

rng = np.random.default_rng(2)

print("== first layer: signed ratios from one hinge ==")
w1 = np.array([[2.0, -4.0, 6.0], [0.3, 0.9, -0.2]])
net = rp.Network([w1, np.array([[1.2, -0.7]])], [np.array([-0.5, 0.4]), np.array([0.1])])
oracle = NetworkOracle(net)
cp = find_critical_point_for_neuron(oracle, net.prefix(0), w1[0], -0.5, rng)
sig = recover_layer1_signature(oracle, cp)
print("planted row (2, -4, 6)  ->  recovered ratios", np.round(sig.coords, 9),
      f"  [{oracle.ledger.total} queries]")

print("\n== deeper layer: partial rows, then merging ==")
deep = rp.generate_unitary_balanced(rp.Architecture((4, 8, 8, 1)), seed=2)
oracle2 = NetworkOracle(deep)
prefix = deep.prefix(1)
candidates = []
for target in (3, 5):
    row, bias = deep.weights[1][target], deep.biases[1][target]
    got = 0
    while got < 6:
        cp = find_critical_point_for_neuron(oracle2, prefix, row, bias, rng)
        try:
            part = recover_deep_partial_signature(oracle2, prefix, cp, rng=rng)
        except RankDeficient:
            continue    # this hinge cannot pin its coordinates down; try another
        got += 1
        candidates.append((cp, part))
        if target == 3 and got <= 3:
            print(f"  partial row for neuron {target}: "
                  f"{int(part.support.sum())}/8 coordinates recovered")
clusters = cluster_and_merge(candidates)
print("clusters by repetition:", [len(c) for c in clusters],
      "(fully covered:", len(declared_neurons(clusters)), "of them)")
for c in clusters[:2]:
    merged = c.merged
    best = min(range(8), key=lambda j: np.nanstd(deep.weights[1][j][merged.support]
                                                 / merged.coords[merged.support]))
    ratio = deep.weights[1][best][merged.support] / merged.coords[merged.support]
    print(f"  merged row covers {int(merged.support.sum())}/8 coordinates, "
          f"matches planted neuron {best} "
          f"(scale spread {float(ratio.max() - ratio.min()):.2e})")
