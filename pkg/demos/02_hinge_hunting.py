#!/usr/bin/env python3
"""Find the inputs where single neurons flip, using only black-box queries.

Shows the segment searcher isolating every slope break between two random
inputs, the trap case two parallel outer pieces set for naive interpolation,
and hinge hunting aimed at one specific neuron.
"""
import numpy as np

import relupeel as rp
from relupeel.critical import ProbeSegment, find_critical_point_for_neuron, find_critical_points
from relupeel.oracle import NetworkOracle

rng = np.random.default_rng(1)

net = rp.generate_unitary_balanced(rp.Architecture((8, 10, 10, 1)), seed=5)
oracle = NetworkOracle(net)

print("== all slope breaks along a random segment ==")
seg = ProbeSegment(rng.normal(size=8), rng.normal(size=8))
res = find_critical_points(oracle, seg)
print(f"found {len(res.points)} hinge crossings with {oracle.ledger.total} queries:")
for cp in res.points:
    print(f"  lam = {cp.lam:.9f}   slopes {cp.left_slope:+.4f} -> {cp.right_slope:+.4f}")

print("\n== the parallel-pieces trap ==")
# f(t) = relu(t - 0.35) - relu(t - 0.65): outer slopes equal, midpoint off chord
trap = rp.Network([np.array([[1.0], [1.0]]), np.array([[1.0, -1.0]])],
                  [np.array([-0.35, -0.65]), np.array([0.0])])
o2 = NetworkOracle(trap)
res2 = find_critical_points(o2, ProbeSegment(np.array([0.0]), np.array([1.0])))
print("reported breaks:", [round(cp.lam, 6) for cp in res2.points], "(no fake midpoint)")

print("\n== hinge for one chosen neuron ==")
target = rp.NeuronId(2, 3)
prefix = net.prefix(1)
cp = find_critical_point_for_neuron(oracle, prefix, net.weights[1][3], net.biases[1][3], rng)
print("pre-activation of the target at the found point:",
      f"{net.neuron_value(target, cp.x_star):.2e}")
