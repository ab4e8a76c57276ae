#!/usr/bin/env python3
"""The four ways to pin down each neuron's sign, on one small victim.

The hypothesis rows are the true rows scrambled to an unknown signed scale,
exactly what row recovery leaves behind.
"""
import numpy as np

import relupeel as rp
from relupeel.oracle import NetworkOracle, PHASE_LAST_LAYER, PHASE_SOE, PHASE_WIGGLE
from relupeel.pipeline import hypothesis_frame_rows
from relupeel.signs import (
    recover_signs_freeze,
    recover_signs_last_layer,
    recover_signs_soe,
    recover_signs_wiggle,
)


def frame(net, layer):
    frames = hypothesis_frame_rows(net)
    rows, biases, signs = frames[layer - 1]
    ws, bs = [], []
    for r_, b_, s_ in frames[:layer - 1]:
        s_ = np.asarray(s_, dtype=float)
        ws.append(np.asarray(r_) * s_[:, None])
        bs.append(np.asarray(b_) * s_)
    return rp.ForwardPrefix(ws, bs, net.input_dim), rows, biases, np.asarray(signs)


rng = np.random.default_rng(4)
net = rp.generate_unitary_balanced(rp.Architecture((24, 10, 16, 8)), seed=12)
prefix, rows, biases, truth = frame(net, 1)

print("== solve-everything-at-once (needs reachable rank >= width) ==")
oracle = NetworkOracle(net)
decisions = recover_signs_soe(oracle, prefix, rows, biases, rng)
print("correct:", sum(d.sign == truth[d.neuron] for d in decisions), "/ 10,",
      oracle.ledger.count(PHASE_SOE), "queries in phase (width + 1 = 11)")

print("\n== freeze one neuron at a time ==")
oracle = NetworkOracle(net)
decisions = recover_signs_freeze(oracle, prefix, rows, biases, rng)
print("correct:", sum(d.sign == truth[d.neuron] for d in decisions), "/ 10")

print("\n== wiggle voting across hinge points ==")
oracle = NetworkOracle(net)
decisions, alpha0 = recover_signs_wiggle(oracle, prefix, rows, biases,
                                         samples=60, seed=9)
print("correct:", sum(d.sign == truth[d.neuron] for d in decisions), "/ 10,",
      f"confidence cutoff {alpha0:.2f},",
      oracle.ledger.count(PHASE_WIGGLE), "queries in phase")
for d in decisions[:4]:
    print(f"   neuron {d.neuron}: -:{d.s_minus} +:{d.s_plus} alpha {d.alpha:.2f}")

print("\n== final hidden layer via its fixed output map ==")
last = rp.generate_unitary_balanced(rp.Architecture((25, 10, 1)), seed=21)
prefix_l, rows_l, biases_l, truth_l = frame(last, 1)
oracle = NetworkOracle(last)
decisions, out_bias, _ = recover_signs_last_layer(oracle, prefix_l, rows_l, biases_l,
                                                  np.random.default_rng(2))
print("correct:", sum(d.sign == truth_l[d.neuron] for d in decisions), "/ 10,",
      oracle.ledger.count(PHASE_LAST_LAYER), "queries in phase (4w + 1 = 41),",
      f"output bias error {abs(out_bias[0] - last.biases[-1][0]):.1e}")
