#!/usr/bin/env python3
"""Steal a whole network through a TCP oracle and verify the copy.

Serves a victim on loopback, runs the full layer-by-layer extraction against
the wire protocol (rows recovered from scratch, not injected), and compares
the reconstruction on fresh inputs.
"""
import numpy as np

import relupeel as rp
from relupeel.oracle import NetworkOracle
from relupeel.pipeline import ExtractionConfig, extract, verify_equivalence

victim = rp.generate_unitary_balanced(rp.Architecture((16, 8, 2)), seed=77)
server = rp.serve(victim, port=0)
server.serve_background()
print(f"victim {victim.arch} served on {server.endpoint}")

try:
    oracle = rp.connect(server.endpoint)
    cfg = ExtractionConfig(architecture=victim.arch.dims, seed=3, eval_samples=2000)
    hypothesis, report = extract(cfg, oracle=oracle)
    for layer in report.layers:
        print(f"layer {layer.layer}: method {layer.method}, queries {layer.queries}")
    print(f"output layer fit: {report.output_layer_queries} queries")
    print(f"total queries: {report.total_queries} "
          f"(server counted {server.ledger.total})")
    stats = verify_equivalence(NetworkOracle(victim), hypothesis, 2000,
                               np.random.default_rng(123))
    print(f"fresh-input deviation: max {stats['combined']['max']:.2e}, "
          f"mean {stats['combined']['mean']:.2e}")
finally:
    server.shutdown()
