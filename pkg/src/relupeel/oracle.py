"""Black-box access to a network, with per-phase query accounting.

Attack code only ever sees an Oracle: query in, output vector out. The
ledger tags every query with the currently active phase label so the cost
of each stage of the attack can be audited exactly.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

PHASE_DEFAULT = "misc"
PHASE_CRITICAL = "critical-points"
PHASE_SIGNATURES = "signatures"
PHASE_SOE = "soe"
PHASE_FREEZE = "freeze"
PHASE_WIGGLE = "wiggle"
PHASE_LAST_LAYER = "last-layer"
PHASE_LINEARITY = "linearity-overhead"
PHASE_OUTPUT_LAYER = "output-layer"
PHASE_VERIFY = "verify"


class QueryLedger:
    """Thread-safe counters: one total plus one bucket per phase label."""

    def __init__(self):
        self._lock = threading.Lock()
        self._local = threading.local()
        self.per_phase = {}
        self.total = 0

    def _current(self):
        stack = getattr(self._local, "stack", None)
        return stack[-1] if stack else PHASE_DEFAULT

    @contextmanager
    def phase(self, label):
        stack = getattr(self._local, "stack", None)
        if stack is None:
            stack = self._local.stack = []
        stack.append(str(label))
        try:
            yield self
        finally:
            stack.pop()

    def record(self, n=1):
        label = self._current()
        with self._lock:
            self.total += n
            self.per_phase[label] = self.per_phase.get(label, 0) + n

    def count(self, label):
        with self._lock:
            return self.per_phase.get(label, 0)

    def snapshot(self):
        with self._lock:
            return dict(self.per_phase)

    def __repr__(self):
        return f"QueryLedger(total={self.total}, per_phase={self.snapshot()})"


class Oracle:
    """Deterministic query interface: x in R^{input_dim} -> f(x) in R^{output_dim}."""

    input_dim: int
    output_dim: int
    ledger: QueryLedger

    def query(self, x) -> np.ndarray:
        raise NotImplementedError

    def query_batch(self, xs) -> np.ndarray:
        return np.stack([self.query(x) for x in np.atleast_2d(xs)])

    def phase(self, label):
        return self.ledger.phase(label)


class NetworkOracle(Oracle):
    """In-process oracle around a Network. Shares the Network across threads."""

    def __init__(self, net, ledger=None):
        self._net = net
        self.input_dim = net.input_dim
        self.output_dim = net.output_dim
        self.ledger = ledger if ledger is not None else QueryLedger()

    def query(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise ValueError(f"query shape {x.shape}, expected ({self.input_dim},)")
        self.ledger.record(1)
        return self._net.evaluate(x)

    def query_batch(self, xs):
        # row-by-row on purpose: gemm and gemv round differently in the last
        # bit, and the oracle must answer a vector the same way every time
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        self.ledger.record(xs.shape[0])
        return np.stack([self._net.evaluate(x) for x in xs])


def scalar_query(oracle: Oracle, x, out_index=0):
    return float(oracle.query(x)[out_index])
