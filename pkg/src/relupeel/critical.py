"""Locating inputs where exactly one neuron's pre-ReLU value crosses zero.

The scalar restriction of the network to a probe segment is piecewise
linear; its slope breaks exactly at neuron hinges. The searcher fits lines
from both ends of an interval, accepts their intersection only when the
function value there matches the prediction and the one-sided slopes
genuinely differ, and otherwise bisects. All float comparisons are
relative; exact arithmetic would make them equalities.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CriticalAtAnchor, NeuronAlwaysOff
from .network import ForwardPrefix
from .oracle import Oracle

TAU_MATCH = 1e-6          # relative: predicted vs queried value at a candidate
TAU_SLOPE = 1e-7          # relative: two slopes count as distinct above this
DEFAULT_EPS_REL = 1e-6    # slope-probe step as a fraction of interval length
DEFAULT_BUDGET = 40       # max recursion depth per probe segment

_EPS_F = 2.22e-16


@dataclass
class ProbeSegment:
    """The line x1 + lam * (x2 - x1) for lam in [0, 1]."""
    x1: np.ndarray
    x2: np.ndarray

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, dtype=np.float64)
        self.x2 = np.asarray(self.x2, dtype=np.float64)
        if self.x1.shape != self.x2.shape or not np.any(self.x1 != self.x2):
            raise ValueError("segment endpoints must differ")

    def point(self, lam):
        return self.x1 + lam * (self.x2 - self.x1)

    @property
    def direction(self):
        return self.x2 - self.x1


@dataclass
class CriticalPoint:
    """A slope break of the probed scalar function, mapped back to input space."""
    x_star: np.ndarray
    lam: float | None = None
    neuron: object = None           # NeuronId once attributed, else None
    left_slope: float = 0.0
    right_slope: float = 0.0
    epsilon_used: float = 0.0
    direction: np.ndarray | None = None   # unit vector transversal to the hinge


@dataclass
class LinearityCertificate:
    segment: ProbeSegment
    linear: bool
    witnesses: tuple = ()

    @property
    def verdict(self):
        return "Linear" if self.linear else "NotLinear"


@dataclass
class CriticalSearchResult:
    points: list = field(default_factory=list)
    exhausted: bool = False
    linear: bool = False

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)


class _SegmentProbe:
    """Memoized scalar view of the oracle along one segment."""

    def __init__(self, oracle, seg, out_index=0):
        self.oracle = oracle
        self.seg = seg
        self.out_index = out_index
        self.cache = {}
        self.fscale = 1e-300

    def __call__(self, lam):
        lam = float(lam)
        y = self.cache.get(lam)
        if y is None:
            y = float(self.oracle.query(self.seg.point(lam))[self.out_index])
            self.cache[lam] = y
            a = abs(y)
            if a > self.fscale:
                self.fscale = a
        return y

    def slope(self, a, b):
        return (self(b) - self(a)) / (b - a)


def _slopes_close(m1, m2, h, fscale):
    scale = max(abs(m1), abs(m2))
    noise = 256.0 * _EPS_F * fscale / h
    return abs(m1 - m2) <= max(TAU_SLOPE * scale, noise)


def _values_close(v1, v2, fscale):
    return abs(v1 - v2) <= TAU_MATCH * max(fscale, abs(v1), abs(v2))


def find_critical_points(oracle: Oracle, seg: ProbeSegment, eps=DEFAULT_EPS_REL,
                         budget=DEFAULT_BUDGET, out_index=0) -> CriticalSearchResult:
    """All slope breaks of output `out_index` along `seg`, to ~1e-9 in lam.

    `eps` is the slope-probe step relative to the current interval. Intervals
    that still look multi-break at recursion depth `budget` are abandoned and
    the result is flagged exhausted.
    """
    probe = _SegmentProbe(oracle, seg, out_index)
    result = CriticalSearchResult()
    _search(probe, 0.0, 1.0, eps, budget, result)
    result.points.sort(key=lambda c: c.lam)
    deduped = []
    for cp in result.points:
        if deduped and abs(cp.lam - deduped[-1].lam) <= 4.0 * eps:
            continue
        deduped.append(cp)
    result.points = deduped
    result.linear = not result.points and not result.exhausted
    return result


def _search(probe, a, b, eps_rel, depth_left, result):
    h = eps_rel * (b - a)
    ya, yb, yo = probe(a), probe(b), probe((a + b) / 2.0)
    mid = (a + b) / 2.0
    m_a = probe.slope(a, a + h)
    m_b = probe.slope(b - h, b)
    fs = probe.fscale
    mid_on_chord = _values_close(yo, (ya + yb) / 2.0, fs)
    if mid_on_chord and _slopes_close(m_a, m_b, h, fs):
        m_ao = probe.slope(mid - h, mid)
        m_bo = probe.slope(mid, mid + h)
        if _slopes_close(m_ao, m_a, h, fs) and _slopes_close(m_bo, m_b, h, fs):
            return  # affine on [a, b]
        # same end slopes but a different middle piece: the two end lines are
        # parallel, no single intersection exists; split below
    elif not _slopes_close(m_a, m_b, h, fs):
        lam_c = a + (yb - ya - m_b * (b - a)) / (m_a - m_b)
        if a <= lam_c <= b:
            y_pred = ya + m_a * (lam_c - a)
            y_c = probe(lam_c)
            if _values_close(y_c, y_pred, fs):
                cp = _judge_candidate(probe, a, b, h, lam_c, m_a, m_b)
                if cp is not None:
                    result.points.append(cp)
                    return
    if depth_left <= 0:
        result.exhausted = True
        return
    _search(probe, a, mid, eps_rel, depth_left - 1, result)
    _search(probe, mid, b, eps_rel, depth_left - 1, result)


def _judge_candidate(probe, a, b, h, lam_c, m_a, m_b):
    """Accept lam_c as the interval's single break, refined, or return None.

    The two-line intersection carries an uncertainty set by slope noise over
    the probe step; side slopes are therefore re-measured at a standoff that
    clears the uncertainty while staying inside the neighboring pieces. Each
    side must be collinear on its own, its slope must match the slope at the
    matching interval end (otherwise another break hides in between), the two
    sides must differ, and the function value at the refined intersection
    must sit on both lines.
    """
    fs = probe.fscale
    dm = abs(m_a - m_b)
    lam_unc = _EPS_F * fs * (b - a) / (h * max(dm, 1e-300))
    s = max(4.0 * h, 64.0 * lam_unc)
    if s > (b - a) / 4.0:
        return None
    y_l3, y_l2, y_l1 = probe(lam_c - s), probe(lam_c - 2 * s / 3), probe(lam_c - s / 3)
    y_r1, y_r2, y_r3 = probe(lam_c + s / 3), probe(lam_c + 2 * s / 3), probe(lam_c + s)
    if not (_values_close(y_l2, (y_l3 + y_l1) / 2.0, fs)
            and _values_close(y_r2, (y_r1 + y_r3) / 2.0, fs)):
        return None
    m_left = (y_l1 - y_l3) / (2 * s / 3)
    m_right = (y_r3 - y_r1) / (2 * s / 3)
    if _slopes_close(m_left, m_right, s / 3, fs):
        return None
    if not (_slopes_close(m_left, m_a, h, fs) and _slopes_close(m_right, m_b, h, fs)):
        return None
    lam_star = ((y_r1 - m_right * (lam_c + s / 3))
                - (y_l1 - m_left * (lam_c - s / 3))) / (m_left - m_right)
    if abs(lam_star - lam_c) > s / 2 or not (a - s <= lam_star <= b + s):
        return None
    on_line = _values_close(y_l1 + m_left * (lam_star - (lam_c - s / 3)),
                            probe(lam_star), fs)
    if not on_line:
        return None
    d = probe.seg.direction
    return CriticalPoint(x_star=probe.seg.point(lam_star), lam=float(lam_star),
                         left_slope=m_left, right_slope=m_right, epsilon_used=s,
                         direction=d / np.linalg.norm(d))


def check_linearity(oracle: Oracle, x, direction, eps, out_index=0) -> LinearityCertificate:
    """Five-point affineness test of output `out_index` on [x - eps*d, x + eps*d]."""
    direction = np.asarray(direction, dtype=np.float64)
    n = np.linalg.norm(direction)
    if n == 0.0:
        raise ValueError("zero probe direction")
    seg = ProbeSegment(x - eps * direction, x + eps * direction)
    probe = _SegmentProbe(oracle, seg, out_index)
    ts = (0.0, 0.25, 0.5, 0.75, 1.0)
    ys = [probe(t) for t in ts]
    fs = probe.fscale
    h = 0.25
    mid_ok = _values_close(ys[2], (ys[0] + ys[4]) / 2.0, fs)
    m_a = (ys[1] - ys[0]) / h
    m_b = (ys[4] - ys[3]) / h
    m_ao = (ys[2] - ys[1]) / h
    m_bo = (ys[3] - ys[2]) / h
    linear = (mid_ok and _slopes_close(m_a, m_b, h, fs)
              and _slopes_close(m_ao, m_a, h, fs) and _slopes_close(m_bo, m_b, h, fs))
    return LinearityCertificate(segment=seg, linear=linear, witnesses=tuple(ys))


def verify_critical_point(oracle: Oracle, x_star, direction, eps, out_index=0):
    """Fresh-probe re-check that x_star is a genuine isolated slope break.

    Requires both half-segments [x*-eps*d, x*] and [x*, x*+eps*d] to be
    affine with distinct slopes. Returns (ok, left_slope, right_slope).
    """
    direction = np.asarray(direction, dtype=np.float64)
    seg = ProbeSegment(x_star - eps * direction, x_star + eps * direction)
    probe = _SegmentProbe(oracle, seg, out_index)
    ys = [probe(t) for t in (0.0, 0.25, 0.5, 0.75, 1.0)]
    fs = probe.fscale
    left_lin = _values_close(ys[1], (ys[0] + ys[2]) / 2.0, fs)
    right_lin = _values_close(ys[3], (ys[2] + ys[4]) / 2.0, fs)
    m_left = (ys[2] - ys[0]) / 0.5
    m_right = (ys[4] - ys[2]) / 0.5
    ok = left_lin and right_lin and not _slopes_close(m_left, m_right, 0.5, fs)
    scale = 2.0 * eps * float(np.linalg.norm(direction))
    return ok, m_left / scale if scale else m_left, m_right / scale if scale else m_right


def _illinois_root(v, a, b, va, vb, max_iter=80, tol=1e-15):
    """Root of a piecewise-linear scalar function on a sign-changing bracket."""
    fa, fb = va, vb
    side = 0
    for _ in range(max_iter):
        denom = fb - fa
        c = 0.5 * (a + b) if denom == 0.0 else (a * fb - b * fa) / denom
        if not (min(a, b) <= c <= max(a, b)):
            c = 0.5 * (a + b)
        fc = v(c)
        if fc == 0.0 or abs(b - a) <= tol * max(1.0, abs(a), abs(b)):
            return c
        if (fc > 0) == (fa > 0):
            a, fa = c, fc
            if side == -1:
                fb *= 0.5
            side = -1
        else:
            b, fb = c, fc
            if side == +1:
                fa *= 0.5
            side = +1
    return 0.5 * (a + b)


_SCAN = (0.0625, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)


def find_critical_point_for_neuron(oracle: Oracle, prefix: ForwardPrefix, row, bias,
                                   rng, start=None, budget=40, out_index=0,
                                   verify_eps=1e-4) -> CriticalPoint:
    """Hinge for the hypothesis neuron (row, bias) on top of `prefix`.

    Walks random lines from random starts until the hypothesis pre-activation
    changes sign, solves the crossing on the hypothesis (no queries), then
    registers the true nearby break against the oracle. Raises NeuronAlwaysOff
    when no sign change shows up within `budget` attempts.
    """
    row = np.asarray(row, dtype=np.float64)
    d0 = prefix.input_dim

    def preact(x):
        return float(row @ prefix.forward(x) + bias)

    for attempt in range(budget):
        x0 = np.asarray(start, dtype=np.float64) if (attempt == 0 and start is not None) \
            else rng.normal(size=d0)
        if prefix.depth and attempt % 2 == 0:
            # steepest hinge approach: pull the target's gradient back to
            # input space, which lands inside the reachable directions
            u = prefix.gradient_pullback(x0, row)
            nu = np.linalg.norm(u)
            if nu < 1e-12:
                continue
            u = u / nu
        else:
            u = rng.normal(size=d0)
            u /= np.linalg.norm(u)

        v0 = preact(x0)
        bracket = None
        prev = {+1: (0.0, v0), -1: (0.0, v0)}
        for mag in _SCAN:
            for side in (+1, -1):
                lam = side * mag
                v = preact(x0 + lam * u)
                ref_lam, ref_v = prev[side]
                if v == 0.0:
                    bracket = (lam, lam, v, v)
                elif (v > 0) != (ref_v > 0):
                    bracket = (ref_lam, lam, ref_v, v)
                if bracket:
                    break
                prev[side] = (lam, v)
            if bracket:
                break
        if bracket is None:
            continue
        la, lb, va, vb = bracket
        lam_h = la if la == lb else _illinois_root(lambda t: preact(x0 + t * u), la, lb, va, vb)
        x_hat = x0 + lam_h * u

        eps = verify_eps * max(1.0, abs(lam_h))
        for _ in range(3):
            res = find_critical_points(oracle, ProbeSegment(x_hat - eps * u, x_hat + eps * u),
                                       eps=1e-3, budget=6, out_index=out_index)
            pts = res.points
            if len(pts) == 1:
                cp = pts[0]
                # the break must be the target's own hinge: its hypothesis
                # pre-activation there has to be a small fraction of the
                # pre-activation swing across the probe window
                v_ref = preact(cp.x_star)
                vspan = max(abs(preact(x_hat - eps * u)), abs(preact(x_hat + eps * u)), 1e-300)
                if abs(v_ref) <= 0.25 * vspan:
                    cp.epsilon_used = eps
                    return cp
                break
            if len(pts) == 0 and not res.exhausted:
                eps *= 8.0
            else:
                eps /= 8.0
    raise NeuronAlwaysOff(getattr(prefix, "depth", 0) + 1, -1, budget)
