"""Recovering weight rows up to a signed scale from hinge geometry.

A neuron's hinge is a hyperplane in input space; slopes measured on both
sides of it differ exactly by the outer coefficient times the neuron's
weight row. First-layer rows come from axis-aligned two-sided derivatives.
Deeper rows come from mixed second differences solved against the
recovered prefix, which only determines the coordinates whose upstream
neurons are active at the hinge (a partial signature); partials from
unrelated hinge points are merged into the full row.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .critical import CriticalPoint, verify_critical_point
from .errors import AmbiguousCluster, NotFirstLayer, RankDeficient, ZeroDenominator
from .network import ForwardPrefix
from .oracle import PHASE_LINEARITY, Oracle

TAU_SIG = 1e-4           # relative consistency tolerance between recovered rows
DEFAULT_AXIS_EPS = 1e-3  # hinge standoff for first-layer axis probing


@dataclass
class Signature:
    """A weight row scaled so its pivot coordinate is exactly 1.

    coords is full-length with NaN outside `support`; a full signature has
    every coordinate recovered.
    """
    coords: np.ndarray
    pivot: int
    support: np.ndarray          # boolean mask, same length as coords
    layer_guess: int | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.support = np.asarray(self.support, dtype=bool)

    @property
    def full(self):
        return bool(self.support.all())

    def overlap(self, other):
        return self.support & other.support

    def match_factor(self, other):
        """Scale putting `other` into self's frame on shared support, or None."""
        shared = np.flatnonzero(self.overlap(other))
        if shared.size < 2:
            return None
        prod = np.abs(self.coords[shared]) * np.abs(other.coords[shared])
        o = shared[int(np.argmax(prod))]
        if other.coords[o] == 0.0:
            return None
        return float(self.coords[o] / other.coords[o])

    def consistent_with(self, other, tau=TAU_SIG):
        shared = np.flatnonzero(self.overlap(other))
        if shared.size < 2:
            return False
        factor = self.match_factor(other)
        if factor is None or factor == 0.0:
            return False
        a = self.coords[shared]
        b = other.coords[shared] * factor
        floor = 0.01 * float(np.max(np.abs(a)))
        return bool(np.all(np.abs(a - b) <= tau * (np.abs(a) + np.abs(b) + floor)))


@dataclass
class SignatureCluster:
    members: list = field(default_factory=list)   # (CriticalPoint, Signature) pairs
    merged: Signature | None = None

    @property
    def full(self):
        return self.merged is not None and self.merged.full

    def __len__(self):
        return len(self.members)


def _normalize_by_pivot(values, support):
    live = np.flatnonzero(support)
    if live.size == 0:
        raise ZeroDenominator("no recovered coordinates")
    pivot = int(live[int(np.argmax(np.abs(values[live])))])
    if values[pivot] == 0.0:
        raise ZeroDenominator("largest recovered coordinate is exactly zero")
    coords = np.full(values.shape, np.nan)
    coords[live] = values[live] / values[pivot]
    return coords, pivot


def _axis_slope(oracle, base, base_val, axis, h, fscale, retries=4):
    """Exact slope along one axis at `base`, certified by step agreement.

    The restriction to the axis is piecewise linear, so slopes taken with
    steps h and h/2 agree only when both probes sit on one piece; on
    disagreement the step shrinks. Returns (slope vector, queries used).
    """
    e = np.zeros(base.shape)
    e[axis] = 1.0
    used = 0
    for _ in range(retries):
        y1 = oracle.query(base + h * e)
        y2 = oracle.query(base + 0.5 * h * e)
        used += 2
        s1 = (y1 - base_val) / h
        s2 = (y2 - base_val) / (0.5 * h)
        tol = 1e-7 * np.maximum(np.abs(s1), np.abs(s2)) + 1e3 * 2.22e-16 * fscale / h
        if np.all(np.abs(s1 - s2) <= tol):
            return s2, used
        h *= 0.125
    raise NotFirstLayer(f"axis {axis}: slope never stabilized; crowded hinge")


def recover_layer1_signature(oracle: Oracle, cp: CriticalPoint, eps=DEFAULT_AXIS_EPS,
                             side_direction=None) -> Signature:
    """Full signed weight-row signature of the first-layer neuron critical at cp.

    Fixes one base point on each side of the hinge (standoff eps along a
    transversal direction) and measures the derivative along every canonical
    axis at both bases with two-step agreement checks; the gradient jump
    across the hinge is one common multiple of the signed weight row.
    At most 4*d0 + 8 queries on clean hinges.
    """
    x = np.asarray(cp.x_star, dtype=np.float64)
    d0 = x.shape[0]
    if side_direction is None:
        side_direction = cp.direction
    if side_direction is None:
        # arbitrary transversal; the break check below catches a bad choice
        side_direction = np.ones(d0)
    w = np.asarray(side_direction, dtype=np.float64)
    w = w / np.linalg.norm(w)

    ok, m_left, m_right = verify_critical_point(oracle, x, w, eps)
    if not ok:
        raise NotFirstLayer("no isolated slope break across the side direction")
    y_plus = x + eps * w
    y_minus = x - eps * w
    f_plus = oracle.query(y_plus)
    f_minus = oracle.query(y_minus)
    fscale = max(1.0, float(np.max(np.abs(f_plus))), float(np.max(np.abs(f_minus))))

    h = eps / 4.0
    jump = np.empty((d0, oracle.output_dim))
    for i in range(d0):
        s_plus, _ = _axis_slope(oracle, y_plus, f_plus, i, h, fscale)
        s_minus, _ = _axis_slope(oracle, y_minus, f_minus, i, h, fscale)
        jump[i] = s_plus - s_minus
    diffs = jump.T                                  # (d_out, d0)
    out = int(np.argmax(np.linalg.norm(diffs, axis=1)))
    row = diffs[out]
    if np.max(np.abs(row)) == 0.0:
        raise ZeroDenominator("no gradient jump on any axis; not a hinge?")
    coords, pivot = _normalize_by_pivot(row, np.ones(d0, dtype=bool))
    return Signature(coords=coords, pivot=pivot, support=np.ones(d0, dtype=bool), layer_guess=1)


def recover_deep_partial_signature(oracle: Oracle, prefix: ForwardPrefix, cp: CriticalPoint,
                                   eps=1e-4, rng=None, extra_equations=8,
                                   max_directions=None) -> Signature:
    """Partial weight row of a deeper-layer neuron critical at cp.

    For random input nudges delta_k, the antisymmetrized second difference
      y_k = [f(x+d1+dk) - f(x+d1) - f(x+dk) + f(x)]
          - [f(x+d1-dk) - f(x+d1) - f(x-dk) + f(x)]
    equals (output coefficient) * (the neuron's pre-activation change along
    delta_k) as long as |change along delta_k| < |change along d1|, which a
    per-direction regime check enforces. Solving <F_prefix(x+dk), a> + b =
    y_k in least squares recovers the row over the coordinates of prefix
    neurons active at the hinge; the rest are reported absent.
    """
    if rng is None:
        rng = np.random.default_rng()
    x = np.asarray(cp.x_star, dtype=np.float64)
    width = prefix.output_dim
    h_base = prefix.forward(x)
    active = h_base > 0.0
    if not active.any():
        raise RankDeficient("no active upstream neuron at this hinge")
    # one hinge neighborhood pins a coordinate down only when the nudges can
    # move the active coordinates independently; otherwise skip before
    # spending any queries and let another hinge cover those coordinates
    ca = prefix.collapse(x)
    g_active = ca.gamma[active]
    s = np.linalg.svd(g_active, compute_uv=False)
    var_rank = int(np.sum(s > 1e-8 * s[0])) if s.size and s[0] > 0 else 0
    if var_rank < int(active.sum()):
        raise RankDeficient(f"hinge moves only {var_rank} of {int(active.sum())} active coords")
    n_needed = int(active.sum()) + 1
    if max_directions is None:
        max_directions = 3 * max(width, n_needed)

    f0 = oracle.query(x)
    # pick a base nudge that actually toggles the hinge: largest second
    # difference among a few candidates
    best = None
    for _ in range(8):
        d1 = rng.normal(size=x.shape)
        d1 *= eps / np.linalg.norm(d1)
        f_p = oracle.query(x + d1)
        f_m = oracle.query(x - d1)
        d2 = f_p - 2.0 * f0 + f_m
        mag = float(np.max(np.abs(d2)))
        if best is None or mag > best[0]:
            best = (mag, d1, f_p, d2)
    mag, d1, f_d1, d2 = best
    noise = 1e-10 * max(1.0, float(np.max(np.abs(f0))))
    if mag <= noise:
        raise RankDeficient("hinge does not respond to any base nudge")
    out = int(np.argmax(np.abs(d2)))
    base_plus = float(f_d1[out])
    f0s = float(f0[out])

    rows, ys = [], []
    attempts = 0
    while len(ys) < n_needed + extra_equations and attempts < max_directions:
        attempts += 1
        dk = rng.normal(size=x.shape)
        dk *= (eps / 4.0) / np.linalg.norm(dk)
        for _ in range(3):
            f_k = float(oracle.query(x + dk)[out])
            f_mk = float(oracle.query(x - dk)[out])
            f_sum = float(oracle.query(x + d1 + dk)[out])
            f_dif = float(oracle.query(x + d1 - dk)[out])
            s_plus = f_sum - base_plus - f_k + f0s
            s_minus = f_dif - base_plus - f_mk + f0s
            lo, hi = sorted((abs(s_plus), abs(s_minus)))
            if hi <= noise or lo <= 0.2 * hi:
                break
            dk = dk / 4.0   # nudge outran the base toggle; shrink and retry
        else:
            continue
        ys.append(s_plus - s_minus)
        rows.append(prefix.forward(x + dk))

    if len(ys) < n_needed:
        raise RankDeficient(f"only {len(ys)} usable equations for {n_needed} unknowns")
    h = np.asarray(rows)[:, active]
    design = np.hstack([h, np.ones((h.shape[0], 1))])
    theta, _, rank, sv = np.linalg.lstsq(design, np.asarray(ys), rcond=None)
    # coordinates touched by the design's null space are not determined at
    # this hinge; drop them from the support instead of reporting garbage.
    # Only the coordinate part of a null vector matters: the intercept just
    # shifts along with whatever the coordinates cannot pin down.
    _, s, vt = np.linalg.svd(design, full_matrices=True)
    null_rows = vt[np.sum(s > 1e-8 * s[0]):] if s.size else vt
    determined_local = np.ones(design.shape[1] - 1, dtype=bool)
    if null_rows.size:
        u = null_rows[:, :-1]
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        determined_local = np.max(np.abs(u / norms), axis=0) <= 1e-6
    support = np.zeros(width, dtype=bool)
    support[np.flatnonzero(active)[determined_local]] = True
    if not support.any():
        raise RankDeficient("no coordinate resolvable at this hinge")
    values = np.zeros(width)
    values[np.flatnonzero(active)] = np.where(determined_local, theta[:-1], 0.0)
    coords, pivot = _normalize_by_pivot(values, support)
    return Signature(coords=coords, pivot=pivot, support=support,
                     layer_guess=prefix.depth + 1)


def cluster_and_merge(candidates, tau=TAU_SIG, min_members=2):
    """Group (CriticalPoint, Signature) pairs by row identity and merge supports.

    Two candidates join a cluster when their signatures agree on overlapping
    support to relative tau after rescaling. Returns clusters sorted by size,
    each with a merged signature on the union support. Raises AmbiguousCluster
    when members that clustered together cannot be reconciled.
    """
    n = len(candidates)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if find(i) == find(j):
                continue
            if candidates[i][1].consistent_with(candidates[j][1], tau=tau):
                parent[find(j)] = find(i)

    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(candidates[i])

    clusters = [_build_cluster(members, tau) for members in groups.values()]

    # partials can share too little support pairwise yet agree through their
    # merged rows; agglomerate clusters until nothing changes
    changed = True
    while changed:
        changed = False
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                if clusters[i].merged.consistent_with(clusters[j].merged, tau=tau):
                    clusters[i] = _build_cluster(clusters[i].members + clusters[j].members, tau)
                    del clusters[j]
                    changed = True
                    break
            if changed:
                break
    clusters.sort(key=len, reverse=True)
    return clusters


def _greedy_chunk(sigs, weights, width, tau):
    """Absorb as many (signature, weight) pairs as chain with >= 2 shared
    coordinates; returns (acc, cnt, leftovers)."""
    acc = np.zeros(width)
    cnt = np.zeros(width)
    first, w0 = sigs[0], weights[0]
    acc[first.support] = first.coords[first.support] * w0
    cnt[first.support] = w0
    pending = list(zip(sigs[1:], weights[1:]))
    while pending:
        overlaps = [int(np.sum((cnt > 0) & s.support)) for s, _ in pending]
        k = int(np.argmax(overlaps))
        if overlaps[k] < 2:
            break
        sig, w = pending.pop(k)
        est_mask = cnt > 0
        est = np.zeros(width)
        est[est_mask] = acc[est_mask] / cnt[est_mask]
        shared = np.flatnonzero(est_mask & sig.support)
        prod = np.abs(est[shared]) * np.abs(sig.coords[shared])
        o = shared[int(np.argmax(prod))]
        if sig.coords[o] == 0.0:
            raise AmbiguousCluster("cannot rescale onto a zero coordinate")
        factor = est[o] / sig.coords[o]
        live = np.flatnonzero(sig.support)
        scaled = sig.coords[live] * factor
        seen = est_mask[live]
        if seen.any():
            prev = est[live][seen]
            cur = scaled[seen]
            floor = 0.01 * float(np.max(np.abs(prev)))
            if not np.all(np.abs(prev - cur) <= 10 * tau * (np.abs(prev) + np.abs(cur) + floor)):
                raise AmbiguousCluster("merge conflict inside a cluster")
        acc[live] += scaled * w
        cnt[live] += w
    return acc, cnt, pending


def _build_cluster(members, tau):
    """Merge member rows onto one scale.

    Greedy overlap-chaining can strand members whose individual supports are
    narrow, so stranded leftovers are chunked among themselves and the chunk
    estimates are then chained the same way.
    """
    ref = members[0][1]
    width = ref.coords.shape[0]
    sigs = [sig for _, sig in members]
    weights = [1.0] * len(sigs)
    while True:
        chunks = []
        pool_s, pool_w = sigs, weights
        while pool_s:
            acc, cnt, leftovers = _greedy_chunk(pool_s, pool_w, width, tau)
            support = cnt > 0
            values = np.zeros(width)
            values[support] = acc[support] / cnt[support]
            coords, pivot = _normalize_by_pivot(values, support)
            chunks.append((Signature(coords=coords, pivot=pivot, support=support,
                                     layer_guess=ref.layer_guess), float(cnt.max())))
            pool_s = [s for s, _ in leftovers]
            pool_w = [w for _, w in leftovers]
        if len(chunks) == 1:
            return SignatureCluster(members=members, merged=chunks[0][0])
        if len(chunks) >= len(sigs):
            raise AmbiguousCluster("clustered rows share too little support to merge")
        sigs = [s for s, _ in chunks]
        weights = [w for _, w in chunks]


def declared_neurons(clusters, min_members=2):
    """Clusters confident enough to commit: repeated and with full support."""
    return [c for c in clusters if len(c) >= min_members and c.full]
