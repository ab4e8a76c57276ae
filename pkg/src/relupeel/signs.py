"""Resolving the per-neuron sign left open by ratio-only row recovery.

Four routes, by layer position and reachable rank:
  * solve-all-at-once from first differences at one anchor (SOE),
  * freeze one neuron at a time via exact basis-vector nudges,
  * maximally wiggle the target across many hinge points and vote,
  * fit the fixed output map of the final hidden layer via second
    differences plus a 0/1 selector system.
An exhaustive-search reference for narrow layers lives here too, purely as
a correctness oracle for tests.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .critical import CriticalPoint, find_critical_point_for_neuron
from .errors import (
    CriticalAtAnchor,
    InsufficientRank,
    LinearityViolation,
    NeuronAlwaysOff,
    NonBinarySolution,
    NumericallyAmbiguous,
    RankDeficientSystem,
    ZeroProjection,
)
from .network import ForwardPrefix, TAU_RANK
from .oracle import (
    Oracle,
    PHASE_CRITICAL,
    PHASE_FREEZE,
    PHASE_LAST_LAYER,
    PHASE_LINEARITY,
    PHASE_SOE,
    PHASE_WIGGLE,
)

TAU_ZERO = 1e-6       # |c_j| below this fraction of the largest coefficient reads as zero
TAU_TIE = 1e-9        # relative |L - R| treated as an undecidable vote
TAU_BINARY = 0.2      # selector unknowns must land this close to 0 or 1
WIGGLE_EPS_REL = 1e-4
DEFAULT_SAMPLES = 200


@dataclass
class SignDecision:
    neuron: int
    sign: int                    # +1, -1, or 0 when undecided
    method: str
    s_minus: int = 0
    s_plus: int = 0
    alpha: float = 1.0
    discarded: int = 0           # votes thrown out by tie or linearity checks
    always_off: bool = False
    unrecoverable: bool = False
    t_crit: float = 0.0
    t_wiggle: float = 0.0

    @property
    def samples(self):
        return self.s_minus + self.s_plus

    @property
    def t_total(self):
        return self.t_crit + self.t_wiggle


@dataclass
class Wiggle:
    delta: np.ndarray            # nudge at the target layer's input
    Delta: np.ndarray            # its input-space preimage
    target: int
    epsilon: float


@dataclass
class OutputCoefficients:
    """Per-output weights that the suffix applies to one layer's channels."""
    values: np.ndarray           # (d_out, d_layer)
    bias: np.ndarray | None = None


def _hypothesis_values(prefix: ForwardPrefix, rows, biases, x):
    return rows @ prefix.forward(x) + biases


def _sign_from_state(v_hat, active):
    return +1 if (v_hat > 0) == bool(active) else -1


def _margin_ok(v_hat, rel=1e-4):
    scale = float(np.max(np.abs(v_hat)))
    return scale > 0 and float(np.min(np.abs(v_hat))) > rel * scale


def _all_active_anchor(prefix: ForwardPrefix, rng):
    """An input putting every prefix neuron on its positive side, if possible."""
    if prefix.depth == 0:
        return rng.normal(size=prefix.input_dim)
    if prefix.depth == 1:
        w, b = prefix.weights[0], prefix.biases[0]
        target = np.ones(w.shape[0])
        x, *_ = np.linalg.lstsq(w, target - b, rcond=None)
        if np.all(w @ x + b > 0.5):
            return x
    return None


def recover_signs_soe(oracle: Oracle, prefix: ForwardPrefix, rows, biases, rng,
                      anchor=None, max_anchor_tries=25, nudge_rel=1e-4):
    """All signs of one layer from d_i + 1 queries at a single anchor.

    First differences f(x + nudge) - f(x) are linear in the layer's
    pre-activation changes; solving for the combination coefficients reveals
    which neurons the ReLU silences at x, and the hypothesis pre-activation
    tells the sign that makes silence consistent. Needs reachable rank >=
    layer width at the anchor.
    """
    rows = np.asarray(rows, dtype=np.float64)
    biases = np.asarray(biases, dtype=np.float64)
    d_i = rows.shape[0]
    candidates = []
    if anchor is not None:
        candidates.append(np.asarray(anchor, dtype=np.float64))
    built = _all_active_anchor(prefix, rng)
    if built is not None:
        candidates.append(built)

    last_error = None
    for attempt in range(max_anchor_tries):
        x = candidates[attempt] if attempt < len(candidates) else rng.normal(size=prefix.input_dim)
        try:
            ca = prefix.collapse(x)
        except CriticalAtAnchor as exc:
            last_error = exc
            continue
        v_hat = rows @ ca.apply(x) + biases
        if not _margin_ok(v_hat):
            continue
        m = rows @ ca.gamma                       # (d_i, d0): pre-activation response map
        sv = np.linalg.svd(m, compute_uv=False)
        if sv.size < d_i or sv[-1] <= TAU_RANK * sv[0]:
            last_error = InsufficientRank(
                f"anchor reaches rank {int(np.sum(sv > TAU_RANK * sv[0]))} < {d_i}")
            continue

        scale_x = max(1.0, float(np.linalg.norm(x)))
        nudges = rng.normal(size=(d_i, prefix.input_dim))
        nudges *= nudge_rel * scale_x / np.linalg.norm(nudges, axis=1, keepdims=True)
        y = nudges @ m.T                          # (d_i, d_i)
        if np.linalg.cond(y) > 1e8:
            continue

        with oracle.phase(PHASE_SOE):
            f0 = oracle.query(x)
            fs = np.stack([oracle.query(x + nudges[k]) for k in range(d_i)])
        with oracle.phase(PHASE_LINEARITY):
            mids = np.stack([oracle.query(x + 0.5 * nudges[k]) for k in range(d_i)])
        fscale = max(1.0, float(np.max(np.abs(f0))))
        if np.max(np.abs(mids - 0.5 * (fs + f0))) > 1e-7 * fscale:
            continue    # some nudge left the anchor's linear neighborhood

        z = fs - f0                               # (d_i, d_out)
        coeff = np.linalg.solve(y, z)             # (d_i, d_out), one column per output
        resid = np.max(np.abs(y @ coeff - z))
        if resid > 1e-6 * max(np.max(np.abs(z)), 1e-30):
            continue
        mag = np.max(np.abs(coeff), axis=1)
        top = float(np.max(mag))
        if top == 0.0:
            continue
        grey = (mag > TAU_ZERO * top) & (mag <= 10 * TAU_ZERO * top)
        if grey.any():
            last_error = NumericallyAmbiguous(
                f"{int(grey.sum())} coefficients in the grey zone at this anchor")
            continue
        active = mag > 10 * TAU_ZERO * top
        return [SignDecision(neuron=j, sign=_sign_from_state(v_hat[j], active[j]),
                             method="SOE", s_plus=1, alpha=1.0) for j in range(d_i)]
    raise last_error if last_error is not None else InsufficientRank("no usable anchor found")


def recover_signs_freeze(oracle: Oracle, prefix: ForwardPrefix, rows, biases, rng,
                         anchor=None, max_anchor_tries=25):
    """One sign per neuron by nudging only that neuron's pre-activation.

    A preimage of epsilon * e_k under the layer's response map changes
    nothing except neuron k; the output moves iff k is active at the anchor.
    Needs every basis vector to be reachable (full row rank d_i).
    """
    rows = np.asarray(rows, dtype=np.float64)
    biases = np.asarray(biases, dtype=np.float64)
    d_i = rows.shape[0]
    last_error = None
    for attempt in range(max_anchor_tries):
        if anchor is not None and attempt == 0:
            x = np.asarray(anchor, dtype=np.float64)
        else:
            built = _all_active_anchor(prefix, rng) if attempt == 0 else None
            x = built if built is not None else rng.normal(size=prefix.input_dim)
        try:
            ca = prefix.collapse(x)
        except CriticalAtAnchor as exc:
            last_error = exc
            continue
        v_hat = rows @ ca.apply(x) + biases
        if not _margin_ok(v_hat):
            continue
        m = rows @ ca.gamma
        sv = np.linalg.svd(m, compute_uv=False)
        if sv.size < d_i or sv[-1] <= TAU_RANK * sv[0]:
            last_error = InsufficientRank(
                f"anchor reaches rank {int(np.sum(sv > TAU_RANK * sv[0]))} < {d_i}")
            continue

        decisions = []
        with oracle.phase(PHASE_FREEZE):
            f0 = oracle.query(x)
            fscale = max(1.0, float(np.max(np.abs(f0))))
            ok = True
            for k in range(d_i):
                eps_k = 0.25 * abs(v_hat[k])      # hypothesis units: can never flip k
                target = np.zeros(d_i)
                target[k] = eps_k
                delta, residual, *_ = np.linalg.lstsq(m, target, rcond=None)
                if np.max(np.abs(m @ delta - target)) > 1e-9 * eps_k:
                    ok = False
                    break
                moved = float(np.max(np.abs(oracle.query(x + delta) - f0)))
                active = moved > 1e-9 * fscale
                decisions.append(SignDecision(neuron=k, sign=_sign_from_state(v_hat[k], active),
                                              method="Freeze", s_plus=1, alpha=1.0))
        if ok:
            return decisions
        last_error = InsufficientRank("basis vector unreachable at this anchor")
    raise last_error if last_error is not None else InsufficientRank("no usable anchor found")


def _damped_preimage(gamma, a, tau):
    """Least-squares preimage of a under gamma via Tikhonov normal equations.

    Damping lambda = tau^2 * ||gamma||_F^2 floors the rank-threshold
    directions; the Gram matrix is formed on whichever side is smaller.
    """
    rows_n, cols_n = gamma.shape
    try:
        if cols_n <= rows_n:
            gram = gamma.T @ gamma
            lam = (tau ** 2) * float(np.trace(gram))
            if lam <= 0.0:
                raise scipy.linalg.LinAlgError("zero map")
            gram[np.diag_indices_from(gram)] += lam
            chol = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
            return scipy.linalg.cho_solve(chol, gamma.T @ a, check_finite=False)
        gram = gamma @ gamma.T
        lam = (tau ** 2) * float(np.trace(gram))
        if lam <= 0.0:
            raise scipy.linalg.LinAlgError("zero map")
        gram[np.diag_indices_from(gram)] += lam
        chol = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        return gamma.T @ scipy.linalg.cho_solve(chol, a, check_finite=False)
    except scipy.linalg.LinAlgError:
        return scipy.linalg.lstsq(gamma, a, cond=tau, lapack_driver="gelsy",
                                  check_finite=False)[0]


def compute_wiggle(prefix: ForwardPrefix, rows, target: int, x_star,
                   eps_rel=WIGGLE_EPS_REL, tau=TAU_RANK) -> Wiggle:
    """Nudge maximizing the target neuron's pre-activation change at x_star.

    Projects the target's row onto the reachable subspace there, rescales to
    a small norm, and pulls it back to input space with the least-norm
    preimage.
    """
    rows = np.asarray(rows, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    a = rows[target]
    if prefix.depth == 0:
        norm_a = float(np.linalg.norm(a))
        if norm_a == 0.0:
            raise ZeroProjection("zero target row")
        eps = eps_rel * max(1.0, float(np.linalg.norm(x_star)))
        delta = a * (eps / norm_a)
        return Wiggle(delta=delta, Delta=delta.copy(), target=target, epsilon=eps)
    ca = prefix.collapse(x_star)
    # gamma @ lstsq(gamma, a) is exactly a's projection onto the reachable
    # subspace, so one solve yields both the nudge and its preimage. Solved
    # through damped normal equations (damping at the rank threshold) on the
    # smaller Gram side, which beats the LAPACK least-squares drivers by a
    # lot; the exact driver (with an explicit cutoff: scipy's default keeps
    # near-null directions) stays as the fallback.
    pre = _damped_preimage(ca.gamma, a, tau)
    proj = ca.gamma @ pre
    norm_proj = float(np.linalg.norm(proj))
    if norm_proj <= tau * max(float(np.linalg.norm(a)), 1e-300):
        raise ZeroProjection("target row is orthogonal to the reachable subspace")
    feat = prefix.forward(x_star)
    eps = eps_rel * max(1.0, float(np.linalg.norm(feat)))
    scale = eps / norm_proj
    return Wiggle(delta=proj * scale, Delta=pre * scale, target=target, epsilon=eps)


def wiggle_vote(oracle: Oracle, wig: Wiggle, x_star, tau_tie=TAU_TIE):
    """One +-1 vote for the target's sign at one hinge point; None if unusable.

    Compares output movement on the two sides of the hinge (Euclidean norm
    over all outputs); the side carrying the target's contribution is larger.
    Midpoint probes reject samples whose nudge toggled some other neuron.
    """
    x_star = np.asarray(x_star, dtype=np.float64)
    with oracle.phase(PHASE_WIGGLE):
        f0 = oracle.query(x_star)
        fp = oracle.query(x_star + wig.Delta)
        fm = oracle.query(x_star - wig.Delta)
    with oracle.phase(PHASE_LINEARITY):
        mp = oracle.query(x_star + 0.5 * wig.Delta)
        mm = oracle.query(x_star - 0.5 * wig.Delta)
    fscale = max(1.0, float(np.max(np.abs(f0))))
    if (np.max(np.abs(mp - 0.5 * (f0 + fp))) > 1e-7 * fscale
            or np.max(np.abs(mm - 0.5 * (f0 + fm))) > 1e-7 * fscale):
        return None
    big_l = float(np.linalg.norm(fm - f0))
    big_r = float(np.linalg.norm(fp - f0))
    if abs(big_l - big_r) <= tau_tie * max(big_l, big_r):
        return None
    return -1 if big_l > big_r else +1


def _wiggle_neuron_round(oracle, prefix, rows, biases, j, n_samples, rng, starts=None):
    """(minus, plus, discarded, t_crit, t_wiggle, always_off) over fresh hinges."""
    minus = plus = discarded = 0
    t_crit = t_wiggle = 0.0
    attempts = 0
    eps_rel = WIGGLE_EPS_REL
    while minus + plus < n_samples and attempts < 4 * n_samples:
        attempts += 1
        t0 = time.perf_counter()
        start = None
        if starts is not None:
            start = starts[int(rng.integers(len(starts)))]
        try:
            with oracle.phase(PHASE_CRITICAL):
                cp = find_critical_point_for_neuron(
                    oracle, prefix, rows[j], biases[j], rng, start=start)
        except NeuronAlwaysOff:
            return minus, plus, discarded, time.perf_counter() - t0 + t_crit, t_wiggle, True
        t1 = time.perf_counter()
        t_crit += t1 - t0
        try:
            wig = compute_wiggle(prefix, rows, j, cp.x_star, eps_rel=eps_rel)
        except (ZeroProjection, CriticalAtAnchor):
            continue
        vote = wiggle_vote(oracle, wig, cp.x_star)
        t_wiggle += time.perf_counter() - t1
        if vote is None:
            discarded += 1
            eps_rel = max(eps_rel / 2.0, 1e-7)
            continue
        if vote < 0:
            minus += 1
        else:
            plus += 1
    return minus, plus, discarded, t_crit, t_wiggle, False


def recover_signs_wiggle(oracle: Oracle, prefix: ForwardPrefix, rows, biases,
                         samples=DEFAULT_SAMPLES, rounds=3, low_fraction=0.10,
                         seed=0, workers=1, starts=None):
    """Majority-vote signs for a whole layer, with low-confidence re-analysis.

    Each neuron gets `samples` votes at independent hinge points. The cutoff
    alpha0 is set so the least-confident `low_fraction` of neurons are re-run
    with fresh hinges (votes accumulate) once the confident signs are in;
    up to `rounds - 1` re-runs. Returns (decisions, alpha0).
    """
    rows = np.asarray(rows, dtype=np.float64)
    biases = np.asarray(biases, dtype=np.float64)
    d_i = rows.shape[0]
    tallies = np.zeros((d_i, 2), dtype=np.int64)
    t_crit = np.zeros(d_i)
    t_wig = np.zeros(d_i)
    dropped = np.zeros(d_i, dtype=np.int64)
    off = np.zeros(d_i, dtype=bool)

    def run_round(indices, round_idx):
        def job(j):
            rng = np.random.default_rng((seed, round_idx, j))
            return j, _wiggle_neuron_round(oracle, prefix, rows, biases, j,
                                           samples, rng, starts=starts)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(job, indices))
        else:
            results = [job(j) for j in indices]
        for j, (m, p, disc, tc, tw, always_off) in results:
            tallies[j, 0] += m
            tallies[j, 1] += p
            dropped[j] += disc
            t_crit[j] += tc
            t_wig[j] += tw
            off[j] |= always_off

    run_round(list(range(d_i)), 0)
    totals = tallies.sum(axis=1)
    with np.errstate(invalid="ignore"):
        alphas = np.where(totals > 0, tallies.max(axis=1) / np.maximum(totals, 1), 0.0)
    alpha0 = float(np.quantile(alphas[~off], low_fraction)) if (~off).any() else 1.0

    pending = [j for j in range(d_i) if not off[j] and alphas[j] <= alpha0]
    cap = max(1, int(np.ceil(3 * low_fraction * d_i)))
    if len(pending) > cap:
        pending = sorted(pending, key=lambda j: alphas[j])[:cap]
    for round_idx in range(1, rounds):
        if not pending:
            break
        run_round(pending, round_idx)
        pending = [j for j in pending
                   if not off[j] and tallies[j, 0] == tallies[j, 1]]

    decisions = []
    for j in range(d_i):
        m, p = int(tallies[j, 0]), int(tallies[j, 1])
        if off[j]:
            sign = 0
        elif m == p:
            sign = 0
        else:
            sign = -1 if m > p else +1
        total = m + p
        alpha = max(m, p) / total if total else 0.0
        decisions.append(SignDecision(
            neuron=j, sign=sign, method="Wiggle", s_minus=m, s_plus=p, alpha=alpha,
            discarded=int(dropped[j]), always_off=bool(off[j]),
            unrecoverable=(sign == 0 and not off[j]),
            t_crit=t_crit[j], t_wiggle=t_wig[j]))
    return decisions, alpha0


def recover_output_coefficient(oracle: Oracle, prefix: ForwardPrefix, rows, biases,
                               target: int, cp: CriticalPoint, eps_rel=WIGGLE_EPS_REL):
    """Suffix coefficients of one neuron from a second difference at its hinge.

    Nudging parallel to the neuron's input-space gradient makes the second
    difference equal that gradient's step times the coefficient, regardless
    of the neuron's sign. 3 queries.
    """
    rows = np.asarray(rows, dtype=np.float64)
    x_star = np.asarray(cp.x_star, dtype=np.float64)
    ca = prefix.collapse(x_star)
    grad = rows[target] @ ca.gamma
    norm = float(np.linalg.norm(grad))
    if norm == 0.0:
        raise ZeroProjection("target gradient vanishes at this hinge")
    eps = eps_rel * max(1.0, float(np.linalg.norm(x_star)))
    with oracle.phase(PHASE_LAST_LAYER):
        f0 = oracle.query(x_star)
    fscale = max(1.0, float(np.max(np.abs(f0))))
    for _ in range(5):
        delta = grad * (eps / norm)
        denom = float(grad @ delta)               # positive by construction
        with oracle.phase(PHASE_LAST_LAYER):
            fp = oracle.query(x_star + delta)
            fm = oracle.query(x_star - delta)
        with oracle.phase(PHASE_LINEARITY):
            mp = oracle.query(x_star + 0.5 * delta)
            mm = oracle.query(x_star - 0.5 * delta)
        if (np.max(np.abs(mp - 0.5 * (f0 + fp))) > 1e-7 * fscale
                or np.max(np.abs(mm - 0.5 * (f0 + fm))) > 1e-7 * fscale):
            eps *= 0.5    # some other neuron toggled inside the probe window
            continue
        second = fp - 2.0 * f0 + fm
        noise = 1e-10 * fscale
        if float(np.max(np.abs(second))) <= noise:
            return np.zeros(oracle.output_dim)
        return second / denom
    raise LinearityViolation("no toggle-free probe window at this hinge")


def recover_signs_last_layer(oracle: Oracle, prefix: ForwardPrefix, rows, biases,
                             rng, extra_equations=0, max_extra=None):
    """Signs of the final hidden layer plus the output bias vector.

    The map from that layer to the outputs is anchor-independent, so its
    coefficients (one second difference per neuron, 3 queries each) together
    with d_r + d_out fresh evaluations give a linear system over the 0/1
    side selectors and output biases. 4 d_r + d_out queries in total for a
    d_out-output network.
    """
    rows = np.asarray(rows, dtype=np.float64)
    biases = np.asarray(biases, dtype=np.float64)
    d_r = rows.shape[0]
    d_out = oracle.output_dim
    if max_extra is None:
        max_extra = d_r + 1

    coeffs = np.zeros((d_out, d_r))
    dead = np.zeros(d_r, dtype=bool)
    for k in range(d_r):
        rng_k = np.random.default_rng(rng.integers(2**63))
        for attempt in range(4):
            try:
                with oracle.phase(PHASE_CRITICAL):
                    cp = find_critical_point_for_neuron(oracle, prefix, rows[k],
                                                        biases[k], rng_k)
                coeffs[:, k] = recover_output_coefficient(oracle, prefix, rows, biases, k, cp)
                break
            except NeuronAlwaysOff:
                dead[k] = True
                break
            except (ZeroProjection, CriticalAtAnchor, LinearityViolation):
                continue    # hinge was unusable (e.g. grazing an upstream hinge)
        else:
            dead[k] = True
        if np.max(np.abs(coeffs[:, k])) == 0.0:
            dead[k] = True
    live = np.flatnonzero(~dead)

    n_rows = 0
    design_rows, rhs = [], []
    n_target = d_r + d_out + extra_equations
    while True:
        batch = n_target - n_rows
        if batch > 0:
            for _ in range(batch):
                x = rng.normal(size=prefix.input_dim)
                e = rows @ prefix.forward(x) + biases
                y_plus = np.maximum(e, 0.0)
                y_minus = np.maximum(-e, 0.0)
                with oracle.phase(PHASE_LAST_LAYER):
                    fx = oracle.query(x)
                for m in range(d_out):
                    row = np.zeros(live.size + d_out)
                    row[:live.size] = coeffs[m, live] * (y_plus[live] - y_minus[live])
                    row[live.size + m] = 1.0
                    design_rows.append(row)
                    rhs.append(fx[m] - float(coeffs[m, live] @ y_minus[live]))
                n_rows += 1
        design = np.asarray(design_rows)
        b_vec = np.asarray(rhs)
        sol, _, rank, _ = np.linalg.lstsq(design, b_vec, rcond=None)
        if rank < design.shape[1]:
            if n_rows >= 2 * (d_r + 1):
                raise RankDeficientSystem(f"rank {rank} < {design.shape[1]} after {n_rows} anchors")
            n_target = n_rows + d_out
            continue
        resid = float(np.linalg.norm(design @ sol - b_vec))
        selectors = sol[:live.size]
        off_binary = np.abs(selectors - np.round(selectors)) > TAU_BINARY
        rounded_ok = np.all((np.round(selectors) == 0) | (np.round(selectors) == 1))
        # second-difference noise in the coefficients grows with width and
        # prefix depth; binariness is the sharp guard, the residual only has
        # to rule out structurally wrong systems
        if resid > 1e-4 * max(float(np.linalg.norm(b_vec)), 1e-30) or off_binary.any() or not rounded_ok:
            if n_rows >= 2 * (d_r + 1):
                raise NonBinarySolution(
                    f"{int(off_binary.sum())} selectors off-binary, residual {resid:.2e}")
            n_target = n_rows + d_out
            continue
        break

    out_bias = sol[live.size:]
    signs = np.zeros(d_r, dtype=int)
    signs[live] = np.where(np.round(selectors) == 1, +1, -1)
    decisions = [SignDecision(neuron=k, sign=int(signs[k]), method="LastLayer",
                              s_plus=1 if signs[k] >= 0 else 0,
                              s_minus=1 if signs[k] < 0 else 0,
                              alpha=1.0, always_off=bool(dead[k]))
                 for k in range(d_r)]
    return decisions, out_bias, OutputCoefficients(values=coeffs, bias=out_bias)


def exhaustive_sign_search(oracle: Oracle, prefix: ForwardPrefix, rows, biases,
                           suffix_weights, suffix_biases, rng, n_inputs=1000):
    """Reference assignment: try all 2^{d_i} sign patterns, keep the best fit.

    suffix_weights/biases must be expressed against this layer's hypothesis
    scale. Only meant for layers of width <= 12 in tests; cost doubles per
    neuron.
    """
    rows = np.asarray(rows, dtype=np.float64)
    biases = np.asarray(biases, dtype=np.float64)
    d_i = rows.shape[0]
    if d_i > 12:
        raise ValueError("exhaustive search is capped at width 12")
    xs = rng.normal(size=(n_inputs, prefix.input_dim))
    feats = prefix.forward_batch(xs)
    pre = feats @ rows.T + biases                 # (n, d_i) hypothesis pre-activations
    truth = oracle.query_batch(xs)

    def apply_suffix(y):
        out = y
        last = len(suffix_weights) - 1
        for li, (w, b) in enumerate(zip(suffix_weights, suffix_biases)):
            out = out @ w.T + b
            if li != last:
                out = np.maximum(out, 0.0)
        return out

    best_err, best_pattern = np.inf, None
    for code in range(2 ** d_i):
        pattern = np.array([1 if (code >> k) & 1 else -1 for k in range(d_i)], dtype=np.float64)
        y = np.maximum(pre * pattern, 0.0)
        err = float(np.max(np.abs(apply_suffix(y) - truth)))
        if err < best_err:
            best_err, best_pattern = err, pattern
    return best_pattern.astype(int), best_err
