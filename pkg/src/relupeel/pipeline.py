"""Layer-by-layer extraction: rows, signs, peel, output layer, verify.

The extractor only talks to an Oracle. Ground-truth networks appear here
solely for scoring reports and for assumption-mode runs that inject known
rows (scrambled to an unknown signed scale) to isolate sign recovery.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import nnxio
from .critical import (
    ProbeSegment,
    find_critical_point_for_neuron,
    find_critical_points,
    verify_critical_point,
)
from .errors import (
    AmbiguousCluster,
    CriticalAtAnchor,
    InsufficientRank,
    NeuronAlwaysOff,
    NotFirstLayer,
    NumericallyAmbiguous,
    RankDeficient,
    ZeroDenominator,
)
from .network import Architecture, ForwardPrefix, Network
from .oracle import (
    NetworkOracle,
    Oracle,
    PHASE_CRITICAL,
    PHASE_OUTPUT_LAYER,
    PHASE_SIGNATURES,
    PHASE_VERIFY,
    QueryLedger,
)
from .signatures import cluster_and_merge, recover_deep_partial_signature, recover_layer1_signature
from .signs import (
    SignDecision,
    recover_signs_last_layer,
    recover_signs_soe,
    recover_signs_wiggle,
)

SEGMENTS_PER_NEURON = 8


@dataclass
class ExtractionConfig:
    """Everything one extraction run needs; file/CLI flags map onto this."""
    oracle: str | None = None            # tcp://host:port or file://victim.nnx
    architecture: tuple | None = None    # known by assumption when not in a victim file
    seed: int = 0
    samples: int = 200                   # wiggle votes per neuron
    rounds: int = 3
    low_confidence_fraction: float = 0.10
    workers: int = 1
    eval_samples: int = 10_000
    assume_signatures: str | None = None  # path to an injection file, or "victim"
    methods: dict = field(default_factory=dict)   # layer index -> method override
    outdir: str | None = None

    def validate(self):
        if self.samples < 1 or self.rounds < 1 or self.workers < 1:
            raise ValueError("samples, rounds, and workers must be positive")
        if not (0.0 < self.low_confidence_fraction < 1.0):
            raise ValueError("low_confidence_fraction must be in (0, 1)")
        for layer, name in self.methods.items():
            if name not in ("soe", "wiggle", "last-layer"):
                raise ValueError(f"unknown method {name!r} for layer {layer}")


@dataclass
class LayerReport:
    layer: int
    method: str
    neurons: int
    sign_accuracy: float | None
    always_off: int
    wall_clock_s: float
    queries: dict


@dataclass
class ExtractionReport:
    layers: list = field(default_factory=list)
    output_layer_queries: int = 0
    equivalence: dict = field(default_factory=dict)
    query_totals: dict = field(default_factory=dict)
    total_queries: int = 0
    wall_clock_s: float = 0.0
    decision_log: str | None = None
    partial: bool = False

    def to_dict(self):
        return {
            "layers": [vars(l) for l in self.layers],
            "output_layer_queries": self.output_layer_queries,
            "equivalence": self.equivalence,
            "query_totals": self.query_totals,
            "total_queries": self.total_queries,
            "wall_clock_s": self.wall_clock_s,
            "decision_log": self.decision_log,
            "partial": self.partial,
        }


def scrambled_hypothesis(net: Network, layer: int, upstream_scales=None):
    """Pivot-normalized rows and biases of one true layer; the folded-away
    pivot sign is exactly the per-neuron unknown an attacker faces.

    upstream_scales rescales each input channel first, for layers sitting on
    top of an already pivot-normalized (hypothesis-frame) prefix. Returns
    (rows, biases, true_signs, own_scales); feeding own_scales to the next
    layer keeps the whole stack consistent.
    """
    w = net.weights[layer - 1]
    b = net.biases[layer - 1]
    if upstream_scales is not None:
        w = w / np.asarray(upstream_scales)[None, :]
    rows = np.empty_like(w)
    biases = np.empty_like(b)
    true_signs = np.empty(w.shape[0], dtype=int)
    own_scales = np.empty(w.shape[0])
    for j in range(w.shape[0]):
        piv = int(np.argmax(np.abs(w[j])))
        rows[j] = w[j] / w[j][piv]
        biases[j] = b[j] / w[j][piv]
        true_signs[j] = 1 if w[j][piv] > 0 else -1
        own_scales[j] = 1.0 / abs(w[j][piv])
    return rows, biases, true_signs, own_scales


def hypothesis_frame_rows(net: Network):
    """All hidden layers as an attacker's hypothesis would hold them.

    Layer 1 rows are pivot-normalized true rows; each deeper layer is
    normalized against the pivot-scaled outputs of the one below. Returns a
    list of (rows, biases, true_signs) triples.
    """
    scales = np.ones(net.input_dim)
    out = []
    for layer in range(1, net.r + 1):
        rows, biases, signs, scales = scrambled_hypothesis(net, layer, upstream_scales=scales)
        out.append((rows, biases, signs))
    return out


def suffix_in_hypothesis_frame(net: Network, layer: int):
    """Layers above `layer`, rescaled to consume that layer's normalized rows
    (prefix below `layer` assumed exact)."""
    _, _, _, scales = scrambled_hypothesis(net, layer)
    suffix_w = [net.weights[layer] / scales[None, :]] + [m.copy() for m in net.weights[layer + 1:]]
    suffix_b = [b.copy() for b in net.biases[layer:]]
    return suffix_w, suffix_b


def match_neurons_functionally(prefix: ForwardPrefix, rows, biases, victim: Network,
                               layer: int, n_probe=256, rng=None):
    """(victim index, signed scale) per hypothesis row, by comparing the
    pre-activation functions on a probe batch. White-box scoring only."""
    if rng is None:
        rng = np.random.default_rng(0xACC0)
    xs = rng.normal(size=(n_probe, prefix.input_dim))
    v_hat = prefix.forward_batch(xs) @ np.asarray(rows).T + np.asarray(biases)
    y = xs
    for li in range(layer - 1):
        y = np.maximum(y @ victim.weights[li].T + victim.biases[li], 0.0)
    v_true = y @ victim.weights[layer - 1].T + victim.biases[layer - 1]
    matches = []
    for j in range(v_hat.shape[1]):
        h = v_hat[:, j]
        denom = float(h @ h)
        if denom == 0.0:
            matches.append((0, 0.0))
            continue
        scales = (v_true.T @ h) / denom
        resid = np.linalg.norm(v_true - np.outer(h, scales), axis=0)
        k = int(np.argmin(resid))
        matches.append((k, float(scales[k])))
    return matches


def sign_accuracy(decisions, prefix, rows, biases, victim, layer):
    matches = match_neurons_functionally(prefix, rows, biases, victim, layer)
    ok = 0
    scored = 0
    for d in decisions:
        if d.sign == 0:
            continue
        scored += 1
        _, scale = matches[d.neuron]
        if d.sign == (1 if scale > 0 else -1):
            ok += 1
    return ok, scored


def save_injection_file(victim: Network, path):
    """Write a signature-injection file: per hidden layer, hypothesis-frame
    rows with the bias appended as the last column."""
    mats = []
    for rows, biases, _ in hypothesis_frame_rows(victim):
        mats.append(np.hstack([rows, np.asarray(biases)[:, None]]))
    nnxio.save_signatures(mats, path, meta={"provenance": "injection"})


def load_injected_rows(cfg: ExtractionConfig, victim: Network | None, layer: int,
                       frame_cache: dict):
    if cfg.assume_signatures == "victim":
        if victim is None:
            raise ValueError("assume_signatures='victim' needs a file:// victim oracle")
        if "victim" not in frame_cache:
            frame_cache["victim"] = hypothesis_frame_rows(victim)
        rows, biases, _ = frame_cache["victim"][layer - 1]
        return rows.copy(), biases.copy()
    if "file" not in frame_cache:
        frame_cache["file"] = nnxio.load_signatures(cfg.assume_signatures)
    m = frame_cache["file"][layer - 1]
    return m[:, :-1].copy(), m[:, -1].copy()


def _cluster_row_bias(prefix, cluster):
    merged = cluster.merged
    row = np.zeros(prefix.output_dim)
    row[merged.support] = merged.coords[merged.support]
    feats = np.stack([prefix.forward(cp.x_star) for cp, _ in cluster.members])
    bias = float(np.median(-(feats @ row)))
    return row, bias


def _verify_cluster(oracle, prefix, cluster, rng, first_layer, tries=3):
    """A real row reproduces its signature at a fresh targeted hinge.

    A deeper neuron can masquerade as a repeated row when two of its hinges
    share one upstream activation pattern. A first-layer hinge is a globally
    flat hyperplane, so random points projected onto the candidate plane must
    all be genuine breaks; an impostor's surface leaves its region somewhere.
    Deeper candidates are re-checked at a fresh targeted hinge instead.
    """
    row, bias = _cluster_row_bias(prefix, cluster)
    if first_layer:
        # a hinge can be legitimately invisible at single plane points (every
        # downstream path blocked), so the flatness judgement is a majority
        # over many points, not a single miss
        norm2 = float(row @ row)
        if norm2 == 0.0:
            return False
        confirmed = missed = 0
        for _ in range(12):
            z = rng.normal(size=prefix.input_dim)
            p = z - ((row @ z + bias) / norm2) * row
            eps = 1e-4 * max(1.0, float(np.linalg.norm(p)))
            with oracle.phase(PHASE_CRITICAL):
                ok, m_l, m_r = verify_critical_point(oracle, p, row / np.sqrt(norm2), eps)
            if ok:
                confirmed += 1
                if confirmed >= 4:
                    break
            else:
                with oracle.phase(PHASE_CRITICAL):
                    nearby = find_critical_points(
                        oracle, ProbeSegment(p - eps * row / np.sqrt(norm2),
                                             p + eps * row / np.sqrt(norm2)),
                        budget=5)
                if not nearby.points and not nearby.exhausted:
                    missed += 1
                    if missed >= 6:
                        return False
        if confirmed < 4:
            return False
    for _ in range(tries):
        try:
            with oracle.phase(PHASE_CRITICAL):
                cp = find_critical_point_for_neuron(oracle, prefix, row, bias, rng,
                                                    budget=16)
            with oracle.phase(PHASE_SIGNATURES):
                if first_layer:
                    fresh = recover_layer1_signature(oracle, cp)
                else:
                    fresh = recover_deep_partial_signature(oracle, prefix, cp, rng=rng)
        except (NeuronAlwaysOff,):
            return False
        except (NotFirstLayer, ZeroDenominator, RankDeficient, CriticalAtAnchor):
            continue
        return cluster.merged.consistent_with(fresh)
    return False


def recover_layer_rows(oracle: Oracle, prefix: ForwardPrefix, width: int, rng,
                       known_dead=(), max_segments=None, verify_clusters=False):
    """Rows and biases (signed scale unknown) of the next layer, from scratch.

    Probes random segments for hinges, recovers a row per hinge, and clusters
    until `width` repeated rows have every coordinate (dead upstream
    coordinates excepted). With verify_clusters (needed whenever deeper
    layers exist), each candidate row must also reproduce itself at a fresh
    targeted hinge before it counts. Returns (rows, biases, clusters_used).
    """
    if max_segments is None:
        max_segments = SEGMENTS_PER_NEURON * width
    first_layer = prefix.depth == 0
    need_mask = np.ones(prefix.output_dim, dtype=bool)
    for k in known_dead:
        need_mask[k] = False
    candidates = []
    rejected = []
    done = []
    for seg_idx in range(max_segments):
        x1 = rng.normal(size=prefix.input_dim)
        x2 = rng.normal(size=prefix.input_dim)
        with oracle.phase(PHASE_CRITICAL):
            found = find_critical_points(oracle, ProbeSegment(x1, x2))
        with oracle.phase(PHASE_SIGNATURES):
            for cp in found:
                try:
                    if first_layer:
                        sig = recover_layer1_signature(oracle, cp)
                    else:
                        sig = recover_deep_partial_signature(oracle, prefix, cp, rng=rng)
                except (NotFirstLayer, ZeroDenominator, RankDeficient, CriticalAtAnchor):
                    continue
                candidates.append((cp, sig))
        if len(candidates) < 2 * width and seg_idx < max_segments - 1:
            continue
        try:
            clusters = cluster_and_merge(candidates)
        except AmbiguousCluster:
            continue
        eligible = [c for c in clusters
                    if len(c) >= 2 and bool(np.all(c.merged.support[need_mask]))
                    and not any(c.merged.consistent_with(bad) for bad in rejected)]
        eligible.sort(key=len, reverse=True)
        if len(eligible) < width:
            continue
        if not verify_clusters:
            done = eligible[:width]
            break
        done = []
        for c in eligible:
            if len(done) == width:
                break
            if _verify_cluster(oracle, prefix, c, rng, first_layer):
                done.append(c)
            else:
                rejected.append(c.merged)
        if len(done) == width:
            break
    if len(done) < width:
        raise RankDeficient(f"recovered only {len(done)} of {width} rows "
                            f"after {max_segments} segments")
    rows = np.zeros((width, prefix.output_dim))
    biases = np.zeros(width)
    for j, cluster in enumerate(done):
        rows[j], biases[j] = _cluster_row_bias(prefix, cluster)
    return rows, biases, done


def choose_method(cfg: ExtractionConfig, prefix: ForwardPrefix, layer: int, r: int,
                  width: int, rng, tries=8):
    if layer in cfg.methods:
        return cfg.methods[layer]
    for _ in range(tries):
        x = rng.normal(size=prefix.input_dim)
        try:
            basis = prefix.control_basis(x)
        except CriticalAtAnchor:
            continue
        if basis.shape[1] >= width:
            return "soe"
        break
    return "last-layer" if layer == r else "wiggle"


def run_sign_method(oracle, prefix, rows, biases, method, cfg, rng, starts=None):
    if method == "soe":
        decisions = recover_signs_soe(oracle, prefix, rows, biases, rng)
        return decisions, None
    if method == "last-layer":
        decisions, out_bias, _ = recover_signs_last_layer(oracle, prefix, rows, biases, rng)
        return decisions, out_bias
    decisions, _alpha0 = recover_signs_wiggle(
        oracle, prefix, rows, biases, samples=cfg.samples, rounds=cfg.rounds,
        low_fraction=cfg.low_confidence_fraction, seed=cfg.seed + 7919 * prefix.depth,
        workers=cfg.workers, starts=starts)
    return decisions, None


def recover_output_layer(oracle: Oracle, prefix: ForwardPrefix, rng, extra=10):
    """Least-squares fit of the final affine layer against the peeled prefix."""
    d_out = oracle.output_dim
    n = prefix.output_dim + d_out + extra
    xs = rng.normal(size=(n, prefix.input_dim))
    feats = prefix.forward_batch(xs)
    with oracle.phase(PHASE_OUTPUT_LAYER):
        outs = oracle.query_batch(xs)
    design = np.hstack([feats, np.ones((n, 1))])
    sol, _, rank, _ = np.linalg.lstsq(design, outs, rcond=None)
    if rank < design.shape[1]:
        # dead channels (always-off neurons) make exact rank loss legitimate;
        # the minimum-norm solution zeroes their columns, which is the intent
        pass
    return sol[:-1].T.copy(), sol[-1].copy()


def verify_equivalence(oracle: Oracle, hypothesis: Network, n_samples=10_000, rng=None):
    """Deviation stats on fresh inputs: unit normal plus pixel-like uniform."""
    if rng is None:
        rng = np.random.default_rng(0x5EED)
    if oracle.input_dim != hypothesis.input_dim or oracle.output_dim != hypothesis.output_dim:
        raise ValueError("oracle and hypothesis dimensions differ")
    stats = {}
    devs_all = []
    for name, draw in (("normal", lambda n: rng.normal(size=(n, oracle.input_dim))),
                       ("pixel", lambda n: rng.uniform(0.0, 1.0, size=(n, oracle.input_dim)))):
        xs = draw(n_samples)
        with oracle.phase(PHASE_VERIFY):
            truth = oracle.query_batch(xs)
        # row-by-row, matching the oracle's own arithmetic path exactly
        guess = np.stack([hypothesis.evaluate(x) for x in xs])
        dev = np.max(np.abs(truth - guess), axis=1) / (1.0 + np.max(np.abs(truth), axis=1))
        devs_all.append(dev)
        stats[name] = {"max": float(dev.max()), "mean": float(dev.mean())}
    both = np.concatenate(devs_all)
    stats["combined"] = {"max": float(both.max()), "mean": float(both.mean())}
    return stats


def write_decision_log(path, per_layer_decisions):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "neuronID", "s_minus", "s_plus", "alpha", "sign",
                         "t_crit", "t_wiggle", "t_total"])
        for layer, decisions in per_layer_decisions:
            for d in decisions:
                writer.writerow([layer, d.neuron, d.s_minus, d.s_plus,
                                 f"{d.alpha:.4f}", d.sign,
                                 f"{d.t_crit:.3f}", f"{d.t_wiggle:.3f}", f"{d.t_total:.3f}"])


def extract(cfg: ExtractionConfig, oracle: Oracle | None = None,
            victim: Network | None = None):
    """Full attack: recover every hidden layer then fit the output layer.

    Returns (hypothesis Network, ExtractionReport). When the oracle points at
    a victim file (or one is passed directly), per-layer sign accuracy is
    scored against it in the report.
    """
    cfg.validate()
    t_start = time.time()
    if oracle is None:
        from .netio import connect

        oracle = connect(cfg.oracle)
        if victim is None and cfg.oracle and cfg.oracle.startswith("file://"):
            victim = nnxio.load_network(cfg.oracle[len("file://"):])
    if cfg.architecture is not None:
        arch = Architecture(tuple(cfg.architecture))
    elif victim is not None:
        arch = victim.arch
    else:
        raise ValueError("architecture unknown: pass cfg.architecture or a victim file")
    if arch.input_dim != oracle.input_dim or arch.output_dim != oracle.output_dim:
        raise ValueError("assumed architecture conflicts with oracle dimensions")

    rng = np.random.default_rng(cfg.seed)
    hyp_w, hyp_b = [], []
    report = ExtractionReport()
    per_layer_decisions = []
    dead_below = []
    partial = False
    frame_cache = {}

    for layer in range(1, arch.r + 1):
        t_layer = time.time()
        snap_before = oracle.ledger.snapshot()
        prefix = ForwardPrefix(hyp_w, hyp_b, arch.input_dim)
        width = arch.dims[layer]
        try:
            if cfg.assume_signatures:
                rows, biases = load_injected_rows(cfg, victim, layer, frame_cache)
            else:
                rows, biases, _ = recover_layer_rows(oracle, prefix, width, rng,
                                                     known_dead=dead_below,
                                                     verify_clusters=layer < arch.r)
            method = choose_method(cfg, prefix, layer, arch.r, width, rng)
            try:
                decisions, out_bias = run_sign_method(oracle, prefix, rows, biases,
                                                      method, cfg, rng)
            except (InsufficientRank, NumericallyAmbiguous):
                if method == "soe":
                    method = "last-layer" if layer == arch.r else "wiggle"
                    decisions, out_bias = run_sign_method(oracle, prefix, rows, biases,
                                                          method, cfg, rng)
                else:
                    raise
        except Exception as exc:  # commit nothing more; keep the partial stack
            partial = True
            report.layers.append(LayerReport(
                layer=layer, method="failed", neurons=width, sign_accuracy=None,
                always_off=0, wall_clock_s=time.time() - t_layer,
                queries={"error": str(exc)}))
            break
        per_layer_decisions.append((layer, decisions))

        signs = np.array([d.sign for d in decisions])
        dead_here = [d.neuron for d in decisions if d.sign == 0]
        if dead_here:
            partial = partial or any(d.unrecoverable for d in decisions)
        commit = np.where(signs == 0, 1, signs).astype(np.float64)
        hyp_w.append(rows * commit[:, None])
        hyp_b.append(biases * commit)
        dead_below = dead_here

        acc = None
        if victim is not None:
            ok, scored = sign_accuracy(decisions, prefix, rows, biases, victim, layer)
            acc = ok / scored if scored else None
        snap_after = oracle.ledger.snapshot()
        deltas = {k: snap_after.get(k, 0) - snap_before.get(k, 0)
                  for k in set(snap_before) | set(snap_after)}
        report.layers.append(LayerReport(
            layer=layer, method=method, neurons=width, sign_accuracy=acc,
            always_off=sum(1 for d in decisions if d.always_off),
            wall_clock_s=time.time() - t_layer,
            queries={k: v for k, v in sorted(deltas.items()) if v}))

    prefix = ForwardPrefix(hyp_w, hyp_b, arch.input_dim)
    before = oracle.ledger.total
    w_out, b_out = recover_output_layer(oracle, prefix, rng)
    for k in dead_below:
        w_out[:, k] = 0.0
    report.output_layer_queries = oracle.ledger.total - before
    hypothesis = Network(hyp_w + [w_out], hyp_b + [b_out],
                         meta={"provenance": "extracted", "seed": cfg.seed})

    eval_rng = np.random.default_rng((cfg.seed, 0xE0A1))
    report.equivalence = verify_equivalence(oracle, hypothesis, cfg.eval_samples, eval_rng)
    report.query_totals = oracle.ledger.snapshot()
    report.total_queries = oracle.ledger.total
    report.wall_clock_s = time.time() - t_start
    report.partial = partial

    if cfg.outdir:
        import os

        os.makedirs(cfg.outdir, exist_ok=True)
        nnxio.save_network(hypothesis, os.path.join(cfg.outdir, "hypothesis.nnx"))
        log_path = os.path.join(cfg.outdir, "decisions.csv")
        write_decision_log(log_path, per_layer_decisions)
        report.decision_log = log_path
        with open(os.path.join(cfg.outdir, "report.json"), "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
    return hypothesis, report


def fit_power_law(sizes, times):
    """Exponent p of t ~ C * d^p via least squares in log-log space."""
    lx = np.log(np.asarray(sizes, dtype=np.float64))
    ly = np.log(np.asarray(times, dtype=np.float64))
    p, _c = np.polyfit(lx, ly, 1)
    return float(p)


def bench_scaling(input_dims=(256, 512, 1024), layer=3, neurons=2, samples=25,
                  seed=0, hidden_width=256, hidden_layers=8, outputs=10,
                  csv_path=None, plot_path=None):
    """Per-neuron wiggle sign-recovery time at one hidden layer vs input width.

    Generates one victim per input width (generation excluded from timing),
    times sign recovery for a few neurons, and fits a power law. Returns
    (rows, exponent) where rows are (d0, seconds_per_neuron).
    """
    rows_out = []
    for d0 in input_dims:
        dims = (d0,) + (hidden_width,) * hidden_layers + (outputs,)
        net = None
        from .network import generate_unitary_balanced

        net = generate_unitary_balanced(Architecture(dims), seed=seed, calibration=2000)
        oracle = NetworkOracle(net)
        prefix = ForwardPrefix(net.weights[:layer - 1], net.biases[:layer - 1], d0)
        rows, biases, _, _ = scrambled_hypothesis(net, layer)
        idx = list(range(neurons))
        t0 = time.perf_counter()
        recover_signs_wiggle(oracle, prefix, rows[idx], biases[idx],
                             samples=samples, rounds=1, seed=seed)
        per_neuron = (time.perf_counter() - t0) / len(idx)
        rows_out.append((d0, per_neuron))
    exponent = fit_power_law([r[0] for r in rows_out], [r[1] for r in rows_out])
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["d0", "seconds_per_neuron"])
            writer.writerows(rows_out)
    if plot_path:
        with open(plot_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["d0", "seconds_per_neuron", "fit_seconds"])
            c = np.exp(np.log(rows_out[0][1]) - exponent * np.log(rows_out[0][0]))
            for d0, t in rows_out:
                writer.writerow([d0, t, c * d0 ** exponent])
    return rows_out, exponent


def parse_config_file(path):
    """Flat `key = value` text file; '#' starts a comment."""
    values = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {line!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key] = val
    return values
