"""Command-line front end.

Subcommands: generate, serve, extract, signs, verify, bench.
Exit codes: 0 success, 2 partial extraction, 3 oracle unreachable.
The NNX_ORACLE environment variable supplies a default --oracle endpoint.
"""
from __future__ import annotations

import argparse
import json
import os
import signal
import sys

import numpy as np

from . import netio, nnxio, pipeline
from .errors import HandshakeError, TransportFailure
from .network import Architecture, ForwardPrefix, Network, generate_unitary_balanced
from .oracle import NetworkOracle
from .signs import recover_signs_last_layer, recover_signs_soe, recover_signs_wiggle

EXIT_OK = 0
EXIT_PARTIAL = 2
EXIT_NO_ORACLE = 3


def _parse_dims(text):
    return tuple(int(d) for d in text.replace("-", ",").split(",") if d)


def _connect(endpoint):
    try:
        return netio.connect(endpoint)
    except (HandshakeError, TransportFailure, OSError, ValueError) as exc:
        print(f"error: cannot reach oracle: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_NO_ORACLE)


def cmd_generate(args):
    arch = Architecture(_parse_dims(args.arch))
    net = generate_unitary_balanced(arch, seed=args.seed, calibration=args.calibration)
    nnxio.save_network(net, args.out)
    print(f"wrote {arch} network ({net.param_count()} parameters) to {args.out}")
    return EXIT_OK


def cmd_serve(args):
    path = args.serve or args.network
    if not path:
        print("error: serve needs a .nnx file", file=sys.stderr)
        return EXIT_NO_ORACLE
    net = nnxio.load_network(path)
    server = netio.serve(net, host=args.host, port=args.port)
    stop = lambda *_: server.shutdown()
    signal.signal(signal.SIGINT, stop)
    signal.signal(signal.SIGTERM, stop)
    print(f"serving {path} ({net.arch}) on {server.endpoint}")
    server.serve_forever()
    print(f"served {server.ledger.total} queries")
    return EXIT_OK


def _build_config(args):
    cfg = pipeline.ExtractionConfig()
    if getattr(args, "config", None):
        raw = pipeline.parse_config_file(args.config)
        casts = {
            "oracle": str, "seed": int, "samples": int, "rounds": int,
            "low_confidence_fraction": float, "workers": int, "eval_samples": int,
            "assume_signatures": str, "outdir": str,
        }
        for key, val in raw.items():
            if key == "architecture":
                cfg.architecture = _parse_dims(val)
            elif key.startswith("method."):
                cfg.methods[int(key.split(".", 1)[1])] = val
            elif key in casts:
                setattr(cfg, key, casts[key](val))
            else:
                raise SystemExit(f"unknown config key {key!r}")
    for key in ("oracle", "seed", "samples", "rounds", "workers",
                "eval_samples", "assume_signatures", "outdir"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    if getattr(args, "arch", None):
        cfg.architecture = _parse_dims(args.arch)
    for spec in getattr(args, "method", None) or []:
        layer, name = spec.split("=", 1)
        cfg.methods[int(layer)] = name
    return cfg


def cmd_extract(args):
    cfg = _build_config(args)
    oracle = _connect(cfg.oracle)
    victim = None
    if cfg.oracle and cfg.oracle.startswith("file://"):
        victim = nnxio.load_network(cfg.oracle[len("file://"):])
    hypothesis, report = pipeline.extract(cfg, oracle=oracle, victim=victim)
    print(json.dumps(report.to_dict(), indent=2))
    if cfg.outdir:
        print(f"hypothesis and reports written to {cfg.outdir}/")
    return EXIT_PARTIAL if report.partial else EXIT_OK


def cmd_signs(args):
    """Sign recovery for one layer with injected rows (assumption mode)."""
    endpoint = args.oracle or os.environ.get(netio.ENV_ENDPOINT)
    if not endpoint or not endpoint.startswith("file://"):
        print("error: signs needs a file:// victim for assumption mode", file=sys.stderr)
        return EXIT_NO_ORACLE
    victim = nnxio.load_network(endpoint[len("file://"):])
    oracle = NetworkOracle(victim)
    layer = args.layer
    frames = pipeline.hypothesis_frame_rows(victim)
    rows, biases, true_signs = frames[layer - 1]
    prefix_w, prefix_b = [], []
    for rows_l, biases_l, signs_l in frames[:layer - 1]:
        s = np.asarray(signs_l, dtype=np.float64)
        prefix_w.append(np.asarray(rows_l) * s[:, None])
        prefix_b.append(np.asarray(biases_l) * s)
    prefix = ForwardPrefix(prefix_w, prefix_b, victim.input_dim)
    rng = np.random.default_rng(args.seed)

    method = args.method_name
    if method == "auto":
        method = pipeline.choose_method(pipeline.ExtractionConfig(), prefix, layer,
                                        victim.r, rows.shape[0], rng)
    if method == "soe":
        decisions = recover_signs_soe(oracle, prefix, rows, biases, rng)
    elif method == "last-layer":
        decisions, _, _ = recover_signs_last_layer(oracle, prefix, rows, biases, rng)
    else:
        decisions, _ = recover_signs_wiggle(oracle, prefix, rows, biases,
                                            samples=args.samples, seed=args.seed,
                                            workers=args.workers)
    correct = sum(1 for d in decisions if d.sign == true_signs[d.neuron])
    print(f"layer {layer} via {method}: {correct}/{len(decisions)} signs correct")
    print(f"queries by phase: {oracle.ledger.snapshot()}")
    if args.out:
        pipeline.write_decision_log(args.out, [(layer, decisions)])
        print(f"decision log written to {args.out}")
    return EXIT_OK if correct == len(decisions) else EXIT_PARTIAL


def cmd_verify(args):
    oracle = _connect(args.oracle)
    hypothesis = nnxio.load_network(args.hypothesis)
    stats = pipeline.verify_equivalence(oracle, hypothesis, n_samples=args.eval_samples,
                                        rng=np.random.default_rng(args.seed))
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def cmd_bench(args):
    rows, exponent = pipeline.bench_scaling(
        input_dims=_parse_dims(args.dims), layer=args.layer, neurons=args.neurons,
        samples=args.samples, seed=args.seed, csv_path=args.out, plot_path=args.plot)
    for d0, t in rows:
        print(f"d0={d0:5d}  {t:.3f} s/neuron")
    print(f"power-law exponent: {exponent:.2f}")
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="relupeel",
                                     description="parameter extraction for dense ReLU networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a random balanced victim to .nnx")
    p.add_argument("--arch", required=True, help="comma-separated widths, e.g. 784,128,1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--calibration", type=int, default=10_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("serve", help="serve a .nnx network as a TCP oracle")
    p.add_argument("network", nargs="?", help=".nnx file")
    p.add_argument("--serve", help=".nnx file (alias for the positional)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("extract", help="run the full extraction attack")
    p.add_argument("--oracle", help="tcp://host:port or file://victim.nnx")
    p.add_argument("--arch", help="assumed architecture when the oracle is remote")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--eval-samples", dest="eval_samples", type=int)
    p.add_argument("--assume-signatures", dest="assume_signatures",
                   help="'victim' or a signature-injection file")
    p.add_argument("--method", action="append", help="layer=method override, repeatable")
    p.add_argument("--outdir")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("signs", help="single-layer sign recovery, assumption mode")
    p.add_argument("--oracle", help="file://victim.nnx")
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--method", dest="method_name", default="auto",
                   choices=["auto", "soe", "wiggle", "last-layer"])
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="decision log CSV path")
    p.set_defaults(func=cmd_signs)

    p = sub.add_parser("verify", help="deviation of a hypothesis vs the oracle")
    p.add_argument("--oracle", help="tcp://host:port or file://victim.nnx")
    p.add_argument("--hypothesis", required=True)
    p.add_argument("--eval-samples", dest="eval_samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="wiggle runtime scaling vs input width")
    p.add_argument("--dims", default="256,512,1024")
    p.add_argument("--layer", type=int, default=3)
    p.add_argument("--neurons", type=int, default=2)
    p.add_argument("--samples", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path")
    p.add_argument("--plot", help="plot-data CSV path")
    p.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
