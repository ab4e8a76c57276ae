"""relupeel: query-only parameter extraction for dense ReLU networks.

Submodules:
  network     network containers, evaluation, linear-neighborhood algebra
  nnxio       .nnx weight files and signature-injection files
  oracle      black-box query interface with per-phase accounting
  netio       the TCP oracle protocol (serve / connect)
  critical    hinge finding along probe segments and per target neuron
  signatures  weight-row recovery up to a signed scale
  signs       the four sign-recovery methods
  pipeline    layer-by-layer extraction, verification, benchmarks
"""
from .network import (
    Architecture,
    Network,
    NeuronId,
    NeuronState,
    CollapsedAffine,
    ForwardPrefix,
    collapse_prefix,
    collapse_suffix,
    evaluate,
    generate_unitary_balanced,
    neuron_value,
    rank_profile,
    space_of_control,
)
from .nnxio import load_network, load_signatures, save_network, save_signatures
from .oracle import NetworkOracle, Oracle, QueryLedger
from .netio import RemoteOracle, connect, serve

__all__ = [
    "Architecture", "Network", "NeuronId", "NeuronState", "CollapsedAffine",
    "ForwardPrefix", "collapse_prefix", "collapse_suffix", "evaluate",
    "generate_unitary_balanced", "neuron_value", "rank_profile", "space_of_control",
    "load_network", "load_signatures", "save_network", "save_signatures",
    "NetworkOracle", "Oracle", "QueryLedger", "RemoteOracle", "connect", "serve",
]
