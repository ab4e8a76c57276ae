import numpy as np
import pytest

import relupeel as rp
from relupeel.oracle import NetworkOracle
from relupeel.pipeline import hypothesis_frame_rows


def make_net(weights, biases):
    return rp.Network([np.asarray(w, dtype=float) for w in weights],
                      [np.asarray(b, dtype=float) for b in biases])


def committed_prefix(net, upto_layer):
    """Hypothesis prefix with true signs resolved (pivot-normalized frame)."""
    frames = hypothesis_frame_rows(net)
    ws, bs = [], []
    for rows, biases, signs in frames[:upto_layer]:
        s = np.asarray(signs, dtype=float)
        ws.append(np.asarray(rows) * s[:, None])
        bs.append(np.asarray(biases) * s)
    return rp.ForwardPrefix(ws, bs, net.input_dim)


def layer_frame(net, layer):
    """(prefix below layer, rows, biases, true_signs) in the hypothesis frame."""
    frames = hypothesis_frame_rows(net)
    rows, biases, signs = frames[layer - 1]
    return committed_prefix(net, layer - 1), np.asarray(rows), np.asarray(biases), np.asarray(signs)


@pytest.fixture
def rng():
    return np.random.default_rng(0xBEEF)


@pytest.fixture
def tiny_net():
    # one hidden neuron: f(x) = 2 * relu(x - 1) + 3
    return make_net([[[1.0]], [[2.0]]], [[-1.0], [3.0]])


@pytest.fixture
def identity_net():
    return make_net([np.eye(2), np.eye(2)], [np.zeros(2), np.zeros(2)])


def oracle_for(net):
    return NetworkOracle(net)
