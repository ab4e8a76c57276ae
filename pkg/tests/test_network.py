import numpy as np
import pytest

import relupeel as rp
from relupeel.errors import CriticalAtAnchor
from conftest import make_net


def reference_forward(net, x):
    """Independent evaluator straight from the layer definition."""
    y = np.asarray(x, dtype=np.float64)
    r = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        y = w @ y + b
        if i < r:
            y = np.maximum(y, 0.0)
    return y


def test_identity_net_kills_negative_coordinate(identity_net):
    assert np.array_equal(identity_net.evaluate([1.0, -1.0]), [1.0, 0.0])


def test_single_neuron_affine_output(tiny_net):
    assert tiny_net.evaluate([5.0]) == pytest.approx([11.0], abs=0.0)


def test_evaluate_matches_reference_bitwise(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((9, 7, 5, 3)), seed=4)
    for _ in range(50):
        x = rng.normal(size=9)
        assert np.array_equal(net.evaluate(x), reference_forward(net, x))


def test_evaluate_rejects_bad_shape(tiny_net):
    with pytest.raises(ValueError):
        tiny_net.evaluate([1.0, 2.0])
    with pytest.raises(ValueError):
        tiny_net.evaluate([np.nan])


def test_network_validates_construction():
    with pytest.raises(ValueError):
        rp.Network([np.ones((2, 3)), np.ones((4, 4))], [np.zeros(2), np.zeros(4)])
    with pytest.raises(ValueError):
        rp.Network([np.full((1, 1), np.inf)], [np.zeros(1)])


def test_neuron_value_exactly_critical():
    net = make_net([[[1.0, 1.0]], [[1.0]]], [[-1.0], [0.0]])
    assert net.neuron_value(rp.NeuronId(1, 0), [0.5, 0.5]) == 0.0
    assert net.neuron_state(rp.NeuronId(1, 0), [0.5, 0.5]) is rp.NeuronState.CRITICAL


def test_neuron_value_second_layer_identity(identity_net):
    assert identity_net.neuron_value(rp.NeuronId(1, 0), [1.0, -1.0]) == 1.0


def test_neuron_value_matches_instrumented_pass(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((6, 8, 4, 2)), seed=11)
    for _ in range(20):
        x = rng.normal(size=6)
        pres = net.hidden_preactivations(x)
        for layer in (1, 2):
            for idx in range(net.arch.dims[layer]):
                got = net.neuron_value(rp.NeuronId(layer, idx), x)
                assert got == pres[layer - 1][idx]


def test_collapse_prefix_all_active_is_first_layer():
    w1 = np.array([[0.5, 0.2], [-0.1, 0.4]])
    b1 = np.array([3.0, 2.0])          # huge biases keep both neurons active at 0
    net = make_net([w1, np.eye(2)], [b1, np.zeros(2)])
    ca = rp.collapse_prefix(net, 1, np.zeros(2))
    assert np.array_equal(ca.gamma, w1)
    assert np.array_equal(ca.beta, b1)


def test_collapse_prefix_masks_inactive_row():
    w1 = np.array([[1.0, 0.0], [0.0, 1.0]])
    b1 = np.array([1.0, -5.0])         # neuron 1 inactive near the origin
    net = make_net([w1, np.eye(2)], [b1, np.zeros(2)])
    ca = rp.collapse_prefix(net, 1, np.array([0.3, 0.4]))
    assert np.array_equal(ca.gamma[1], [0.0, 0.0])
    assert ca.masks[0].tolist() == [True, False]


def test_collapse_prefix_linear_locally(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((10, 12, 9, 11, 2)), seed=3)
    x = rng.normal(size=10)
    ca = rp.collapse_prefix(net, 3, x)
    prefix = net.prefix(3)
    states = [m.copy() for m in ca.masks]
    checked = 0
    for _ in range(100):
        d = rng.normal(size=10) * 1e-4
        pres = prefix.preactivations(x + d)
        if any((z > 0).tolist() != m.tolist() for z, m in zip(pres, states)):
            continue
        lhs = prefix.forward(x + d) - prefix.forward(x)
        pred = ca.gamma @ d
        assert np.linalg.norm(lhs - pred) <= 1e-9 * max(np.linalg.norm(pred), 1e-12)
        checked += 1
    assert checked > 50


def test_collapse_prefix_raises_on_critical_anchor():
    net = make_net([[[1.0, 1.0]], [[1.0]]], [[-1.0], [0.0]])
    with pytest.raises(CriticalAtAnchor):
        rp.collapse_prefix(net, 1, np.array([0.5, 0.5]))


def test_first_difference_composition(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((8, 10, 7, 3)), seed=9)
    for _ in range(30):
        x = rng.normal(size=8)
        try:
            ca = rp.collapse_prefix(net, net.r, x)
            suf = rp.collapse_suffix(net, net.r + 1, x)
        except CriticalAtAnchor:
            continue
        d = rng.normal(size=8) * 1e-6
        try:
            ca2 = rp.collapse_prefix(net, net.r, x + d)
        except CriticalAtAnchor:
            continue
        if any(a.tolist() != b.tolist() for a, b in zip(ca.masks, ca2.masks)):
            continue
        lhs = net.evaluate(x + d) - net.evaluate(x)
        pred = suf.gamma @ (ca.gamma @ d)
        assert np.linalg.norm(lhs - pred) <= 1e-8 * max(np.linalg.norm(pred), 1e-15)


def test_relu_second_difference_vanishes_on_linear_pieces(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((7, 9, 6, 1)), seed=13)
    hits = 0
    for _ in range(200):
        x = rng.normal(size=7)
        u = rng.normal(size=7)
        u /= np.linalg.norm(u)
        eps = 1e-7
        try:
            m0 = rp.collapse_prefix(net, net.r, x).masks
            m1 = rp.collapse_prefix(net, net.r, x - eps * u).masks
            m2 = rp.collapse_prefix(net, net.r, x + eps * u).masks
        except CriticalAtAnchor:
            continue
        same = all(a.tolist() == b.tolist() == c.tolist() for a, b, c in zip(m0, m1, m2))
        if not same:
            continue
        g = net.evaluate(x + eps * u)[0] - 2 * net.evaluate(x)[0] + net.evaluate(x - eps * u)[0]
        assert abs(g) <= 1e-10 * max(abs(net.evaluate(x)[0]), 1.0)
        hits += 1
    assert hits > 100


def test_space_of_control_full_rank_layer():
    net = rp.generate_unitary_balanced(rp.Architecture((12, 8, 4, 2)), seed=5)
    # anchor with every first-layer neuron active
    w, b = net.weights[0], net.biases[0]
    x, *_ = np.linalg.lstsq(w, np.ones(8) - b, rcond=None)
    assert np.all(w @ x + b > 0)
    _, d = rp.space_of_control(net, 2, x)
    assert d == 8


def test_space_of_control_counts_masked_rows(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((12, 8, 4, 2)), seed=6)
    for _ in range(10):
        x = rng.normal(size=12)
        try:
            ca = rp.collapse_prefix(net, 1, x)
        except CriticalAtAnchor:
            continue
        active = int(ca.masks[0].sum())
        expect = np.linalg.matrix_rank(ca.gamma)
        _, d = rp.space_of_control(net, 2, x)
        assert d == expect == min(active, 12)


def test_rank_profile_non_increasing(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((10, 14, 14, 14, 14, 2)), seed=8)
    for _ in range(20):
        x = rng.normal(size=10)
        try:
            ranks = rp.rank_profile(net, x)
        except CriticalAtAnchor:
            continue
        assert all(a >= b for a, b in zip(ranks, ranks[1:]))
        # the profile must agree with ranks computed from the full collapse
        for layer in range(1, net.r + 1):
            assert ranks[layer - 1] == rp.collapse_prefix(net, layer, x).rank()


def test_generator_unit_rows_and_determinism():
    arch = rp.Architecture((20, 16, 16, 4))
    a = rp.generate_unitary_balanced(arch, seed=7)
    b = rp.generate_unitary_balanced(arch, seed=7)
    c = rp.generate_unitary_balanced(arch, seed=8)
    for w in a.weights:
        assert np.max(np.abs(np.linalg.norm(w, axis=1) - 1.0)) <= 1e-12
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases))
    assert not all(np.array_equal(x, y) for x, y in zip(a.weights, c.weights))
    assert np.array_equal(a.biases[-1], np.zeros(4))


def test_generator_balanced_activity(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((20, 24, 24, 3)), seed=2)
    xs = rng.normal(size=(10_000, 20))
    y = xs
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = y @ w.T + b
        rates = (z > 0).mean(axis=0)
        assert np.all(np.abs(rates - 0.5) <= 0.05)
        y = np.maximum(z, 0.0)


def test_degenerate_width_one_everywhere():
    net = rp.generate_unitary_balanced(rp.Architecture((1, 1, 1, 1)), seed=0)
    out = net.evaluate([0.7])
    assert out.shape == (1,) and np.isfinite(out).all()
    assert rp.rank_profile(net, np.array([2.0]))
