import numpy as np
import pytest

import relupeel as rp
from relupeel.critical import find_critical_point_for_neuron
from relupeel.errors import InsufficientRank
from relupeel.oracle import (
    NetworkOracle,
    PHASE_FREEZE,
    PHASE_LAST_LAYER,
    PHASE_SOE,
    PHASE_WIGGLE,
)
from relupeel.pipeline import suffix_in_hypothesis_frame
from relupeel.signs import (
    compute_wiggle,
    exhaustive_sign_search,
    recover_output_coefficient,
    recover_signs_freeze,
    recover_signs_last_layer,
    recover_signs_soe,
    recover_signs_wiggle,
    wiggle_vote,
)
from conftest import layer_frame, make_net


def test_soe_layer1_signs_and_query_count(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((30, 12, 1)), seed=3)
    o = NetworkOracle(net)
    prefix, rows, biases, truth = layer_frame(net, 1)
    decisions = recover_signs_soe(o, prefix, rows, biases, rng)
    assert [d.sign for d in decisions] == truth.tolist()
    assert o.ledger.count(PHASE_SOE) == 12 + 1
    assert all(d.method == "SOE" and d.alpha == 1.0 for d in decisions)


def test_soe_two_neuron_toy_flips_with_anchor_side(rng):
    # planted signs (+,-); coefficients vanish exactly for inactive neurons
    net = rp.generate_unitary_balanced(rp.Architecture((6, 2, 1)), seed=9)
    o = NetworkOracle(net)
    prefix, rows, biases, truth = layer_frame(net, 2) if False else layer_frame(net, 1)
    decisions = recover_signs_soe(o, prefix, rows, biases, rng)
    assert [d.sign for d in decisions] == truth.tolist()


def test_soe_zero_pattern_invariant_under_row_scaling(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((20, 8, 1)), seed=5)
    o = NetworkOracle(net)
    prefix, rows, biases, truth = layer_frame(net, 1)
    scales = rng.uniform(0.2, 5.0, size=8)
    decisions = recover_signs_soe(o, prefix, rows * scales[:, None],
                                  biases * scales, rng)
    assert [d.sign for d in decisions] == truth.tolist()


def test_soe_insufficient_rank_on_expanding_layer(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((6, 12, 1)), seed=3)
    o = NetworkOracle(net)
    prefix, rows, biases, _ = layer_frame(net, 1)
    with pytest.raises(InsufficientRank):
        recover_signs_soe(o, prefix, rows, biases, rng, max_anchor_tries=4)


def test_freeze_layer1(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((30, 12, 1)), seed=3)
    o = NetworkOracle(net)
    prefix, rows, biases, truth = layer_frame(net, 1)
    decisions = recover_signs_freeze(o, prefix, rows, biases, rng)
    assert [d.sign for d in decisions] == truth.tolist()
    assert o.ledger.count(PHASE_FREEZE) == 12 + 1


def test_freeze_inactive_neuron_moves_nothing(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((10, 4, 2)), seed=7)
    o = NetworkOracle(net)
    x = rng.normal(size=10)
    pre = net.weights[0] @ x + net.biases[0]
    inactive = np.flatnonzero(pre < -0.1)
    if inactive.size == 0:
        pytest.skip("anchor has no inactive neuron")
    k = int(inactive[0])
    target = np.zeros(4)
    target[k] = 0.25 * abs(pre[k])
    delta, *_ = np.linalg.lstsq(net.weights[0], target, rcond=None)
    diff = np.max(np.abs(net.evaluate(x + delta) - net.evaluate(x)))
    assert diff <= 1e-9


def test_freeze_expanding_layer_insufficient_rank(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((6, 12, 1)), seed=3)
    o = NetworkOracle(net)
    prefix, rows, biases, _ = layer_frame(net, 1)
    with pytest.raises(InsufficientRank):
        recover_signs_freeze(o, prefix, rows, biases, rng, max_anchor_tries=4)


def test_wiggle_full_control_is_parallel_to_row(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((20, 8, 10, 4)), seed=9)
    prefix, rows, biases, _ = layer_frame(net, 1)
    o = NetworkOracle(net)
    cp = find_critical_point_for_neuron(o, prefix, rows[3], biases[3], rng)
    wig = compute_wiggle(prefix, rows, 3, cp.x_star)
    cos = wig.delta @ rows[3] / (np.linalg.norm(wig.delta) * np.linalg.norm(rows[3]))
    assert cos == pytest.approx(1.0, abs=1e-9)
    assert abs(rows[3] @ wig.delta) == pytest.approx(wig.epsilon * np.linalg.norm(rows[3]), rel=1e-9)


def test_wiggle_is_the_biggest_change_in_its_layer(rng):
    hits = 0
    for seed in range(100):
        net = rp.generate_unitary_balanced(rp.Architecture((24, 10, 8, 4)), seed=seed)
        prefix, rows, biases, _ = layer_frame(net, 1)
        j = int(rng.integers(10))
        o = NetworkOracle(net)
        cp = find_critical_point_for_neuron(o, prefix, rows[j], biases[j], rng)
        wig = compute_wiggle(prefix, rows, j, cp.x_star)
        changes = np.abs(rows @ wig.delta)
        hits += int(np.argmax(changes) == j)
    assert hits == 100


def test_wiggle_preimage_reproduces_nudge(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((14, 10, 9, 8, 3)), seed=6)
    prefix, rows, biases, _ = layer_frame(net, 3)
    o = NetworkOracle(net)
    cp = find_critical_point_for_neuron(o, prefix, rows[2], biases[2], rng)
    wig = compute_wiggle(prefix, rows, 2, cp.x_star)
    reached = prefix.forward(cp.x_star + wig.Delta) - prefix.forward(cp.x_star)
    assert np.linalg.norm(reached - wig.delta) <= 1e-6 * np.linalg.norm(wig.delta)


def test_wiggle_vote_flips_with_negated_row(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((20, 8, 10, 4)), seed=11)
    prefix, rows, biases, _ = layer_frame(net, 1)
    o = NetworkOracle(net)
    j = 5
    cp = find_critical_point_for_neuron(o, prefix, rows[j], biases[j], rng)
    wig = compute_wiggle(prefix, rows, j, cp.x_star)
    flipped = rows.copy()
    flipped[j] = -flipped[j]
    wig_neg = compute_wiggle(prefix, flipped, j, cp.x_star)
    assert np.allclose(wig_neg.delta, -wig.delta)
    v1 = wiggle_vote(o, wig, cp.x_star)
    v2 = wiggle_vote(o, wig_neg, cp.x_star)
    assert v1 is not None and v2 == -v1


def test_wiggle_recovers_planted_signs_and_counts(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((20, 8, 10, 4)), seed=9)
    prefix, rows, biases, truth = layer_frame(net, 1)
    o = NetworkOracle(net)
    decisions, alpha0 = recover_signs_wiggle(o, prefix, rows, biases,
                                             samples=40, seed=123)
    assert [d.sign for d in decisions] == truth.tolist()
    assert 0.5 <= alpha0 <= 1.0
    tallied = sum(d.samples for d in decisions)
    discarded = sum(d.discarded for d in decisions)
    assert o.ledger.count(PHASE_WIGGLE) == 3 * (tallied + discarded)
    for d in decisions:
        assert d.samples >= 40


def test_wiggle_multi_output_beats_single_output(rng):
    # the same victim, with outputs restricted to coordinate 0 via a wrapper
    net = rp.generate_unitary_balanced(rp.Architecture((24, 10, 12, 10)), seed=31)
    prefix, rows, biases, truth = layer_frame(net, 1)

    class FirstOutputOnly(NetworkOracle):
        def __init__(self, inner):
            super().__init__(inner)
            self.output_dim = 1

        def query(self, x):
            return super().query(x)[:1]

    o_full = NetworkOracle(net)
    o_one = FirstOutputOnly(net)
    dec_full, _ = recover_signs_wiggle(o_full, prefix, rows, biases, samples=30,
                                       rounds=1, seed=2)
    dec_one, _ = recover_signs_wiggle(o_one, prefix, rows, biases, samples=30,
                                      rounds=1, seed=2)

    def error_mass(decisions):
        wrong_votes = 0
        for d in decisions:
            good = d.s_plus if truth[d.neuron] > 0 else d.s_minus
            wrong_votes += d.samples - good
        return wrong_votes

    assert error_mass(dec_full) < error_mass(dec_one)


def test_output_coefficient_analytic_hinge():
    net = make_net([[[1.0]], [[2.0]]], [[0.0], [0.0]])   # f = 2 relu(x)
    o = NetworkOracle(net)
    rng = np.random.default_rng(3)
    cp = find_critical_point_for_neuron(o, net.prefix(0), np.array([1.0]), 0.0, rng)
    c = recover_output_coefficient(o, net.prefix(0), np.array([[1.0]]),
                                   np.array([0.0]), 0, cp)
    assert c[0] == pytest.approx(2.0, rel=1e-6)
    # anti-parallel nudge direction measures the same coefficient
    c2 = recover_output_coefficient(o, net.prefix(0), np.array([[-1.0]]),
                                    np.array([0.0]), 0, cp)
    assert c2[0] == pytest.approx(2.0, rel=1e-6)


def test_output_coefficient_matches_planted_suffix(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((12, 6, 3)), seed=8)
    prefix, rows, biases, truth = layer_frame(net, 1)
    o = NetworkOracle(net)
    scales = np.array([abs(net.weights[0][j][np.argmax(np.abs(net.weights[0][j]))])
                       for j in range(6)])
    for k in (0, 2, 5):
        cp = find_critical_point_for_neuron(o, prefix, rows[k], biases[k], rng)
        c = recover_output_coefficient(o, prefix, rows, biases, k, cp)
        want = net.weights[1][:, k] * scales[k]
        assert np.allclose(c, want, rtol=1e-5)


def test_last_layer_planted_signs_counts_and_bias(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((25, 10, 1)), seed=21)
    prefix, rows, biases, truth = layer_frame(net, 1)
    o = NetworkOracle(net)
    decisions, out_bias, coeffs = recover_signs_last_layer(o, prefix, rows, biases,
                                                           np.random.default_rng(2))
    assert [d.sign for d in decisions] == truth.tolist()
    assert o.ledger.count(PHASE_LAST_LAYER) == 4 * 10 + 1
    assert abs(out_bias[0] - net.biases[-1][0]) <= 1e-6
    assert coeffs.values.shape == (1, 10)


def test_last_layer_toy_matches_exhaustive(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((8, 2, 1)), seed=14)
    prefix, rows, biases, truth = layer_frame(net, 1)
    o = NetworkOracle(net)
    decisions, _, _ = recover_signs_last_layer(o, prefix, rows, biases,
                                               np.random.default_rng(4))
    sw, sb = suffix_in_hypothesis_frame(net, 1)
    pattern, err = exhaustive_sign_search(NetworkOracle(net), prefix, rows, biases,
                                          sw, sb, np.random.default_rng(5), n_inputs=400)
    assert err <= 1e-9
    assert [d.sign for d in decisions] == pattern.tolist() == truth.tolist()


def test_exhaustive_oracle_prefers_planted_pattern(rng):
    net = rp.generate_unitary_balanced(rp.Architecture((20, 8, 10, 4)), seed=9)
    prefix, rows, biases, truth = layer_frame(net, 1)
    sw, sb = suffix_in_hypothesis_frame(net, 1)
    pattern, err = exhaustive_sign_search(NetworkOracle(net), prefix, rows, biases,
                                          sw, sb, rng, n_inputs=500)
    assert pattern.tolist() == truth.tolist()
    assert err <= 1e-9
