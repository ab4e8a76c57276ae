import json
import socket
import threading

import numpy as np
import pytest

import relupeel as rp
from relupeel.errors import TransportFailure
from relupeel.netio import fmt17, parse_endpoint
from relupeel.oracle import NetworkOracle, QueryLedger


@pytest.fixture
def victim():
    return rp.generate_unitary_balanced(rp.Architecture((5, 6, 3)), seed=17)


def test_query_counts_and_determinism(identity_net):
    o = NetworkOracle(identity_net)
    a = o.query(np.array([1.0, -1.0]))
    assert np.array_equal(a, [1.0, 0.0])
    assert o.ledger.total == 1
    b = o.query(np.array([1.0, -1.0]))
    assert np.array_equal(a, b)
    assert o.ledger.total == 2


def test_phase_accounting_nested():
    ledger = QueryLedger()
    with ledger.phase("outer"):
        ledger.record()
        with ledger.phase("inner"):
            ledger.record(3)
        ledger.record()
    ledger.record()
    assert ledger.per_phase == {"outer": 2, "inner": 3, "misc": 1}
    assert ledger.total == sum(ledger.per_phase.values())


def test_phase_is_per_thread():
    ledger = QueryLedger()
    seen = []

    def worker(label):
        with ledger.phase(label):
            for _ in range(10):
                ledger.record()
        seen.append(label)

    threads = [threading.Thread(target=worker, args=(f"t{i}",)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert ledger.total == 40
    assert all(ledger.per_phase[f"t{i}"] == 10 for i in range(4))


def test_batch_matches_single_queries(victim, rng):
    o = NetworkOracle(victim)
    xs = rng.normal(size=(20, 5))
    batch = o.query_batch(xs)
    singles = np.stack([o.query(x) for x in xs])
    assert np.array_equal(batch, singles)
    assert o.ledger.total == 40


def test_float17_round_trips():
    rng = np.random.default_rng(1)
    vals = np.concatenate([rng.normal(size=500), [0.0, -0.0, 1e-308, -1e300]])
    for v in vals:
        assert float(fmt17(v)) == v


def test_parse_endpoint():
    assert parse_endpoint("tcp://nethost:91") == ("tcp", "nethost", 91)
    assert parse_endpoint("file:///tmp/x.nnx") == ("file", "/tmp/x.nnx")
    with pytest.raises(ValueError):
        parse_endpoint("http://x")


def test_wire_oracle_is_observationally_equivalent(victim, rng):
    server = rp.serve(victim, port=0)
    server.serve_background()
    try:
        local = NetworkOracle(victim)
        remote = rp.connect(server.endpoint)
        assert (remote.input_dim, remote.output_dim) == (5, 3)
        xs = rng.normal(size=(1000, 5)) * 10 ** rng.uniform(-6, 3, size=(1000, 1))
        got = remote.query_batch(xs)
        want = local.query_batch(xs)
        assert np.array_equal(got, want)
        assert remote.ledger.total == 1000
        assert server.ledger.total == 1000
    finally:
        server.shutdown()


def test_wire_pipelined_counts_and_env_default(victim, rng, monkeypatch):
    server = rp.serve(victim, port=0)
    server.serve_background()
    try:
        monkeypatch.setenv("NNX_ORACLE", server.endpoint)
        remote = rp.connect(None)
        xs = rng.normal(size=(10_000, 5))
        remote.query_batch(xs)
        assert remote.ledger.total == 10_000
        assert server.ledger.total == 10_000
    finally:
        server.shutdown()


def test_wire_malformed_line_keeps_connection(victim):
    server = rp.serve(victim, port=0)
    server.serve_background()
    try:
        sock = socket.create_connection(server.server_address)
        rfile = sock.makefile("rb")
        json.loads(rfile.readline())  # greeting
        sock.sendall(b"not json at all\n")
        reply = json.loads(rfile.readline())
        assert "error" in reply
        q = {"q": [fmt17(v) for v in np.zeros(5)]}
        sock.sendall(json.dumps(q).encode() + b"\n")
        reply = json.loads(rfile.readline())
        assert "a" in reply and len(reply["a"]) == 3
        sock.close()
    finally:
        server.shutdown()


def test_wire_bad_width_is_error_not_crash(victim):
    server = rp.serve(victim, port=0)
    server.serve_background()
    try:
        remote = rp.connect(server.endpoint)
        with pytest.raises(ValueError):
            remote.query(np.zeros(4))
        sock = socket.create_connection(server.server_address)
        rfile = sock.makefile("rb")
        json.loads(rfile.readline())
        sock.sendall(json.dumps({"q": ["1", "2"]}).encode() + b"\n")
        assert "error" in json.loads(rfile.readline())
        sock.close()
    finally:
        server.shutdown()


def test_connect_refused_raises_transportish_error():
    with pytest.raises(Exception):
        rp.connect("tcp://127.0.0.1:1", timeout=0.3)
