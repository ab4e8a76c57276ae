"""Serving and consuming an oracle over TCP.

Wire protocol: newline-delimited JSON over a stream socket.

  greeting   server -> client on connect: {"hello": 1, "d0": int, "dout": int}
  request    {"q": [str, ...]}   floats as decimal strings, 17 significant
                                 digits, so float64 values round-trip exactly
  response   {"a": [str, ...]}   same encoding
  error      {"error": str}      connection stays usable

Requests on one connection are answered in order, so clients may pipeline.
"""
from __future__ import annotations

import json
import os
import socket
import socketserver
import threading

import numpy as np

from .errors import HandshakeError, TransportFailure
from .oracle import Oracle, QueryLedger

ENV_ENDPOINT = "NNX_ORACLE"
_TIMEOUT = 30.0


def fmt17(v):
    return format(float(v), ".17g")


def _encode_vec(vec):
    return [fmt17(v) for v in np.asarray(vec, dtype=np.float64)]


def _decode_vec(items):
    return np.array([float(s) for s in items], dtype=np.float64)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server = self.server
        greeting = {"hello": 1, "d0": server.net.input_dim, "dout": server.net.output_dim}
        self.wfile.write(json.dumps(greeting).encode() + b"\n")
        for line in self.rfile:
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
                q = _decode_vec(msg["q"])
                if q.shape != (server.net.input_dim,):
                    raise ValueError(f"query of width {q.shape[0]}")
                server.ledger.record(1)
                ans = server.net.evaluate(q)
                reply = {"a": _encode_vec(ans)}
            except Exception as exc:  # malformed line: report, keep serving
                reply = {"error": f"{type(exc).__name__}: {exc}"}
            self.wfile.write(json.dumps(reply).encode() + b"\n")


class OracleServer(socketserver.ThreadingTCPServer):
    """Serves a Network on host:port until shutdown() or SIGINT/SIGTERM."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, net, host="127.0.0.1", port=0, ledger=None):
        super().__init__((host, port), _Handler)
        self.net = net
        self.ledger = ledger if ledger is not None else QueryLedger()

    @property
    def endpoint(self):
        host, port = self.server_address[:2]
        return f"tcp://{host}:{port}"

    def serve_background(self):
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t


def serve(net, host="127.0.0.1", port=0, ledger=None) -> OracleServer:
    """Bind and return a server; call .serve_forever() or .serve_background()."""
    return OracleServer(net, host=host, port=port, ledger=ledger)


class RemoteOracle(Oracle):
    """Oracle whose query() round-trips the wire protocol. One socket, FIFO."""

    def __init__(self, host, port, ledger=None, timeout=_TIMEOUT):
        self._lock = threading.Lock()
        self._addr = (host, int(port))
        self._timeout = timeout
        self.ledger = ledger if ledger is not None else QueryLedger()
        try:
            self._sock = socket.create_connection(self._addr, timeout=timeout)
            self._rfile = self._sock.makefile("rb")
            greeting = json.loads(self._rfile.readline())
        except (OSError, ValueError) as exc:
            raise HandshakeError(f"no greeting from {host}:{port}: {exc}") from exc
        if greeting.get("hello") != 1 or "d0" not in greeting or "dout" not in greeting:
            raise HandshakeError(f"unusable greeting {greeting!r}")
        self.input_dim = int(greeting["d0"])
        self.output_dim = int(greeting["dout"])

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass

    def _roundtrip_lines(self, lines):
        try:
            self._sock.sendall(b"".join(lines))
            replies = []
            for _ in lines:
                raw = self._rfile.readline()
                if not raw:
                    raise TransportFailure("connection closed mid-reply")
                replies.append(json.loads(raw))
            return replies
        except (OSError, ValueError) as exc:
            raise TransportFailure(str(exc)) from exc

    def query(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise ValueError(f"query shape {x.shape}, expected ({self.input_dim},)")
        line = json.dumps({"q": _encode_vec(x)}).encode() + b"\n"
        with self._lock:
            reply = self._roundtrip_lines([line])[0]
        if "error" in reply:
            raise TransportFailure(f"server error: {reply['error']}")
        self.ledger.record(1)
        return _decode_vec(reply["a"])

    def query_batch(self, xs):
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        lines = [json.dumps({"q": _encode_vec(x)}).encode() + b"\n" for x in xs]
        with self._lock:
            replies = self._roundtrip_lines(lines)
        out = []
        for reply in replies:
            if "error" in reply:
                raise TransportFailure(f"server error: {reply['error']}")
            out.append(_decode_vec(reply["a"]))
        self.ledger.record(len(out))
        return np.stack(out)


def parse_endpoint(text):
    """'tcp://host:port' -> ('tcp', host, port); 'file://path' -> ('file', path)."""
    if text.startswith("tcp://"):
        hostport = text[len("tcp://"):]
        host, _, port = hostport.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad tcp endpoint {text!r}")
        return ("tcp", host, int(port))
    if text.startswith("file://"):
        return ("file", text[len("file://"):])
    raise ValueError(f"endpoint {text!r} must start with tcp:// or file://")


def connect(endpoint, ledger=None, timeout=_TIMEOUT) -> Oracle:
    """Oracle from 'tcp://host:port' or 'file://victim.nnx' (or $NNX_ORACLE)."""
    if endpoint is None:
        endpoint = os.environ.get(ENV_ENDPOINT)
        if not endpoint:
            raise ValueError(f"no endpoint given and {ENV_ENDPOINT} unset")
    kind = parse_endpoint(endpoint)
    if kind[0] == "tcp":
        return RemoteOracle(kind[1], kind[2], ledger=ledger, timeout=timeout)
    from .nnxio import load_network
    from .oracle import NetworkOracle

    return NetworkOracle(load_network(kind[1]), ledger=ledger)
