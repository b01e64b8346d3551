"""Single-threaded request loop wrapping a user prediction function.

A failing batch never kills the server: user exceptions and malformed
requests both turn into error responses for that request id, and the loop
moves on to the next line. Responses are written in request order.
"""

from __future__ import annotations

import base64
import json
import socket
import struct
import sys
from dataclasses import dataclass
from typing import Callable, Sequence


class AdapterError(ValueError):
    """The wrapped model or its configuration is unusable."""


@dataclass(frozen=True)
class WrappedModel:
    """A user callable plus the facts advertised at handshake.

    predict_fn maps a batch (list of rows, each a list of floats) to a
    sequence of integer labels, one per row, each below n_classes.
    """

    predict_fn: Callable[[list], Sequence[int]]
    input_dim: int
    n_classes: int
    max_batch: int = 1024

    def __post_init__(self):
        if self.input_dim < 1 or self.n_classes < 1 or self.max_batch < 1:
            raise AdapterError(
                "input_dim, n_classes and max_batch must all be positive"
            )
        if not callable(self.predict_fn):
            raise AdapterError("predict_fn must be callable")


def wrap_callable(
    fn: Callable,
    input_dim: int | None = None,
    n_classes: int | None = None,
    max_batch: int | None = None,
) -> WrappedModel:
    """Build a WrappedModel, reading missing facts off the callable's
    attributes (input_dim, n_classes, max_batch)."""

    def pick(explicit, attr, default=None):
        if explicit is not None:
            return int(explicit)
        value = getattr(fn, attr, default)
        if value is None:
            raise AdapterError(
                f"cannot determine {attr}: pass it explicitly or set it as an "
                f"attribute on the callable"
            )
        return int(value)

    return WrappedModel(
        predict_fn=fn,
        input_dim=pick(input_dim, "input_dim"),
        n_classes=pick(n_classes, "n_classes"),
        max_batch=pick(max_batch, "max_batch", 1024),
    )


def _decode_rows(payload: str, rows: int, dim: int) -> list:
    raw = base64.b64decode(payload, validate=True)
    expect = 4 * rows * dim
    if len(raw) != expect:
        raise ValueError(f"payload is {len(raw)} bytes, expected {expect}")
    flat = struct.unpack(f"<{rows * dim}f", raw)
    return [list(flat[r * dim : (r + 1) * dim]) for r in range(rows)]


def _predict_response(wrapped: WrappedModel, request: dict) -> dict:
    rid = request.get("id")
    try:
        rows = int(request["rows"])
        if rows < 0:
            raise ValueError("rows must be nonnegative")
        if rows > wrapped.max_batch:
            raise ValueError(f"batch of {rows} exceeds max_batch {wrapped.max_batch}")
        batch = _decode_rows(request["x_b64"], rows, wrapped.input_dim)
    except (KeyError, TypeError, ValueError) as exc:
        return {"id": rid, "error": f"bad predict request: {exc}"}
    try:
        labels = wrapped.predict_fn(batch)
        labels = [int(v) for v in labels]
    except Exception as exc:  # crash isolation: the server must survive
        return {"id": rid, "error": f"prediction failed: {exc}"}
    if len(labels) != rows:
        return {
            "id": rid,
            "error": f"prediction returned {len(labels)} labels for {rows} rows",
        }
    bad = [v for v in labels if not 0 <= v < wrapped.n_classes]
    if bad:
        return {
            "id": rid,
            "error": f"label {bad[0]} outside [0, {wrapped.n_classes})",
        }
    return {"id": rid, "labels": labels}


def handle_line(wrapped: WrappedModel, line: str) -> dict:
    """One request line to one response object."""
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"id": None, "error": f"unparseable request: {exc.msg}"}
    if not isinstance(request, dict):
        return {"id": None, "error": "request must be a JSON object"}
    op = request.get("op")
    if op == "info":
        return {
            "id": request.get("id"),
            "input_dim": wrapped.input_dim,
            "n_classes": wrapped.n_classes,
            "max_batch": wrapped.max_batch,
        }
    if op == "predict":
        return _predict_response(wrapped, request)
    return {"id": request.get("id"), "error": f"unknown op {op!r}"}


def _serve_stream(wrapped: WrappedModel, reader, writer) -> None:
    for line in reader:
        line = line.strip()
        if not line:
            continue
        response = handle_line(wrapped, line)
        writer.write(json.dumps(response, separators=(",", ":")) + "\n")
        writer.flush()


def serve(wrapped: WrappedModel, tcp_port: int | None = None) -> None:
    """Answer requests until EOF (stdio) or forever (TCP accept loop).

    TCP mode announces the bound port on stderr as "LISTENING <port>" so
    callers can bind port 0 and discover the real one.
    """
    if tcp_port is None:
        _serve_stream(wrapped, sys.stdin, sys.stdout)
        return
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind(("127.0.0.1", tcp_port))
    sock.listen(1)
    print(f"LISTENING {sock.getsockname()[1]}", file=sys.stderr, flush=True)
    while True:
        conn, _ = sock.accept()
        with conn, conn.makefile("r") as reader, conn.makefile("w") as writer:
            _serve_stream(wrapped, reader, writer)
