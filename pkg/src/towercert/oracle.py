"""Model oracle interface: local models and the NDJSON wire protocol client.

Any external process can serve as the oracle by answering one JSON object
per line over stdio or TCP:

    -> {"id":0,"op":"info"}
    <- {"id":0,"input_dim":D,"n_classes":C,"max_batch":B}
    -> {"id":k,"op":"predict","rows":R,"x_b64":"<base64 LE binary32, R*D row-major>"}
    <- {"id":k,"labels":[l1,...,lR]}
    <- {"id":k,"error":"<message>"}

Features travel as base64 of little-endian binary32, so the server sees the
identical bits the client holds; there is no decimal round-trip. Requests
are never retried: a lost response fails the item, which keeps tallies
i.i.d. One request is in flight per connection at a time; parallel runners
serialise access or open one connection per worker.
"""

from __future__ import annotations

import base64
import json
import socket
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .models import Model, predict
from .stats import ParameterError


class TransportError(RuntimeError):
    """Wire-level failure: malformed response, id mismatch, timeout, EOF."""

    def __init__(self, message: str, request_id: int | None = None):
        super().__init__(message)
        self.request_id = request_id


def encode_f32(batch: np.ndarray) -> str:
    """Base64 of row-major little-endian binary32."""
    arr = np.ascontiguousarray(batch, dtype="<f4")
    return base64.b64encode(arr.tobytes()).decode("ascii")


def decode_f32(payload: str, rows: int, dim: int) -> np.ndarray:
    raw = base64.b64decode(payload, validate=True)
    if len(raw) != 4 * rows * dim:
        raise ValueError(f"payload is {len(raw)} bytes, expected {4 * rows * dim}")
    return np.frombuffer(raw, dtype="<f4").reshape(rows, dim).copy()


class ModelOracle:
    """Batched label predictor: the black-box h the certifier queries."""

    input_dim: int
    n_classes: int
    max_batch: int

    def predict_labels(self, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass


class LocalOracle(ModelOracle):
    """In-process oracle over a built-in model. Thread-safe (prediction is
    pure) and unlimited in batch size."""

    def __init__(self, model: Model):
        self.model = model
        self.input_dim = model.dim
        self.n_classes = model.n_classes
        self.max_batch = 1 << 30

    def predict_labels(self, batch: np.ndarray) -> np.ndarray:
        return predict(self.model, batch)


class _StdioTransport:
    """Child process speaking the protocol on its stdin/stdout."""

    def __init__(self, command: list[str], timeout: float):
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise TransportError(f"cannot spawn oracle server {command!r}: {exc}") from exc

    def round_trip(self, line: str) -> str:
        if self.proc.poll() is not None:
            raise TransportError(f"oracle server exited with code {self.proc.returncode}")
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"oracle server pipe closed: {exc}") from exc
        timer = threading.Timer(self.timeout, self.proc.kill)
        timer.start()
        try:
            reply = self.proc.stdout.readline()
        finally:
            timed_out = not timer.is_alive()
            timer.cancel()
        if reply == "":
            if timed_out:
                raise TransportError(f"oracle server timed out after {self.timeout}s")
            raise TransportError("oracle server closed its output stream")
        return reply

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class _TcpTransport:
    """TCP connection speaking one JSON object per newline-terminated line."""

    def __init__(self, host: str, port: int, timeout: float):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self.sock.settimeout(timeout)
        self.reader = self.sock.makefile("r", encoding="ascii", newline="\n")

    def round_trip(self, line: str) -> str:
        try:
            self.sock.sendall((line + "\n").encode("ascii"))
            reply = self.reader.readline()
        except socket.timeout as exc:
            raise TransportError(f"oracle connection timed out: {exc}") from exc
        except OSError as exc:
            raise TransportError(f"oracle connection failed: {exc}") from exc
        if reply == "":
            raise TransportError("oracle connection closed")
        return reply

    def close(self) -> None:
        try:
            self.reader.close()
            self.sock.close()
        except OSError:
            pass


@dataclass(frozen=True)
class OracleInfo:
    input_dim: int
    n_classes: int
    max_batch: int


class RemoteOracle(ModelOracle):
    """Protocol client over a stdio child process or a TCP endpoint.

    Correlates replies by monotonically increasing id, splits oversized
    batches at the server's advertised cap, and serialises concurrent
    callers so exactly one request is in flight.
    """

    def __init__(
        self,
        command: list[str] | None = None,
        tcp: tuple[str, int] | None = None,
        timeout: float = 10.0,
    ):
        if (command is None) == (tcp is None):
            raise ParameterError("give exactly one of command= or tcp=")
        if command is not None:
            self._transport = _StdioTransport(command, timeout)
        else:
            self._transport = _TcpTransport(tcp[0], tcp[1], timeout)
        self._lock = threading.Lock()
        self._next_id = 0
        info = self._request({"op": "info"})
        try:
            self.input_dim = int(info["input_dim"])
            self.n_classes = int(info["n_classes"])
            self.max_batch = int(info["max_batch"])
        except (KeyError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed info response: {info!r}") from exc
        if self.input_dim < 1 or self.n_classes < 1 or self.max_batch < 1:
            raise TransportError(f"nonsensical info response: {info!r}")

    def _request(self, body: dict) -> dict:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            line = json.dumps({"id": request_id, **body}, separators=(",", ":"))
            reply_line = self._transport.round_trip(line)
        try:
            reply = json.loads(reply_line)
        except json.JSONDecodeError as exc:
            raise TransportError(
                f"unparseable response {reply_line!r}", request_id
            ) from exc
        if reply.get("id") != request_id:
            raise TransportError(
                f"response id {reply.get('id')!r} does not match request {request_id}",
                request_id,
            )
        if "error" in reply:
            raise TransportError(f"server error: {reply['error']}", request_id)
        return reply

    def check_dataset(self, dataset) -> None:
        if dataset.dim != self.input_dim:
            raise ParameterError(
                f"oracle expects input_dim {self.input_dim}, dataset has {dataset.dim}"
            )

    def predict_labels(self, batch: np.ndarray) -> np.ndarray:
        batch = np.ascontiguousarray(batch, dtype=np.float32)
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise ParameterError(
                f"batch shape {batch.shape} does not match input_dim {self.input_dim}"
            )
        chunks = []
        for start in range(0, batch.shape[0], self.max_batch):
            chunk = batch[start : start + self.max_batch]
            reply = self._request(
                {
                    "op": "predict",
                    "rows": int(chunk.shape[0]),
                    "x_b64": encode_f32(chunk),
                }
            )
            labels = reply.get("labels")
            if not isinstance(labels, list) or len(labels) != chunk.shape[0]:
                raise TransportError(
                    f"expected {chunk.shape[0]} labels, got {labels!r}"
                )
            chunks.append(np.asarray(labels, dtype=np.int64))
        if not chunks:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(chunks)

    def close(self) -> None:
        self._transport.close()
