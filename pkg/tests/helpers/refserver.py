"""Reference oracle server for protocol tests: stdlib only.

Labels are the bucket of the first coordinate: min(int(x0 * C), C - 1).
Options exercise failure modes: --die-after kills the process mid-run,
--sleep-on-predict provokes client timeouts.
"""

import argparse
import base64
import json
import socket
import struct
import sys
import time


def bucket_labels(floats, dim, n_classes):
    rows = len(floats) // dim
    out = []
    for r in range(rows):
        x0 = floats[r * dim]
        out.append(min(int(x0 * n_classes), n_classes - 1) if x0 >= 0 else 0)
    return out


def handle(line, opts, state):
    try:
        req = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"id": None, "error": f"bad json: {exc.msg}"}
    rid = req.get("id")
    op = req.get("op")
    if op == "info":
        return {
            "id": rid,
            "input_dim": opts.dim,
            "n_classes": opts.classes,
            "max_batch": opts.max_batch,
        }
    if op == "predict":
        state["predicts"] += 1
        if opts.die_after is not None and state["predicts"] > opts.die_after:
            sys.exit(1)
        if opts.sleep_on_predict:
            time.sleep(opts.sleep_on_predict)
        rows = int(req.get("rows", 0))
        if rows > opts.max_batch:
            return {"id": rid, "error": f"batch of {rows} exceeds cap {opts.max_batch}"}
        try:
            raw = base64.b64decode(req["x_b64"], validate=True)
            floats = struct.unpack(f"<{rows * opts.dim}f", raw)
        except (KeyError, struct.error, ValueError) as exc:
            return {"id": rid, "error": f"bad payload: {exc}"}
        return {"id": rid, "labels": bucket_labels(floats, opts.dim, opts.classes)}
    return {"id": rid, "error": f"unknown op {op!r}"}


def serve_lines(reader, writer, opts):
    state = {"predicts": 0}
    for line in reader:
        line = line.strip()
        if not line:
            continue
        reply = handle(line, opts, state)
        writer.write(json.dumps(reply) + "\n")
        writer.flush()


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--dim", type=int, default=2)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--max-batch", type=int, default=1024)
    parser.add_argument("--tcp", action="store_true")
    parser.add_argument("--die-after", type=int, default=None)
    parser.add_argument("--sleep-on-predict", type=float, default=0.0)
    opts = parser.parse_args()

    if opts.tcp:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.bind(("127.0.0.1", 0))
        sock.listen(1)
        print(f"LISTENING {sock.getsockname()[1]}", file=sys.stderr, flush=True)
        conn, _ = sock.accept()
        with conn.makefile("r") as reader, conn.makefile("w") as writer:
            serve_lines(reader, writer, opts)
    else:
        serve_lines(sys.stdin, sys.stdout, opts)


if __name__ == "__main__":
    main()
