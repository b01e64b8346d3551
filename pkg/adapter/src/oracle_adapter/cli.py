"""Command line: serve a user prediction function given as import.path:callable."""

from __future__ import annotations

import argparse
import importlib
import sys

from .server import AdapterError, serve, wrap_callable


def resolve_callable(spec: str):
    module_path, _, attr = spec.partition(":")
    if not module_path or not attr:
        raise AdapterError(f"model must look like package.module:callable, got {spec!r}")
    try:
        module = importlib.import_module(module_path)
    except ImportError as exc:
        raise AdapterError(f"cannot import {module_path!r}: {exc}") from exc
    try:
        fn = getattr(module, attr)
    except AttributeError as exc:
        raise AdapterError(f"{module_path!r} has no attribute {attr!r}") from exc
    return fn


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="oracle-adapter",
        description="serve a Python prediction function over the oracle wire protocol",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_serve = sub.add_parser("serve", help="answer requests on stdio or TCP")
    p_serve.add_argument("--model", required=True, help="import.path:callable")
    p_serve.add_argument("--tcp", type=int, default=None, metavar="PORT")
    p_serve.add_argument("--input-dim", type=int, default=None)
    p_serve.add_argument("--n-classes", type=int, default=None)
    p_serve.add_argument("--max-batch", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        fn = resolve_callable(args.model)
        wrapped = wrap_callable(
            fn,
            input_dim=args.input_dim,
            n_classes=args.n_classes,
            max_batch=args.max_batch,
        )
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        serve(wrapped, tcp_port=args.tcp)
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
