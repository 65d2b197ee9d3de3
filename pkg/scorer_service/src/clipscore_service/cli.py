"""Command line entry point: load a backend, bind a socket, serve."""

from __future__ import annotations

import argparse
import sys

from .model import ModelLoadError, load_backend
from .service import ScorerServer


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clipscore-service",
        description="Serve image scoring over a TCP socket.")
    parser.add_argument("--host", default="127.0.0.1",
                        help="address to bind (default %(default)s)")
    parser.add_argument("--port", type=int, default=7878,
                        help="port to bind (default %(default)s)")
    parser.add_argument("--checkpoint", default=None,
                        help="CLIP checkpoint name or path; without one a "
                             "self-contained test model is served")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress per-connection logging")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        backend = load_backend(args.checkpoint)
    except ModelLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    server = ScorerServer(backend, host=args.host, port=args.port,
                          verbose=not args.quiet)
    print(f"serving {backend.model_id} on {server.endpoint} "
          f"(input {backend.input_size}px, temperature {backend.temperature:g})",
          flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
