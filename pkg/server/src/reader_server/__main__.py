"""CLI entry point: bind, print the address on one line, serve.

Single worker by default for determinism; the scorer is stateless per
request so higher concurrency is safe when enabled.
"""

import argparse
import socket
import sys

import numpy as np
import uvicorn

from .app import create_app
from .scorer import DEFAULT_CONFUSION_DIAGONAL, ScorerParams


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reader-server", description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8720, help="0 picks a free port")
    parser.add_argument("--alpha", type=float, default=0.95, help="informativeness")
    parser.add_argument("--mislead", type=float, default=0.95)
    parser.add_argument("--junk", type=float, default=0.1)
    parser.add_argument("--noise-scale", dest="noise_scale", type=float, default=0.3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--confusion-diag", dest="confusion_diag", type=float,
        default=DEFAULT_CONFUSION_DIAGONAL,
    )
    parser.add_argument("--confusion", default=None,
                        help="path to a .npy confusion matrix (optional)")
    parser.add_argument("--request-log", dest="request_log", default=None)
    parser.add_argument("--workers", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    confusion = np.load(args.confusion) if args.confusion else None
    params = ScorerParams(
        informativeness=args.alpha,
        confusion=confusion,
        seed=args.seed,
        mislead=args.mislead,
        junk=args.junk,
        noise_scale=args.noise_scale,
        confusion_diag=args.confusion_diag,
    )
    app = create_app(params, request_log=args.request_log)

    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((args.host, args.port))
    host, port = sock.getsockname()[:2]
    print(f"listening on http://{host}:{port}", flush=True)

    config = uvicorn.Config(app, log_level="warning", workers=args.workers)
    server = uvicorn.Server(config)
    server.run(sockets=[sock])
    return 0


if __name__ == "__main__":
    sys.exit(main())
