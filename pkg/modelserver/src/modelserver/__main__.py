"""Command line: serve the protocol or check a running server.

    modelserver serve --host 127.0.0.1 --port 8035 --mode stub
    modelserver check http://127.0.0.1:8035
"""

import argparse
import sys

from .config import ServerConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modelserver")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP server")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8035)
    serve.add_argument("--mode", choices=("stub", "real"), default="stub")
    serve.add_argument("--device", default=None, help="device hint for real adapters")
    serve.add_argument(
        "--adapter",
        action="append",
        default=[],
        metavar="CAPABILITY=MODULE:ATTR",
        help="real-mode adapter mount, repeatable",
    )

    check = sub.add_parser("check", help="run the conformance suite against a URL")
    check.add_argument("endpoint")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "check":
        from .conformance import conformance_suite

        report = conformance_suite(args.endpoint)
        print(report.to_text())
        return 0 if report.passed else 1

    adapters = {}
    for item in args.adapter:
        capability, _, reference = item.partition("=")
        if not reference:
            print(f"bad --adapter value: {item!r}", file=sys.stderr)
            return 2
        adapters[capability] = reference
    try:
        config = ServerConfig(
            host=args.host,
            port=args.port,
            mode=args.mode,
            adapters=adapters,
            device=args.device,
        )
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return 2

    import uvicorn

    from .app import create_app

    app = create_app(config)
    for note in app.state.adapters.notes:
        print(f"note: {note}", file=sys.stderr)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
