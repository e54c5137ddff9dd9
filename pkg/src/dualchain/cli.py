"""Command-line entry point: ``dualchain {train,reconstruct,edit,bench,traj}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error,
3 acceptance-check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, defaults, load_config
from .edit import ConfigError as EditConfigError
from .harness import COMMANDS, AcceptanceFailure

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ACCEPTANCE = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualchain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--config", type=Path, help="experiment config file (defaults used when omitted)")
        p.add_argument("--seed", type=int, help="override [data] seed")
        p.add_argument("--out", type=Path, help="output directory (overrides [out] directory)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else defaults()
        if args.seed is not None:
            cfg["data"]["seed"] = args.seed
        out = args.out if args.out is not None else cfg.path("out", "directory")
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
    except (ConfigError, EditConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AcceptanceFailure as exc:
        print(f"acceptance check failed: {exc}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps everything else to exit 2
        logging.getLogger(__name__).debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
