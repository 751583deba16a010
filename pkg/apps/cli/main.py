import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from packages.engines import records
from packages.engines.errors import LamChargeError

from .commands import compare, evaluate, simulate, train
from .core.schemas import RunConfig, UsageError, resolve_config

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
COMMANDS = {m.NAME: m for m in (train, evaluate, compare, simulate)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="job JSON (same shape as RunConfig)")
    common.add_argument("--params", help="cell parameter file (default: shipped graphite/NMC cell)")
    common.add_argument("--seed", type=int, help="run seed (default 0)")
    common.add_argument("--out", help="output directory (default: $LAMCHARGE_OUT or runs/<command>)")
    common.add_argument("--quiet", action="store_true", help="warnings only, no progress bars")

    parser = _Parser(prog="lamcharge", description="LAM-aware CCCV charging: simulate, train, evaluate, compare.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, module in COMMANDS.items():
        module.configure(sub.add_parser(name, parents=[common], help=module.HELP))
    return parser


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out or cfg.out or os.getenv("LAMCHARGE_OUT") or str(Path("runs") / args.command)
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    level = os.getenv("LAMCHARGE_LOG_LEVEL", "INFO").upper()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING if args.quiet else level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    module = COMMANDS[args.command]
    try:
        overrides = module.overrides(args)
        for key in ("params", "seed"):
            if getattr(args, key) is not None:
                overrides[key] = getattr(args, key)
        cfg = resolve_config(args.config, overrides)
        out = _out_dir(args, cfg)
        cfg = cfg.model_copy(update={"out": str(out)})
        progress = not args.quiet and sys.stderr.isatty()
        files = module.handle(args, cfg, out, progress)
        records.write_manifest(out, files, cfg.model_dump(mode="json"), args.command)
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LamChargeError as exc:
        LOGGER.exception("%s failed", args.command)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        LOGGER.exception("%s failed unexpectedly", args.command)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
