from pathlib import Path
from typing import Any, Dict, List

from packages.engines import orchestrate

from ..core.schemas import RunConfig, UsageError

NAME = "train"
HELP = "train a PPO charging policy"


def configure(parser) -> None:
    parser.add_argument("--variant", choices=["with-lam", "without-lam"])
    parser.add_argument("--iters", type=int, help="PPO iterations")
    parser.add_argument("--resume", help="checkpoint to continue from")
    parser.add_argument("--truth", choices=["dfn", "spm"], help="truth model driving the environment")
    parser.add_argument("--trace", metavar="PATH", help="per-step CSV over all training cycles")


def overrides(args) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    if args.variant:
        out["variant"] = args.variant
    if args.iters is not None:
        out["ppo"] = {"iterations": args.iters}
    if args.truth:
        out["env"] = {"truth": {"model": args.truth}}
    return out


def handle(args, cfg: RunConfig, out: Path, progress: bool) -> List[Path]:
    if args.resume and not Path(args.resume).exists():
        raise UsageError(f"checkpoint not found: {args.resume}")
    return orchestrate.run_train(cfg, out, resume=args.resume, progress=progress, trace=args.trace)
