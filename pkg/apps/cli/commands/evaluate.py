from pathlib import Path
from typing import Any, Dict, List

from packages.engines import orchestrate

from ..core.schemas import RunConfig, UsageError

NAME = "evaluate"
HELP = "evaluate a checkpoint or a fixed-rate CCCV baseline over full episodes"


def configure(parser) -> None:
    which = parser.add_mutually_exclusive_group(required=True)
    which.add_argument("--ckpt", help="policy checkpoint")
    which.add_argument("--cccv", type=float, metavar="C_RATE", help="fixed CCCV baseline at this C-rate")
    parser.add_argument("--seeds", type=int, help="number of consecutive seeds to evaluate")
    parser.add_argument("--episodes", type=int, help="episodes per seed")
    parser.add_argument("--truth", choices=["dfn", "spm"])
    parser.add_argument("--trace", metavar="PATH", help="per-step CSV of the evaluation cycles (one per seed)")


def overrides(args) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    evaluation = {k: getattr(args, k) for k in ("seeds", "episodes") if getattr(args, k) is not None}
    if evaluation:
        out["evaluation"] = evaluation
    if args.truth:
        out["env"] = {"truth": {"model": args.truth}}
    return out


def handle(args, cfg: RunConfig, out: Path, progress: bool) -> List[Path]:
    if args.ckpt and not Path(args.ckpt).exists():
        raise UsageError(f"checkpoint not found: {args.ckpt}")
    reports, files = orchestrate.run_evaluate(
        cfg,
        out,
        checkpoint=args.ckpt,
        cccv=args.cccv,
        seeds=cfg.evaluation.seeds,
        progress=progress,
        trace=args.trace,
    )
    for r in reports:
        print(f"{r.framework} seed {r.seed}: final fade {r.final_fade:.4f}% over {r.n_cycles} cycles")
    return files
