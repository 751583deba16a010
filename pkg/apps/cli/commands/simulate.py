from pathlib import Path
from typing import Any, Dict, List

from packages.engines import orchestrate

from ..core.schemas import RunConfig, UsageError

NAME = "simulate"
HELP = "raw CCCV cycling with aging, for physics debugging"


def _cycles(text: str) -> List[int]:
    try:
        return sorted({int(t) for t in text.split(",") if t.strip()})
    except ValueError as exc:
        raise UsageError(f"--snapshot expects comma-separated cycle numbers, got '{text}'") from exc


def configure(parser) -> None:
    parser.add_argument("--cycles", type=int)
    parser.add_argument("--c-rate", dest="c_rate", type=float)
    parser.add_argument("--snapshot", help="cycles whose sample CSV is written, e.g. 1,20,40")
    parser.add_argument("--trace", metavar="PATH", help="per-step CSV of every solver step, discharge and rest included")
    parser.add_argument("--truth", choices=["dfn", "spm"])
    parser.add_argument("--dt", type=float, help="protocol time step (s)")


def overrides(args) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    sim: Dict[str, Any] = {}
    if args.cycles is not None:
        sim["cycles"] = args.cycles
    if args.c_rate is not None:
        sim["c_rate"] = args.c_rate
    if args.snapshot:
        sim["snapshot"] = _cycles(args.snapshot)
    if sim:
        out["simulation"] = sim
    env: Dict[str, Any] = {}
    if args.truth:
        env["truth"] = {"model": args.truth}
    if args.dt is not None:
        env["protocol"] = {"dt": args.dt}
    if env:
        out["env"] = env
    return out


def handle(args, cfg: RunConfig, out: Path, progress: bool) -> List[Path]:
    sim = cfg.simulation
    return orchestrate.run_simulate(cfg, out, sim.cycles, sim.c_rate, sim.snapshot, trace=args.trace)
