import json
from pathlib import Path
from typing import Any, Dict, List

from packages.engines import orchestrate

from ..core.schemas import RunConfig, UsageError

NAME = "compare"
HELP = "align evaluation reports and print the fade-ordering verdict"


def configure(parser) -> None:
    parser.add_argument("reports", nargs="+", help="evaluation report CSVs")


def overrides(args) -> Dict[str, Any]:
    return {}


def handle(args, cfg: RunConfig, out: Path, progress: bool) -> List[Path]:
    if len(args.reports) < 2:
        raise UsageError("compare needs at least two reports")
    for p in args.reports:
        if not Path(p).exists():
            raise UsageError(f"report not found: {p}")
    comparison, files = orchestrate.run_compare(args.reports, out)
    print(json.dumps(comparison.summary["framework_mean_fade"], sort_keys=True))
    print(comparison.verdict)
    return files
