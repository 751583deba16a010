# packages/engines/records.py
# Result files: per-sample cycle CSVs, JSON summaries, JSON-lines episode logs, run manifests.

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .protocol import EXTREMA_COLUMNS, CycleRecord, TruthModel

LOGGER = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
MANIFEST_NAME = "manifest.json"
SAMPLE_COLUMNS = ("cycle", "time_s", "current_a", "voltage_v", "phase", "stoich_neg", "stoich_pos")
TRACE_COLUMNS = ("cycle", "time_s", "phase", "current_a", "voltage_v", "stoich_neg", "stoich_pos", *EXTREMA_COLUMNS)

PathLike = Union[str, Path]


def _plain(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars/arrays to Python, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(obj: Any, path: PathLike) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as f:
        json.dump(_plain(obj), f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    return p


def write_table(frame: pd.DataFrame, path: PathLike) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(p, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return p


def read_table(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path)


def cycle_frame(record: CycleRecord) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "cycle": record.cycle_index,
            "time_s": record.time,
            "current_a": record.current,
            "voltage_v": record.voltage,
            "phase": record.phase,
            "stoich_neg": record.stoich_neg,
            "stoich_pos": record.stoich_pos,
        },
        columns=list(SAMPLE_COLUMNS),
    )


def write_cycle_csv(record: CycleRecord, path: PathLike) -> Path:
    return write_table(cycle_frame(record), path)


def write_summaries(records: Iterable[CycleRecord], path: PathLike) -> Path:
    return write_json([r.summary() for r in records], path)


class JsonlWriter:
    """Append-only JSON-lines log, one object per line."""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")

    def write(self, obj: Any) -> None:
        self._fh.write(json.dumps(_plain(obj), sort_keys=True) + "\n")

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "JsonlWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_jsonl(path: PathLike) -> List[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


class TraceRecorder:
    """Per-solver-step trace sink, discharge and rest included, streamed to CSV.

    Columns: cycle, time, phase, current, voltage, electrode-averaged surface
    stoichiometry and the min/max electrolyte and solid concentrations per
    electrode. Rows are appended in chunks of ``chunk`` rows.
    """

    def __init__(self, path: PathLike, dt: float, chunk: int = 5000):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.dt = dt
        self.chunk = chunk
        self.cycle = 0
        self.rows: List[dict] = []
        self._t = 0.0
        self._written = 0
        pd.DataFrame(columns=list(TRACE_COLUMNS)).to_csv(self.path, index=False, lineterminator="\n")

    def start_cycle(self, cycle: int) -> None:
        self.cycle = cycle

    def __call__(self, truth: TruthModel, state, phase: str, i_app: float, volts: float) -> None:
        self._t += self.dt
        neg, pos = truth.surface_stoich(state, i_app)
        self.rows.append(
            {
                "cycle": self.cycle,
                "time_s": self._t,
                "phase": phase,
                "current_a": float(i_app),
                "voltage_v": float(volts),
                "stoich_neg": float(neg),
                "stoich_pos": float(pos),
                **truth.extrema(state),
            }
        )
        if len(self.rows) >= self.chunk:
            self.flush()

    def flush(self) -> None:
        if not self.rows:
            return
        frame = pd.DataFrame(self.rows, columns=list(TRACE_COLUMNS))
        frame.to_csv(self.path, mode="a", header=False, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        self._written += len(self.rows)
        self.rows = []

    def close(self) -> Path:
        self.flush()
        LOGGER.info("Wrote %d trace rows to %s", self._written, self.path)
        return self.path

    def __enter__(self) -> "TraceRecorder":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _manifest_name(path: Path, out: Path) -> str:
    """Path relative to the run directory, absolute when written elsewhere (e.g. --trace)."""
    return str(path.relative_to(out)) if path.is_relative_to(out) else str(path)


def write_manifest(out_dir: PathLike, files: Sequence[PathLike], config: Optional[dict] = None, command: str = "") -> Path:
    out = Path(out_dir).resolve()
    rel = sorted({_manifest_name(Path(f).resolve(), out) for f in files})
    manifest = {"command": command, "files": rel, "config": config or {}}
    p = write_json(manifest, out / MANIFEST_NAME)
    LOGGER.info("Wrote manifest with %d files to %s", len(rel), p)
    return p
