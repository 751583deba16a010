# packages/engines/bench.py
# Three-framework comparison: physics-informed RL, fixed-rate CCCV, physics-blind RL.

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator
from tqdm import tqdm

from . import nnet, records
from .cellparams import CellParams
from .env import EnvConfig, make_env
from .errors import CheckpointError, ComparisonError, DomainError, EvaluationError

LOGGER = logging.getLogger(__name__)

Kind = Literal["rl_with_lam", "cccv_fixed", "rl_without_lam"]
EXPECTED_ORDER = ("rl_with_lam", "cccv_fixed", "rl_without_lam")
VARIANT_OF = {"rl_with_lam": "with-lam", "rl_without_lam": "without-lam"}
REPORT_COLUMNS = (
    "framework",
    "seed",
    "episode",
    "cycle",
    "c_rate",
    "q_now",
    "q_loss",
    "eps_pos_true",
    "eps_estimate",
    "reward",
    "penalty",
    "charge_duration_s",
)
ALIGNED_METRICS = ("q_loss", "q_now", "c_rate", "eps_pos_true", "eps_estimate")


class FrameworkSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Kind
    checkpoint: Optional[str] = None
    c_rate: Optional[float] = None

    @model_validator(mode="after")
    def _fields_for_kind(self):
        if self.kind == "cccv_fixed":
            if self.c_rate is None or self.checkpoint is not None:
                raise ValueError("cccv_fixed takes a c_rate and no checkpoint")
        elif self.checkpoint is None or self.c_rate is not None:
            raise ValueError(f"{self.kind} takes a checkpoint and no c_rate")
        return self


@dataclass
class EvaluationReport:
    framework: str
    seed: int
    frame: pd.DataFrame

    @property
    def n_cycles(self) -> int:
        return int(self.frame.groupby("episode")["cycle"].count().min()) if len(self.frame) else 0

    @property
    def final_fade(self) -> float:
        """Capacity fade (%) after the last cycle, averaged over episodes."""
        last = self.frame.groupby("episode").tail(1)
        return float(last["q_loss"].mean())

    @property
    def label(self) -> str:
        return f"{self.framework}@{self.seed}"

    def write(self, path: Union[str, Path]) -> Path:
        return records.write_table(self.frame, path)

    @classmethod
    def read(cls, path: Union[str, Path]) -> "EvaluationReport":
        p = Path(path)
        if not p.exists():
            raise ComparisonError(f"report not found: {p}")
        frame = records.read_table(p)
        missing = [c for c in REPORT_COLUMNS if c not in frame.columns]
        if missing or frame.empty:
            raise ComparisonError(f"{p} is not an evaluation report (missing {', '.join(missing) or 'rows'})")
        frameworks = frame["framework"].unique()
        if len(frameworks) != 1:
            raise ComparisonError(f"{p} mixes frameworks {list(frameworks)}")
        return cls(str(frameworks[0]), int(frame["seed"].iloc[0]), frame)


def _policy(spec: FrameworkSpec, env):
    if spec.kind == "cccv_fixed":
        zero = np.zeros(env.action_space.shape)
        return lambda obs: zero
    blob = nnet.load_checkpoint(spec.checkpoint)
    want = VARIANT_OF[spec.kind]
    if blob.get("variant") and blob["variant"] != want:
        raise CheckpointError(f"{spec.checkpoint} was trained for {blob['variant']}, not {want}")
    if blob["obs_dim"] != env.observation_space.shape[0] or blob["act_dim"] != env.action_space.shape[0]:
        raise CheckpointError(f"{spec.checkpoint} does not match the {want} environment dimensions")
    model = nnet.model_from_checkpoint(blob)
    return model.mean_action


def run_framework(
    spec: FrameworkSpec,
    params: CellParams,
    env_config: EnvConfig = EnvConfig(),
    episodes: int = 1,
    seed: int = 0,
    progress: bool = False,
    on_transition: Optional[Callable[[dict], None]] = None,
    trace_sink=None,
) -> EvaluationReport:
    """Evaluate one framework for ``episodes`` full-length episodes.

    RL kinds act with the deterministic policy mean; the CCCV kind holds its
    C-rate. The bound penalty stays but never ends an evaluation episode.
    """
    update = {"terminate_on_bound": False}
    if spec.kind == "cccv_fixed":
        p = env_config.protocol
        if not (p.c_min <= spec.c_rate <= p.c_max):
            raise DomainError(f"fixed c_rate {spec.c_rate} outside [{p.c_min}, {p.c_max}]")
        update.update(variant="without-lam", init_c_rate=float(spec.c_rate))
    else:
        update["variant"] = VARIANT_OF[spec.kind]
    cfg = env_config.model_copy(update=update)
    env = make_env(params, cfg, trace_sink)
    act = _policy(spec, env)
    tracks_eps = spec.kind == "rl_with_lam"

    rows: List[dict] = []
    for ep in range(episodes):
        obs, _ = env.reset(seed=seed + ep)
        done = False
        bar = tqdm(total=cfg.episode_length, desc=f"{spec.kind}[{ep}]", disable=not progress)
        while not done:
            if not np.all(np.isfinite(obs)):
                raise EvaluationError(f"non-finite observation at cycle {env.state.steps + 1}: {obs}")
            obs, reward, terminated, truncated, info = env.step(act(obs))
            done = terminated or truncated
            tr = info["transition"]
            rec = tr.info.get("record")
            rows.append(
                {
                    "framework": spec.kind,
                    "seed": seed,
                    "episode": ep,
                    "cycle": env.state.steps,
                    "c_rate": tr.next_raw_obs.c_rate,
                    "q_now": tr.next_raw_obs.q_now,
                    "q_loss": tr.info["q_loss"],
                    "eps_pos_true": tr.info["eps_pos_true"],
                    "eps_estimate": tr.next_raw_obs.eps_estimate if tracks_eps else np.nan,
                    "reward": reward,
                    "penalty": bool(tr.penalty),
                    "charge_duration_s": rec.charge_duration if rec is not None else np.nan,
                }
            )
            if on_transition is not None:
                on_transition({"framework": spec.kind, "seed": seed, "episode": ep, **tr.summary()})
            bar.update(1)
        bar.close()
        if tr.info.get("failure"):
            LOGGER.warning("%s episode %d ended early at cycle %d: %s", spec.kind, ep, env.state.steps, tr.info["failure"])
    frame = pd.DataFrame(rows, columns=list(REPORT_COLUMNS))
    report = EvaluationReport(spec.kind, seed, frame)
    LOGGER.info("%s (seed %d): final fade %.4f%% over %d cycles", spec.kind, seed, report.final_fade, report.n_cycles)
    return report


# ---------------------- comparison ----------------------


def ordering_verdict(fades: Dict[str, float]) -> str:
    """Frameworks sorted by final fade, joined with '<' (or '=' on ties)."""
    items = sorted(fades.items(), key=lambda kv: (kv[1], kv[0]))
    out = items[0][0]
    for (_, prev), (name, val) in zip(items, items[1:]):
        out += (" = " if val == prev else " < ") + name
    return out


def expected_ordering_holds(fades: Dict[str, float]) -> bool:
    present = [k for k in EXPECTED_ORDER if k in fades]
    if len(present) < 2:
        return False
    return all(fades[a] < fades[b] for a, b in zip(present, present[1:]))


@dataclass
class Comparison:
    aligned: pd.DataFrame
    summary: dict
    long: pd.DataFrame
    labels: List[str] = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return self.summary["verdict"]


def compare(reports: Sequence[EvaluationReport]) -> Comparison:
    if len(reports) < 2:
        raise ComparisonError("comparison needs at least two reports")
    counts = {r.label: r.n_cycles for r in reports}
    if len(set(counts.values())) != 1:
        raise ComparisonError(f"reports have different cycle counts: {counts}")

    labels: List[str] = []
    for r in reports:
        label, k = r.label, 1
        while label in labels:
            k += 1
            label = f"{r.label}#{k}"
        labels.append(label)

    base = None
    cols: Dict[str, np.ndarray] = {}
    for label, r in zip(labels, reports):
        first = r.frame[r.frame["episode"] == r.frame["episode"].min()].reset_index(drop=True)
        if base is None:
            base = first
            cols["cycle"] = first["cycle"].to_numpy()
        for m in ALIGNED_METRICS:
            cols[f"{label}:{m}"] = first[m].to_numpy(dtype=float)
        cols[f"{label}:delta_q_loss"] = first["q_loss"].to_numpy(dtype=float) - base["q_loss"].to_numpy(dtype=float)
    aligned = pd.DataFrame(cols)

    per_report = {label: r.final_fade for label, r in zip(labels, reports)}
    by_framework: Dict[str, List[float]] = {}
    by_seed: Dict[int, Dict[str, float]] = {}
    for r in reports:
        by_framework.setdefault(r.framework, []).append(r.final_fade)
        by_seed.setdefault(r.seed, {})[r.framework] = r.final_fade
    means = {k: float(np.mean(v)) for k, v in by_framework.items()}
    seeds_full = {s: f for s, f in by_seed.items() if len(f) == len(means)}
    summary = {
        "final_fade": per_report,
        "framework_mean_fade": means,
        "verdict": ordering_verdict(means),
        "expected_ordering": " < ".join(k for k in EXPECTED_ORDER if k in means),
        "expected_ordering_holds": expected_ordering_holds(means),
        "per_seed": {str(s): {"final_fade": f, "verdict": ordering_verdict(f)} for s, f in sorted(seeds_full.items())},
        "seeds_total": len(seeds_full),
        "seeds_ordering_holds": sum(expected_ordering_holds(f) for f in seeds_full.values()),
        "cycles": next(iter(counts.values())),
        "max_abs_delta_q_loss": {
            f"{a}|{b}": float(np.max(np.abs(aligned[f"{a}:q_loss"] - aligned[f"{b}:q_loss"]))) for a, b in combinations(labels, 2)
        },
    }

    long_rows = []
    for label, r in zip(labels, reports):
        first = r.frame[r.frame["episode"] == r.frame["episode"].min()]
        melted = first.melt(id_vars=["cycle"], value_vars=list(ALIGNED_METRICS), var_name="metric", value_name="value")
        melted.insert(1, "framework", r.framework)
        melted.insert(2, "seed", r.seed)
        melted.insert(3, "label", label)
        long_rows.append(melted)
    long = pd.concat(long_rows, ignore_index=True)
    LOGGER.info("comparison verdict: %s", summary["verdict"])
    return Comparison(aligned, summary, long, labels)


def write_comparison(comparison: Comparison, out_dir: Union[str, Path]) -> List[Path]:
    out = Path(out_dir)
    return [
        records.write_table(comparison.aligned, out / "comparison.csv"),
        records.write_json(comparison.summary, out / "comparison.json"),
        records.write_table(comparison.long, out / "comparison_long.csv"),
    ]
