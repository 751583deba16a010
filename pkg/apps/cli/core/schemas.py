import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from packages.engines.env import EnvConfig
from packages.engines.ppo import PpoConfig

DEFAULT_SEED = 0


class UsageError(Exception):
    """Bad flags, bad config or a missing input file (exit code 1)."""


class Evaluation(BaseModel):
    model_config = ConfigDict(extra="forbid")

    episodes: int = Field(default=1, ge=1)
    seeds: int = Field(default=1, ge=1)


class Simulation(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cycles: int = Field(default=100, ge=1)
    c_rate: float = Field(default=1.5, gt=0)
    # Cycles whose per-sample CSV is written; None writes every cycle
    snapshot: Optional[List[int]] = None


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    params: Optional[str] = None  # None -> shipped default cell
    seed: int = DEFAULT_SEED
    out: Optional[str] = None
    variant: Literal["with-lam", "without-lam"] = "with-lam"
    env: EnvConfig = EnvConfig()
    ppo: PpoConfig = PpoConfig()
    evaluation: Evaluation = Evaluation()
    simulation: Simulation = Simulation()


def _merge(base: Dict[str, Any], over: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _validate(data: Dict[str, Any], source: str) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise UsageError(f"{source}: invalid '{field}': {first['msg']}") from exc


def resolve_config(path: Optional[str], overrides: Dict[str, Any]) -> RunConfig:
    """Built-in defaults, then the job file, then flag overrides (nested dicts)."""
    data: Dict[str, Any] = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{p} is not valid JSON: {exc}") from exc
        _validate(data, str(p))
    return _validate(_merge(data, overrides), path or "flags")
