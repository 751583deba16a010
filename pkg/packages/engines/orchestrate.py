# packages/engines/orchestrate.py
# End-to-end flows behind the CLI: train, evaluate, compare, simulate.

import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import pandas as pd

from . import bench, nnet, ppo, records
from .cellparams import CellParams, load_params
from .degradation import advance_aging, fresh_aging
from .env import EnvConfig, make_env
from .errors import CellDeadError, CheckpointError
from .protocol import make_truth, run_cccv_cycle

LOGGER = logging.getLogger(__name__)

KIND_OF = {"with-lam": "rl_with_lam", "without-lam": "rl_without_lam"}


def _env_config(cfg, variant: Optional[str] = None) -> EnvConfig:
    return cfg.env.model_copy(update={"variant": variant or cfg.variant})


def _params(cfg) -> CellParams:
    return load_params(cfg.params)


def run_train(
    cfg,
    out_dir: Path,
    resume: Optional[str] = None,
    progress: bool = False,
    trace: Optional[str] = None,
) -> List[Path]:
    params = _params(cfg)
    env_cfg = _env_config(cfg)
    ppo_cfg = cfg.ppo.model_copy(update={"seed": cfg.seed})
    ckpt_dir = out_dir / "checkpoints"
    recorder = records.TraceRecorder(trace, env_cfg.protocol.dt) if trace else None
    try:
        _, log = ppo.train(
            lambda: make_env(params, env_cfg, recorder),
            ppo_cfg,
            out_dir=ckpt_dir,
            resume=resume,
            variant=env_cfg.variant,
            progress=progress,
        )
    finally:
        if recorder is not None:
            recorder.close()
    log_path = records.write_table(pd.DataFrame(log, columns=list(ppo.LOG_COLUMNS)), out_dir / "training_log.csv")
    LOGGER.info("Trained %s policy for %d iterations", env_cfg.variant, len(log))
    files = [log_path, *sorted(ckpt_dir.glob("*.pt"))]
    return files + ([Path(trace)] if trace else [])


def framework_for(cfg, checkpoint: Optional[str] = None, cccv: Optional[float] = None) -> bench.FrameworkSpec:
    if cccv is not None:
        return bench.FrameworkSpec(kind="cccv_fixed", c_rate=cccv)
    if checkpoint is None:
        raise CheckpointError("evaluation needs a checkpoint or a fixed C-rate")
    variant = nnet.load_checkpoint(checkpoint).get("variant") or cfg.variant
    if variant not in KIND_OF:
        raise CheckpointError(f"{checkpoint} names unknown variant '{variant}'")
    return bench.FrameworkSpec(kind=KIND_OF[variant], checkpoint=str(checkpoint))


def _seed_path(path: Path, seed: int, seeds: int) -> Path:
    return path if seeds == 1 else path.with_name(f"{path.stem}_s{seed}{path.suffix}")


def run_evaluate(
    cfg,
    out_dir: Path,
    checkpoint: Optional[str] = None,
    cccv: Optional[float] = None,
    seeds: int = 1,
    progress: bool = False,
    trace: Optional[str] = None,
) -> Tuple[List[bench.EvaluationReport], List[Path]]:
    """Full-length episodes per seed; with ``trace`` and several seeds each seed gets `<stem>_s<seed><suffix>`."""
    params = _params(cfg)
    spec = framework_for(cfg, checkpoint, cccv)
    files: List[Path] = []
    reports = []
    for k in range(seeds):
        seed = cfg.seed + k
        stem = f"{spec.kind}_s{seed}"
        recorder = records.TraceRecorder(_seed_path(Path(trace), seed, seeds), cfg.env.protocol.dt) if trace else None
        with records.JsonlWriter(out_dir / f"episodes_{stem}.jsonl") as log:
            try:
                report = bench.run_framework(
                    spec,
                    params,
                    cfg.env,
                    cfg.evaluation.episodes,
                    seed,
                    progress=progress,
                    on_transition=log.write,
                    trace_sink=recorder,
                )
            finally:
                if recorder is not None:
                    files.append(recorder.close())
        reports.append(report)
        files += [report.write(out_dir / f"report_{stem}.csv"), out_dir / f"episodes_{stem}.jsonl"]
    summary = {
        "framework": spec.kind,
        "seeds": [r.seed for r in reports],
        "final_fade": {str(r.seed): r.final_fade for r in reports},
        "cycles": {str(r.seed): r.n_cycles for r in reports},
    }
    files.append(records.write_json(summary, out_dir / f"evaluation_{spec.kind}.json"))
    return reports, files


def run_compare(report_paths: Sequence[str], out_dir: Path) -> Tuple[bench.Comparison, List[Path]]:
    reports = [bench.EvaluationReport.read(p) for p in report_paths]
    comparison = bench.compare(reports)
    return comparison, bench.write_comparison(comparison, out_dir)


def run_simulate(
    cfg,
    out_dir: Path,
    cycles: int,
    c_rate: float,
    snapshot: Optional[Iterable[int]] = None,
    trace: Optional[str] = None,
) -> List[Path]:
    """Repeated CCCV cycles at a fixed C-rate with LAM applied between cycles."""
    params = _params(cfg)
    protocol = cfg.env.protocol
    truth = make_truth(params, cfg.env.truth)
    aging = fresh_aging(params)
    state = truth.init(0.0, aging.eps_pos_true)
    wanted = None if snapshot is None else set(snapshot)
    recorder = records.TraceRecorder(trace, protocol.dt) if trace else None
    files: List[Path] = []
    done = []
    try:
        for k in range(1, cycles + 1):
            if recorder is not None:
                recorder.start_cycle(k)
            state, record = run_cccv_cycle(truth, state, aging, c_rate, protocol, trace_sink=recorder)
            try:
                aging = advance_aging(aging, params.degradation.lam, params, c_rate)
            except CellDeadError as exc:
                LOGGER.warning("Stopping simulation after cycle %d: %s", k, exc)
                done.append(record)
                break
            record.q_now = aging.q_now
            record.eps_pos_true = aging.eps_pos_true
            state = truth.with_eps(state, aging.eps_pos_true)
            done.append(record)
            if wanted is None or k in wanted:
                files.append(records.write_cycle_csv(record, out_dir / "cycles" / f"cycle_{k:04d}.csv"))
    finally:
        if recorder is not None:
            files.append(recorder.close())
    files.append(records.write_summaries(done, out_dir / "cycles.json"))
    LOGGER.info("Simulated %d cycles at %.3fC; final q_loss %.4f%%", len(done), c_rate, aging.q_loss)
    return files
