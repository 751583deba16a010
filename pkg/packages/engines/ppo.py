# packages/engines/ppo.py
# Proximal Policy Optimization over any gymnasium-style environment factory.

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from . import nnet
from .errors import DomainError, TrainingDivergedError

LOGGER = logging.getLogger(__name__)

ADV_EPS = 1e-8
LOG_COLUMNS = (
    "iteration",
    "mean_return",
    "actor_objective",
    "value_loss",
    "clip_fraction",
    "mean_final_c_rate",
    "final_q_loss",
)


class PpoConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma: float = Field(default=0.99, gt=0, le=1)
    clip: float = Field(default=0.2, gt=0, lt=1)
    value_coef: float = Field(default=0.5, gt=0)
    lr: float = Field(default=3e-4, gt=0)
    epochs: int = Field(default=10, ge=1)
    minibatch: int = Field(default=64, ge=1)
    episodes_per_update: int = Field(default=4, ge=1)
    iterations: int = Field(default=150, ge=0)
    seed: int = 0
    normalize_advantages: bool = True
    entropy_coef: float = Field(default=0.0, ge=0)
    hidden: Tuple[int, ...] = (64, 64)
    init_log_std: float = 0.0
    checkpoint_every: int = Field(default=10, ge=1)


# ---------------------- math ----------------------


def compute_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Discounted reward-to-go G_t = r_t + gamma * G_{t+1}."""
    r = np.asarray(rewards, dtype=float)
    out = np.zeros_like(r)
    running = 0.0
    for t in range(r.size - 1, -1, -1):
        running = r[t] + gamma * running
        out[t] = running
    return out


def compute_advantages(returns, values, normalize: bool = True) -> np.ndarray:
    g = np.asarray(returns, dtype=float)
    v = np.asarray(values, dtype=float)
    if g.shape != v.shape:
        raise DomainError(f"returns and values differ in length ({g.size} vs {v.size})")
    adv = g - v
    if normalize and adv.size:
        adv = (adv - adv.mean()) / (adv.std() + ADV_EPS)
    return adv


def ratio(logp_new, logp_old) -> torch.Tensor:
    return torch.exp(torch.as_tensor(logp_new, dtype=nnet.DTYPE) - torch.as_tensor(logp_old, dtype=nnet.DTYPE))


def clipped_terms(ratios, advantages, clip: float) -> torch.Tensor:
    r = torch.as_tensor(ratios, dtype=nnet.DTYPE)
    a = torch.as_tensor(advantages, dtype=nnet.DTYPE)
    return torch.minimum(r * a, torch.clamp(r, 1.0 - clip, 1.0 + clip) * a)


def clipped_objective(ratios, advantages, clip: float) -> torch.Tensor:
    return clipped_terms(ratios, advantages, clip).mean()


def value_loss(values, returns) -> torch.Tensor:
    v = torch.as_tensor(values, dtype=nnet.DTYPE)
    g = torch.as_tensor(returns, dtype=nnet.DTYPE)
    return ((v - g) ** 2).mean()


def total_loss(actor_obj, critic_loss, value_coef: float, entropy=0.0, entropy_coef: float = 0.0):
    return -actor_obj + value_coef * critic_loss - entropy_coef * entropy


# ---------------------- rollouts ----------------------


@dataclass
class RolloutBuffer:
    obs: List[np.ndarray] = field(default_factory=list)
    raw_actions: List[np.ndarray] = field(default_factory=list)
    logps: List[float] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    dones: List[bool] = field(default_factory=list)
    returns: List[float] = field(default_factory=list)
    _episode_start: int = 0

    def add(self, obs, raw_action, logp: float, reward: float, value: float, done: bool) -> None:
        self.obs.append(np.asarray(obs, dtype=float))
        self.raw_actions.append(np.asarray(raw_action, dtype=float))
        self.logps.append(float(logp))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))

    def finish_episode(self, gamma: float) -> None:
        self.returns.extend(compute_returns(self.rewards[self._episode_start :], gamma).tolist())
        self._episode_start = len(self.rewards)

    def __len__(self) -> int:
        return len(self.rewards)

    def advantages(self, normalize: bool) -> np.ndarray:
        if len(self.returns) != len(self.rewards):
            raise DomainError("advantages requested before every episode finished")
        return compute_advantages(self.returns, self.values, normalize)

    def tensors(self):
        return (
            torch.as_tensor(np.stack(self.obs), dtype=nnet.DTYPE),
            torch.as_tensor(np.stack(self.raw_actions), dtype=nnet.DTYPE),
            torch.as_tensor(self.logps, dtype=nnet.DTYPE),
            torch.as_tensor(self.returns, dtype=nnet.DTYPE),
        )


def _episode_extras(info: dict) -> Tuple[float, float]:
    tr = info.get("transition")
    if tr is None:
        return math.nan, math.nan
    c_rate = getattr(tr.next_raw_obs, "c_rate", math.nan)
    q_loss = tr.info.get("q_loss", math.nan)
    return float(c_rate), float(math.nan if q_loss is None else q_loss)


def collect(env, model: nnet.ActorCritic, generator: torch.Generator, episodes: int, gamma: float, seed_base: int):
    """Roll out ``episodes`` full episodes with the current (frozen) policy."""
    buf = RolloutBuffer()
    ep_returns, final_c, final_q = [], [], []
    for e in range(episodes):
        obs, _ = env.reset(seed=seed_base + e)
        total = 0.0
        info: dict = {}
        done = False
        while not done:
            raw, logp, value = model.sample(obs, generator)
            nxt, reward, terminated, truncated, info = env.step(model.squash(raw))
            done = bool(terminated or truncated)
            buf.add(obs, raw.numpy(), float(logp), float(reward), float(value), done)
            total += float(reward)
            obs = nxt
        buf.finish_episode(gamma)
        ep_returns.append(total)
        c, q = _episode_extras(info)
        final_c.append(c)
        final_q.append(q)
    return buf, ep_returns, final_c, final_q


# ---------------------- training ----------------------


def _mean(xs) -> float:
    arr = np.asarray(xs, dtype=float)
    arr = arr[np.isfinite(arr)]
    return float(arr.mean()) if arr.size else math.nan


def _snapshot(out_dir: Optional[Path], model, optimizer, generator, iteration: int, variant: str) -> str:
    target = (out_dir or Path(".")) / "diverged.pt"
    nnet.save_checkpoint(target, model, optimizer, generator, iteration, variant)
    return str(target)


def train(
    env_factory: Callable[[], object],
    config: PpoConfig = PpoConfig(),
    out_dir: Union[str, Path, None] = None,
    resume: Union[str, Path, None] = None,
    variant: str = "",
    progress: bool = False,
):
    """Algorithm loop: collect rollouts, compute advantages, minibatch epochs on the
    clipped loss, repeat. Returns (model, log rows)."""
    out = Path(out_dir) if out_dir else None
    env = env_factory()
    obs_dim = int(np.prod(env.observation_space.shape))
    act_dim = int(np.prod(env.action_space.shape))
    bounds = np.asarray(env.action_space.high, dtype=float)
    generator = torch.Generator().manual_seed(config.seed)
    model = nnet.ActorCritic(obs_dim, act_dim, config.hidden, bounds, config.init_log_std, config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    start = 0
    if resume:
        blob = nnet.load_checkpoint(resume)
        if (blob["obs_dim"], blob["act_dim"]) != (obs_dim, act_dim):
            raise DomainError(f"checkpoint {resume} does not match environment dimensions")
        model = nnet.model_from_checkpoint(blob)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
        if blob.get("optimizer"):
            optimizer.load_state_dict(blob["optimizer"])
        if blob.get("rng_state") is not None:
            generator.set_state(blob["rng_state"])
        start = int(blob.get("iteration", 0))
        LOGGER.info("Resumed from %s at iteration %d", resume, start)

    log: List[dict] = []
    bar = tqdm(range(start, config.iterations), desc="ppo", disable=not progress)
    for it in bar:
        buf, returns, final_c, final_q = collect(
            env, model, generator, config.episodes_per_update, config.gamma, config.seed * 100_003 + it * config.episodes_per_update
        )
        obs, acts, logp_old, rets = buf.tensors()
        adv = torch.as_tensor(buf.advantages(config.normalize_advantages), dtype=nnet.DTYPE)
        n = len(buf)
        actor_objs, vlosses, clipped = [], [], []
        for epoch in range(config.epochs):
            perm = torch.randperm(n, generator=generator)
            for k in range(0, n, config.minibatch):
                mb = perm[k : k + config.minibatch]
                logp, values, ent = model.evaluate(obs[mb], acts[mb])
                r = ratio(logp, logp_old[mb])
                if epoch == 0 and k == 0:
                    dev = float((r - 1.0).abs().max())
                    if dev > 1e-9:
                        LOGGER.warning("iteration %d: rollout-policy ratio deviates from 1 by %.3e", it, dev)
                terms = clipped_terms(r, adv[mb], config.clip)
                actor_obj = terms.mean()
                vl = value_loss(values, rets[mb])
                loss = total_loss(actor_obj, vl, config.value_coef, ent, config.entropy_coef)
                if not torch.isfinite(loss):
                    path = _snapshot(out, model, optimizer, generator, it, variant)
                    raise TrainingDivergedError(f"non-finite loss at iteration {it}, epoch {epoch}", path)
                bound = torch.maximum((1.0 + config.clip) * adv[mb], (1.0 - config.clip) * adv[mb])
                assert bool((terms <= bound + 1e-12).all()), "clipped surrogate exceeded its bound"
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                actor_objs.append(float(actor_obj))
                vlosses.append(float(vl))
                clipped.append(float(((r - 1.0).abs() > config.clip).double().mean()))
        row = {
            "iteration": it + 1,
            "mean_return": _mean(returns),
            "actor_objective": _mean(actor_objs),
            "value_loss": _mean(vlosses),
            "clip_fraction": _mean(clipped),
            "mean_final_c_rate": _mean(final_c),
            "final_q_loss": _mean(final_q),
        }
        log.append(row)
        LOGGER.info("iteration %d: mean return %.4f, value loss %.4g, clip %.3f", it + 1, row["mean_return"], row["value_loss"], row["clip_fraction"])
        bar.set_postfix(ret=f"{row['mean_return']:.3f}")
        if out is not None and (it + 1) % config.checkpoint_every == 0:
            nnet.save_checkpoint(out / f"ckpt_{it + 1:05d}.pt", model, optimizer, generator, it + 1, variant)

    if out is not None:
        nnet.save_checkpoint(out / "final.pt", model, optimizer, generator, max(start, config.iterations), variant)
    return model, log
