# packages/engines/nnet.py
# Small dense networks for the PPO actor/critic, Gaussian policy head and checkpoints.

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, DomainError

LOGGER = logging.getLogger(__name__)

DTYPE = torch.float64
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
CHECKPOINT_FORMAT = "lamcharge-policy"
CHECKPOINT_VERSION = 1
# Field order of a checkpoint container.
CHECKPOINT_FIELDS = (
    "format",
    "version",
    "variant",
    "obs_dim",
    "act_dim",
    "hidden",
    "action_bounds",
    "actor",
    "critic",
    "log_std",
    "optimizer",
    "rng_state",
    "iteration",
)


class Mlp(nn.Module):
    """Dense layers with tanh on hidden layers and identity on the output."""

    def __init__(self, sizes: Sequence[int]):
        super().__init__()
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise DomainError(f"invalid layer sizes {list(sizes)}")
        self.sizes = [int(s) for s in sizes]
        self.layers = nn.ModuleList(nn.Linear(a, b, dtype=DTYPE) for a, b in zip(self.sizes[:-1], self.sizes[1:]))
        self.activations = ["tanh"] * (len(self.layers) - 1) + ["identity"]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer, act in zip(self.layers, self.activations):
            x = layer(x)
            if act == "tanh":
                x = torch.tanh(x)
        return x

    def init_orthogonal(self, hidden_gain: float = math.sqrt(2.0), output_gain: float = 1.0) -> "Mlp":
        for k, layer in enumerate(self.layers):
            gain = output_gain if k == len(self.layers) - 1 else hidden_gain
            nn.init.orthogonal_(layer.weight, gain=gain)
            nn.init.zeros_(layer.bias)
        return self

    @classmethod
    def identity(cls, n: int) -> "Mlp":
        net = cls([n, n])
        with torch.no_grad():
            net.layers[0].weight.copy_(torch.eye(n, dtype=DTYPE))
            net.layers[0].bias.zero_()
        return net


def _as_input(net: Mlp, x) -> torch.Tensor:
    t = torch.as_tensor(x, dtype=DTYPE)
    if t.shape[-1] != net.sizes[0]:
        raise DomainError(f"input has {t.shape[-1]} features, network expects {net.sizes[0]}")
    return t


def forward(net: Mlp, x) -> torch.Tensor:
    with torch.no_grad():
        return net(_as_input(net, x))


def grad(net: Mlp, x, upstream) -> Dict[str, torch.Tensor]:
    """Gradients of <upstream, net(x)> with respect to every named parameter."""
    inp = _as_input(net, x)
    up = torch.as_tensor(upstream, dtype=DTYPE)
    out = net(inp)
    if up.shape != out.shape:
        raise DomainError(f"upstream shape {tuple(up.shape)} does not match output {tuple(out.shape)}")
    names, params = zip(*net.named_parameters())
    grads = torch.autograd.grad((out * up).sum(), params, allow_unused=True)
    return OrderedDict((n, torch.zeros_like(p) if g is None else g) for n, p, g in zip(names, params, grads))


class GaussianPolicyHead(nn.Module):
    def __init__(self, act_dim: int, init_log_std: float = 0.0):
        super().__init__()
        self.log_std = nn.Parameter(torch.full((act_dim,), float(init_log_std), dtype=DTYPE))

    def clamped_log_std(self) -> torch.Tensor:
        return self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)


def log_prob(head: GaussianPolicyHead, mean, action) -> torch.Tensor:
    """Diagonal-Gaussian log density, summed over the last axis."""
    mean = torch.as_tensor(mean, dtype=DTYPE)
    action = torch.as_tensor(action, dtype=DTYPE)
    log_std = head.clamped_log_std()
    z = (action - mean) * torch.exp(-log_std)
    d = mean.shape[-1]
    return -0.5 * (z * z).sum(-1) - log_std.sum() - 0.5 * d * math.log(2.0 * math.pi)


def entropy(head: GaussianPolicyHead) -> torch.Tensor:
    log_std = head.clamped_log_std()
    return (log_std + 0.5 * math.log(2.0 * math.pi * math.e)).sum()


class ActorCritic(nn.Module):
    """Actor mean network, critic value network and state-independent log-std.

    Raw actions are Gaussian; the environment sees bounds * tanh(raw).
    """

    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        hidden: Sequence[int] = (64, 64),
        action_bounds: Optional[Sequence[float]] = None,
        init_log_std: float = 0.0,
        seed: int = 0,
    ):
        super().__init__()
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.hidden = [int(h) for h in hidden]
        bounds = np.ones(act_dim) if action_bounds is None else np.asarray(action_bounds, dtype=float)
        self.register_buffer("action_bounds", torch.as_tensor(bounds, dtype=DTYPE))
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.actor = Mlp([obs_dim, *self.hidden, act_dim]).init_orthogonal(output_gain=0.01)
            self.critic = Mlp([obs_dim, *self.hidden, 1]).init_orthogonal(output_gain=1.0)
        self.head = GaussianPolicyHead(act_dim, init_log_std)

    def value(self, obs) -> torch.Tensor:
        return self.critic(torch.as_tensor(obs, dtype=DTYPE)).squeeze(-1)

    def sample(self, obs, generator: torch.Generator):
        """(raw action, log-prob, value) for one observation."""
        with torch.no_grad():
            o = torch.as_tensor(obs, dtype=DTYPE)
            mean = self.actor(o)
            noise = torch.randn(mean.shape, generator=generator, dtype=DTYPE)
            raw = mean + torch.exp(self.head.clamped_log_std()) * noise
            return raw, log_prob(self.head, mean, raw), self.value(o)

    def evaluate(self, obs, raw_actions):
        mean = self.actor(torch.as_tensor(obs, dtype=DTYPE))
        return log_prob(self.head, mean, raw_actions), self.value(obs), entropy(self.head)

    def squash(self, raw) -> np.ndarray:
        return (self.action_bounds * torch.tanh(torch.as_tensor(raw, dtype=DTYPE))).numpy()

    def mean_action(self, obs) -> np.ndarray:
        with torch.no_grad():
            return self.squash(self.actor(torch.as_tensor(obs, dtype=DTYPE)))


def flatten_params(model: nn.Module) -> np.ndarray:
    """All parameters as one vector (actor, critic, log-std in registration order)."""
    return nn.utils.parameters_to_vector(model.parameters()).detach().numpy().copy()


def save_checkpoint(
    path: Union[str, Path],
    model: ActorCritic,
    optimizer: Optional[torch.optim.Optimizer] = None,
    generator: Optional[torch.Generator] = None,
    iteration: int = 0,
    variant: str = "",
) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "variant": variant,
        "obs_dim": model.obs_dim,
        "act_dim": model.act_dim,
        "hidden": list(model.hidden),
        "action_bounds": model.action_bounds.tolist(),
        "actor": model.actor.state_dict(),
        "critic": model.critic.state_dict(),
        "log_std": model.head.log_std.detach().clone(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "rng_state": generator.get_state() if generator is not None else None,
        "iteration": int(iteration),
    }
    torch.save(blob, p)
    LOGGER.debug("Wrote checkpoint %s (iteration %d)", p, iteration)
    return p


def load_checkpoint(path: Union[str, Path]) -> dict:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    try:
        blob = torch.load(p, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"could not read checkpoint {p}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{p} is not a policy checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{p} has unsupported checkpoint version {blob.get('version')}")
    return blob


def model_from_checkpoint(blob: dict) -> ActorCritic:
    model = ActorCritic(blob["obs_dim"], blob["act_dim"], blob["hidden"], blob["action_bounds"])
    model.actor.load_state_dict(blob["actor"])
    model.critic.load_state_dict(blob["critic"])
    with torch.no_grad():
        model.head.log_std.copy_(blob["log_std"])
    return model
