# packages/engines/env.py
# Cycle-level charging MDP: one step = one CCCV cycle on the aging truth cell.

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Optional, Tuple

import gymnasium as gym
import numpy as np
from gymnasium import spaces
from pydantic import BaseModel, ConfigDict, Field

from . import spm
from .cellparams import CellParams
from .degradation import AgingState, advance_aging, fresh_aging
from .errors import CellDeadError, EpisodeDoneError, KineticsError, LamChargeError, SaturationError
from .protocol import CycleRecord, ProtocolConfig, TruthSettings, make_truth, run_cccv_cycle

LOGGER = logging.getLogger(__name__)

Variant = Literal["with-lam", "without-lam"]


class EnvConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    variant: Variant = "with-lam"
    episode_length: int = Field(default=100, ge=1)
    init_c_rate: float = Field(default=1.5, gt=0)
    d_c_rate_max: float = Field(default=0.1, gt=0)
    d_eps_max: float = Field(default=0.005, gt=0)
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 10.0
    penalty: float = 500.0
    eps_bound_fraction: float = Field(default=0.7, gt=0, lt=1)
    terminate_on_bound: bool = True
    v_feature: Literal["cc_mean", "cc_end"] = "cc_mean"
    v_range: Tuple[float, float] = (3.4, 4.2)  # V
    q_range_frac: Tuple[float, float] = (0.6, 1.0)  # of Q_nom
    eps_range_frac: Tuple[float, float] = (0.6, 1.0)  # of eps_s0+
    eps_floor: float = Field(default=1e-3, gt=0)  # lower clamp of the estimate
    voltage_noise_std: float = Field(default=0.0, ge=0)  # V, off by default
    mismatch_cap: float = Field(default=1.0, gt=0)  # V, per sample when the predictor saturates
    protocol: ProtocolConfig = ProtocolConfig()
    truth: TruthSettings = TruthSettings()


@dataclass(frozen=True)
class Observation:
    v_feature: float
    q_now: float
    c_rate: float
    eps_estimate: float

    def raw(self, variant: Variant) -> np.ndarray:
        if variant == "without-lam":
            return np.array([self.v_feature, self.c_rate])
        return np.array([self.v_feature, self.q_now, self.c_rate, self.eps_estimate])


@dataclass
class EnvState:
    truth_state: Any
    aging: AgingState
    c_rate: float
    eps_estimate: float
    v_feature: float
    steps: int = 0
    done: bool = False


@dataclass
class Transition:
    obs: np.ndarray  # normalized
    action: np.ndarray  # clamped, physical units
    reward: float
    r1: float
    r2: float
    r3: float
    penalty: bool
    next_obs: np.ndarray
    done: bool
    raw_obs: Observation
    next_raw_obs: Observation
    info: Dict[str, Any] = field(default_factory=dict)

    def summary(self) -> dict:
        rec: Optional[CycleRecord] = self.info.get("record")
        return {
            "cycle": rec.cycle_index if rec is not None else None,
            "obs": self.raw_obs.__dict__,
            "action": [float(a) for a in self.action],
            "reward": self.reward,
            "r1": self.r1,
            "r2": self.r2,
            "r3": self.r3,
            "penalty": self.penalty,
            "next_obs": self.next_raw_obs.__dict__,
            "done": self.done,
            "failure": self.info.get("failure"),
            "eps_pos_true": self.info.get("eps_pos_true"),
            "q_loss": self.info.get("q_loss"),
        }


def predictor_mismatch(
    record: CycleRecord,
    params: CellParams,
    eps_estimate: float,
    dt: float,
    cap: float,
    voltage: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """Mean |V_cell - V_r| of an SPM at ``eps_estimate`` replaying the logged current.

    The SPM starts from the electrode-averaged truth shells at charge start.
    Samples after the predictor saturates count as ``cap`` volts.
    """
    v_cell = record.voltage if voltage is None else voltage
    err = np.full(v_cell.size, cap)
    state = spm.SpmState(
        shell_conc_neg=np.asarray(record.start_shells_neg, dtype=float).copy(),
        shell_conc_pos=np.asarray(record.start_shells_pos, dtype=float).copy(),
        eps_pos=float(eps_estimate),
    )
    try:
        for k, i_app in enumerate(record.current):
            state = spm.spm_step(state, params, float(i_app), dt)
            err[k] = abs(v_cell[k] - spm.spm_voltage(state, params, float(i_app)))
    except (SaturationError, KineticsError) as exc:
        LOGGER.debug("SPM predictor saturated at eps=%.4f: %s", eps_estimate, exc)
    return (float(err.mean()) if err.size else 0.0), err


class ChargingEnv(gym.Env):
    """Gymnasium environment over repeated CCCV cycles of an aging cell.

    Observations are normalized to [-1, 1]; actions are physical increments
    (d_c_rate[, d_eps]) bounded by the action space.
    """

    metadata = {"render_modes": []}

    def __init__(self, params: CellParams, config: EnvConfig = EnvConfig(), trace_sink=None):
        self.params = params
        self.config = config
        self.trace_sink = trace_sink
        self.truth = make_truth(params, config.truth)
        self.eps0 = params.positive.active_fraction
        blind = config.variant == "without-lam"
        n_obs = 2 if blind else 4
        bounds = np.array([config.d_c_rate_max] if blind else [config.d_c_rate_max, config.d_eps_max])
        self.observation_space = spaces.Box(-1.0, 1.0, shape=(n_obs,), dtype=np.float64)
        self.action_space = spaces.Box(-bounds, bounds, dtype=np.float64)
        q = params.capacity.nominal_ah
        p = config.protocol
        ranges = {
            "v": config.v_range,
            "q": (config.q_range_frac[0] * q, config.q_range_frac[1] * q),
            "c": (p.c_min, p.c_max),
            "e": (config.eps_range_frac[0] * self.eps0, config.eps_range_frac[1] * self.eps0),
        }
        keys = ("v", "c") if blind else ("v", "q", "c", "e")
        self._lo = np.array([ranges[k][0] for k in keys])
        self._hi = np.array([ranges[k][1] for k in keys])
        self.state: Optional[EnvState] = None

    # ---------------------- observation helpers ----------------------

    def observation(self) -> Observation:
        s = self.state
        return Observation(s.v_feature, s.aging.q_now, s.c_rate, s.eps_estimate)

    def normalize(self, obs: Observation) -> np.ndarray:
        raw = obs.raw(self.config.variant)
        return np.clip(2.0 * (raw - self._lo) / (self._hi - self._lo) - 1.0, -1.0, 1.0)

    # ---------------------- gymnasium API ----------------------

    def reset(self, *, seed: Optional[int] = None, options: Optional[dict] = None):
        super().reset(seed=seed)
        cfg = self.config
        truth_state = self.truth.init(0.0, self.eps0)
        self.state = EnvState(
            truth_state=truth_state,
            aging=fresh_aging(self.params),
            c_rate=cfg.init_c_rate,
            eps_estimate=self.eps0,
            v_feature=float(self.truth.voltage(truth_state, 0.0)),
        )
        obs = self.observation()
        return self.normalize(obs), {"raw": obs}

    def step(self, action):
        tr = self.transition(action)
        terminated = tr.done and not tr.info.get("truncated", False)
        truncated = bool(tr.info.get("truncated", False))
        return tr.next_obs, tr.reward, terminated, truncated, {"transition": tr}

    # ---------------------- transition ----------------------

    def _v_feature(self, record: CycleRecord, volts: np.ndarray) -> float:
        mask = record.cc_mask
        if not mask.any():
            return float(volts[0]) if volts.size else self.state.v_feature
        cc = volts[mask]
        return float(cc.mean() if self.config.v_feature == "cc_mean" else cc[-1])

    def transition(self, action) -> Transition:
        if self.state is None:
            raise EpisodeDoneError("reset() must be called before step()")
        if self.state.done:
            raise EpisodeDoneError("episode is done; call reset()")
        cfg = self.config
        s = self.state
        blind = cfg.variant == "without-lam"
        a = np.clip(np.asarray(action, dtype=float).reshape(-1), self.action_space.low, self.action_space.high)
        if a.size != self.action_space.shape[0]:
            raise ValueError(f"action must have {self.action_space.shape[0]} components, got {a.size}")
        obs_before = self.observation()

        p = cfg.protocol
        c_rate = float(np.clip(s.c_rate + a[0], p.c_min, p.c_max))
        eps_est = self.eps0 if blind else float(np.clip(s.eps_estimate + a[1], cfg.eps_floor, 1.0))

        info: Dict[str, Any] = {"failure": None, "truncated": False}
        r1 = c_rate
        r2 = r3 = 0.0
        penalty = False
        done = False
        if self.trace_sink is not None:
            self.trace_sink.start_cycle(s.aging.cycle_index + 1)
        try:
            truth_state, record = run_cccv_cycle(
                self.truth, s.truth_state, s.aging, c_rate, p, eps_est, trace_sink=self.trace_sink
            )
            aging = advance_aging(s.aging, self.params.degradation.lam, self.params, c_rate)
        except CellDeadError as exc:
            LOGGER.warning("cell dead at cycle %d: %s", s.aging.cycle_index + 1, exc)
            info["failure"] = "cell-dead"
            penalty = True
            done = True
        except LamChargeError as exc:
            LOGGER.warning("cycle %d failed (%s); terminating episode", s.aging.cycle_index + 1, exc)
            info["failure"] = type(exc).__name__
            penalty = True
            done = True

        if info["failure"] is None:
            volts = record.voltage
            if cfg.voltage_noise_std > 0:
                volts = volts + self.np_random.normal(0.0, cfg.voltage_noise_std, size=volts.size)
            mae, _ = predictor_mismatch(record, self.params, eps_est, p.dt, cfg.mismatch_cap, volts)
            # capacity term only rewards the physics-informed agent
            r2 = 0.0 if blind else aging.q_now
            r3 = -mae
            if not blind and aging.eps_pos_true < cfg.eps_bound_fraction * self.eps0:
                penalty = True
                done = cfg.terminate_on_bound
            record.q_now = aging.q_now
            record.eps_pos_true = aging.eps_pos_true
            s.truth_state = self.truth.with_eps(truth_state, aging.eps_pos_true)
            s.aging = aging
            s.v_feature = self._v_feature(record, volts)
            info["record"] = record
        else:
            aging = s.aging

        reward = cfg.alpha1 * r1 + cfg.alpha2 * r2 + cfg.alpha3 * r3 - cfg.penalty * float(penalty)
        s.c_rate = c_rate
        s.eps_estimate = eps_est
        s.steps += 1
        if not done and s.steps >= cfg.episode_length:
            done = True
            info["truncated"] = True
        s.done = done
        info["eps_pos_true"] = aging.eps_pos_true
        info["q_loss"] = aging.q_loss
        if "record" in info:
            rec = info["record"]
            rec.r1, rec.r2, rec.r3, rec.reward, rec.penalty = r1, r2, r3, reward, penalty

        obs_after = self.observation()
        return Transition(
            obs=self.normalize(obs_before),
            action=a,
            reward=float(reward),
            r1=r1,
            r2=r2,
            r3=r3,
            penalty=penalty,
            next_obs=self.normalize(obs_after),
            done=done,
            raw_obs=obs_before,
            next_raw_obs=obs_after,
            info=info,
        )


def make_env(params: CellParams, config: EnvConfig = EnvConfig(), trace_sink=None) -> ChargingEnv:
    return ChargingEnv(params, config, trace_sink)
