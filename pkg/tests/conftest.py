import gymnasium as gym
import numpy as np
import pytest
from gymnasium import spaces

from packages.engines import dfn
from packages.engines.cellparams import load_params
from packages.engines.env import EnvConfig
from packages.engines.protocol import ProtocolConfig, TruthSettings


@pytest.fixture(scope="session")
def params():
    return load_params()


@pytest.fixture(scope="session")
def coarse_mesh(params):
    return dfn.dfn_mesh(params, n_x=5, n_r=5)


@pytest.fixture
def fast_protocol():
    return ProtocolConfig(dt=30.0, rest_s=300.0)


@pytest.fixture
def spm_env_config(fast_protocol):
    """Environment on the SPM truth with coarse steps; the predictor matches the truth exactly."""
    return EnvConfig(protocol=fast_protocol, truth=TruthSettings(model="spm"), episode_length=5)


class BanditEnv(gym.Env):
    """One-step bandit with reward -|a - target|; the optimal mean action is ``target``."""

    def __init__(self, target: float = 0.5):
        self.target = target
        self.observation_space = spaces.Box(-1.0, 1.0, shape=(1,), dtype=np.float64)
        self.action_space = spaces.Box(-1.0, 1.0, shape=(1,), dtype=np.float64)

    def reset(self, *, seed=None, options=None):
        super().reset(seed=seed)
        return np.array([1.0]), {}

    def step(self, action):
        reward = -abs(float(np.asarray(action).reshape(-1)[0]) - self.target)
        return np.array([1.0]), reward, True, False, {}


@pytest.fixture
def bandit_factory():
    return lambda: BanditEnv(0.5)
