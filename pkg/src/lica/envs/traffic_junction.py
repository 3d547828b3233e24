"""One-step traffic junction: two vehicles, each may pass or wait."""

from __future__ import annotations

import numpy as np

from .base import EnvSpec, StepResult, VecEnv

PASS, WAIT = 0, 1


class TrafficJunction(VecEnv):
    """Shared reward 1 when exactly one agent passes, else 0. Always terminates."""

    def __init__(self, n_envs: int = 1):
        self.n_envs = n_envs
        self.spec = EnvSpec(n_agents=2, n_actions=2, obs_dim=3, state_dim=1, episode_limit=1)
        self.t = np.zeros(n_envs, dtype=np.int64)

    def reset_world(self, i: int, rng: np.random.Generator) -> None:
        self.t[i] = 0

    def observe(self, agent_id: int) -> np.ndarray:
        self._agent(agent_id)
        obs = np.zeros((self.n_envs, 3))
        obs[:, 0] = 1.0
        obs[:, 1 + agent_id] = 1.0
        return obs

    def state(self) -> np.ndarray:
        return np.ones((self.n_envs, 1))

    def step(self, joint_action) -> StepResult:
        acts = self._actions(joint_action)
        reward = (acts[:, 0] != acts[:, 1]).astype(np.float64)
        self.t += 1
        return StepResult(self.state(), self.observations(), reward, np.ones(self.n_envs, dtype=bool),
                          {"success": reward > 0.5})


def payoff_table() -> np.ndarray:
    """Exact Q(u1, u2) of the one-step game."""
    return np.array([[0.0, 1.0], [1.0, 0.0]])


def optimal_mass(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Probability of landing on one of the two optimal joint actions."""
    return p1[..., PASS] * p2[..., WAIT] + p1[..., WAIT] * p2[..., PASS]
