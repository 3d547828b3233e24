from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    n_actions: int
    obs_dim: int
    state_dim: int
    episode_limit: int
    gamma: float = 0.99

    def __post_init__(self):
        for name in ("n_agents", "n_actions", "obs_dim", "state_dim", "episode_limit"):
            if getattr(self, name) < 1:
                raise ValueError(f"EnvSpec.{name} must be positive, got {getattr(self, name)}")


@dataclass
class StepResult:
    """Transition output for every world; arrays carry a leading world axis.

    ``reward`` is shared by all agents of a world.
    """

    next_state: np.ndarray
    next_obs: np.ndarray
    reward: np.ndarray
    terminated: np.ndarray
    info: dict = field(default_factory=dict)


class VecEnv:
    """Common surface for the batched environments.

    Each of the ``n_envs`` worlds owns a PRNG handed over at reset, so a world's
    trajectory depends only on its seed and its actions.
    """

    spec: EnvSpec
    n_envs: int

    def reset(self, rngs: list[np.random.Generator]) -> None:
        if len(rngs) != self.n_envs:
            raise ValueError(f"need {self.n_envs} rngs, got {len(rngs)}")
        for i, rng in enumerate(rngs):
            self.reset_world(i, rng)

    def reset_world(self, i: int, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def step(self, joint_action) -> StepResult:
        raise NotImplementedError

    def observe(self, agent_id: int) -> np.ndarray:
        raise NotImplementedError

    def state(self) -> np.ndarray:
        raise NotImplementedError

    def observations(self) -> np.ndarray:
        """(n_envs, n_agents, obs_dim)."""
        return np.stack([self.observe(a) for a in range(self.spec.n_agents)], axis=1)

    def _actions(self, joint_action) -> np.ndarray:
        acts = np.asarray(joint_action)
        if acts.ndim == 1:
            acts = acts[None, :]
        if acts.shape != (self.n_envs, self.spec.n_agents):
            raise ValueError(f"joint action shape {acts.shape} != ({self.n_envs}, {self.spec.n_agents})")
        if not np.issubdtype(acts.dtype, np.integer) or acts.min() < 0 or acts.max() >= self.spec.n_actions:
            raise ValueError(f"invalid action index in {acts.tolist()} (valid: 0..{self.spec.n_actions - 1})")
        return acts.astype(np.int64)

    def _agent(self, agent_id: int) -> None:
        if not 0 <= agent_id < self.spec.n_agents:
            raise IndexError(f"agent_id {agent_id} out of range for {self.spec.n_agents} agents")


def dump_step(fh: IO[str], t: int, state: np.ndarray, obs: np.ndarray, actions: np.ndarray, reward: float) -> None:
    """Append one JSONL trajectory record."""
    fh.write(json.dumps({"t": t, "state": state.tolist(), "obs": obs.tolist(),
                         "actions": np.asarray(actions).tolist(), "reward": float(reward)}) + "\n")
