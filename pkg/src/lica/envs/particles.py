"""Desk-scale particle worlds: cooperative navigation and predator-prey.

Physics is a damped velocity integrator. Constants are our own and make no
claim of parity with any other particle simulator.
"""

from __future__ import annotations

import numpy as np

from .base import EnvSpec, StepResult, VecEnv

UP, DOWN, LEFT, RIGHT, STOP = range(5)
MOVES = np.array([[0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0], [0.0, 0.0]])

DAMPING = 0.5
FORCE = 1.0
DT = 0.1
AGENT_RADIUS = 0.05
SPAWN = 1.0


def integrate(pos: np.ndarray, vel: np.ndarray, actions: np.ndarray, force: float = FORCE):
    vel = vel * (1.0 - DAMPING) + MOVES[actions] * force * DT
    return pos + vel * DT, vel


def _pairwise(pos: np.ndarray) -> np.ndarray:
    diff = pos[:, :, None, :] - pos[:, None, :, :]
    return np.linalg.norm(diff, axis=-1)


def _relative(points: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """(E, m, 2) relative to (E, 2), flattened to (E, 2m)."""
    return (points - origin[:, None, :]).reshape(points.shape[0], -1)


class CooperativeNavigation(VecEnv):
    """n agents must cover n landmarks without bumping into each other.

    Shared reward: minus the sum over landmarks of the distance to the nearest
    agent, minus one per colliding agent pair.
    """

    def __init__(self, n_agents: int = 3, n_envs: int = 1, episode_limit: int = 200, gamma: float = 0.9):
        self.n = n_agents
        self.n_envs = n_envs
        self.spec = EnvSpec(n_agents=n_agents, n_actions=5, obs_dim=4 * n_agents,
                            state_dim=6 * n_agents, episode_limit=episode_limit, gamma=gamma)
        self.pos = np.zeros((n_envs, n_agents, 2))
        self.vel = np.zeros((n_envs, n_agents, 2))
        self.landmarks = np.zeros((n_envs, n_agents, 2))
        self.t = np.zeros(n_envs, dtype=np.int64)

    def reset_world(self, i: int, rng: np.random.Generator) -> None:
        self.pos[i] = rng.uniform(-SPAWN, SPAWN, (self.n, 2))
        self.landmarks[i] = rng.uniform(-SPAWN, SPAWN, (self.n, 2))
        self.vel[i] = 0.0
        self.t[i] = 0

    def observe(self, agent_id: int) -> np.ndarray:
        self._agent(agent_id)
        me = self.pos[:, agent_id]
        others = np.delete(self.pos, agent_id, axis=1)
        return np.concatenate([self.vel[:, agent_id], _relative(others, me),
                               _relative(self.landmarks, me)], axis=1)

    def state(self) -> np.ndarray:
        e = self.n_envs
        return np.concatenate([self.pos.reshape(e, -1), self.vel.reshape(e, -1),
                               self.landmarks.reshape(e, -1)], axis=1)

    def collisions(self) -> np.ndarray:
        d = _pairwise(self.pos)
        iu = np.triu_indices(self.n, k=1)
        return (d[:, iu[0], iu[1]] < 2 * AGENT_RADIUS).sum(axis=1)

    def shared_reward(self) -> np.ndarray:
        dist = np.linalg.norm(self.landmarks[:, :, None, :] - self.pos[:, None, :, :], axis=-1)
        return -dist.min(axis=2).sum(axis=1) - self.collisions()

    def step(self, joint_action) -> StepResult:
        acts = self._actions(joint_action)
        self.pos, self.vel = integrate(self.pos, self.vel, acts)
        self.t += 1
        reward = self.shared_reward()
        return StepResult(self.state(), self.observations(), reward,
                          np.zeros(self.n_envs, dtype=bool), {"collisions": self.collisions()})


class PredatorPrey(VecEnv):
    """Three predators chase one faster, uniformly random prey past two obstacles.

    Shared reward: minus the prey's distance to the nearest predator; a capture
    (any predator within ``CAPTURE_RADIUS``) adds ``CAPTURE_BONUS`` and ends the
    episode. The arena is the box [-1, 1]^2.
    """

    N_PREDATORS = 3
    N_OBSTACLES = 2
    OBSTACLE_RADIUS = 0.2
    PREY_FORCE = 1.3
    CAPTURE_RADIUS = 0.1
    CAPTURE_BONUS = 10.0

    def __init__(self, n_envs: int = 1, episode_limit: int = 200, gamma: float = 0.99):
        n = self.N_PREDATORS
        self.n_envs = n_envs
        self.spec = EnvSpec(n_agents=n, n_actions=5, obs_dim=6 + 2 * self.N_OBSTACLES + 2 * (n - 1),
                            state_dim=4 * n + 4 + 2 * self.N_OBSTACLES, episode_limit=episode_limit,
                            gamma=gamma)
        self.pos = np.zeros((n_envs, n, 2))
        self.vel = np.zeros((n_envs, n, 2))
        self.prey_pos = np.zeros((n_envs, 2))
        self.prey_vel = np.zeros((n_envs, 2))
        self.obstacles = np.zeros((n_envs, self.N_OBSTACLES, 2))
        self.rngs: list[np.random.Generator | None] = [None] * n_envs
        self.t = np.zeros(n_envs, dtype=np.int64)

    def _free_point(self, rng: np.random.Generator, obstacles: np.ndarray) -> np.ndarray:
        while True:
            p = rng.uniform(-SPAWN, SPAWN, 2)
            if np.all(np.linalg.norm(obstacles - p, axis=1) > self.OBSTACLE_RADIUS + AGENT_RADIUS):
                return p

    def reset_world(self, i: int, rng: np.random.Generator) -> None:
        self.obstacles[i] = rng.uniform(-0.8, 0.8, (self.N_OBSTACLES, 2))
        for a in range(self.N_PREDATORS):
            self.pos[i, a] = self._free_point(rng, self.obstacles[i])
        self.prey_pos[i] = self._free_point(rng, self.obstacles[i])
        self.vel[i] = 0.0
        self.prey_vel[i] = 0.0
        self.rngs[i] = rng
        self.t[i] = 0

    def observe(self, agent_id: int) -> np.ndarray:
        self._agent(agent_id)
        me = self.pos[:, agent_id]
        others = np.delete(self.pos, agent_id, axis=1)
        return np.concatenate([self.vel[:, agent_id], me, self.prey_pos - me,
                               _relative(self.obstacles, me), _relative(others, me)], axis=1)

    def state(self) -> np.ndarray:
        e = self.n_envs
        return np.concatenate([self.pos.reshape(e, -1), self.vel.reshape(e, -1), self.prey_pos,
                               self.prey_vel, self.obstacles.reshape(e, -1)], axis=1)

    def prey_distance(self) -> np.ndarray:
        return np.linalg.norm(self.pos - self.prey_pos[:, None, :], axis=-1).min(axis=1)

    def shared_reward(self) -> np.ndarray:
        return -self.prey_distance()

    def _confine(self, pos: np.ndarray, vel: np.ndarray):
        """Keep bodies inside the arena and outside obstacles; stop on contact."""
        out = np.abs(pos) > SPAWN
        pos = np.clip(pos, -SPAWN, SPAWN)
        vel = np.where(out, 0.0, vel)
        for k in range(self.N_OBSTACLES):
            centre = self.obstacles[:, k]
            if pos.ndim == 3:
                centre = centre[:, None, :]
            diff = pos - centre
            dist = np.linalg.norm(diff, axis=-1, keepdims=True)
            limit = self.OBSTACLE_RADIUS + AGENT_RADIUS
            inside = dist < limit
            safe = np.where(dist > 1e-12, dist, 1.0)
            pos = np.where(inside, centre + diff / safe * limit, pos)
            vel = np.where(inside, 0.0, vel)
        return pos, vel

    def step(self, joint_action) -> StepResult:
        acts = self._actions(joint_action)
        prey_act = np.array([rng.integers(5) for rng in self.rngs])
        pos, vel = integrate(self.pos, self.vel, acts)
        self.pos, self.vel = self._confine(pos, vel)
        ppos, pvel = integrate(self.prey_pos, self.prey_vel, prey_act, force=self.PREY_FORCE)
        self.prey_pos, self.prey_vel = self._confine(ppos, pvel)
        self.t += 1
        captured = self.prey_distance() < self.CAPTURE_RADIUS
        reward = self.shared_reward() + self.CAPTURE_BONUS * captured
        return StepResult(self.state(), self.observations(), reward, captured, {"captured": captured, "success": captured})
