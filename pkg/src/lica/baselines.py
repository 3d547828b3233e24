"""COMA: counterfactual-advantage actor-critic, for the credit-assignment comparison."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .envs import EnvSpec
from .nets import Params, assign, clone, detached, init_linear, linear
from .optim import Adam, apply_gradients
from .rollout import EpisodeBatch
from .training import (build_policy, entropy_regularizer, flat_rows, policy_probs, td_lambda_targets,
                       _finite)


@dataclass
class ComaCriticParams:
    """(state, other agents' one-hot actions, agent id) -> Q for each of the agent's k actions."""

    state_dim: int
    n_agents: int
    n_actions: int
    hidden: int = 64
    tensors: Params = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.state_dim + self.n_agents * self.n_actions + self.n_agents

    @classmethod
    def init(cls, rng: np.random.Generator, state_dim: int, n_agents: int, n_actions: int,
             hidden: int = 64) -> "ComaCriticParams":
        c = cls(state_dim, n_agents, n_actions, hidden)
        init_linear(c.tensors, "fc1", c.input_dim, hidden, rng)
        init_linear(c.tensors, "fc2", hidden, hidden, rng)
        init_linear(c.tensors, "fc3", hidden, n_actions, rng)
        return c


def coma_inputs(state: np.ndarray, actions: np.ndarray, n_actions: int) -> np.ndarray:
    """(N, ds), (N, n) -> (N, n, input_dim): agent a's own action block is zeroed."""
    rows, n = actions.shape
    onehot = np.eye(n_actions)[actions]
    others = np.broadcast_to(onehot[:, None], (rows, n, n, n_actions)).copy()
    others[:, np.arange(n), np.arange(n)] = 0.0
    ids = np.broadcast_to(np.eye(n), (rows, n, n))
    st = np.broadcast_to(state[:, None], (rows, n, state.shape[1]))
    return np.concatenate([st, others.reshape(rows, n, n * n_actions), ids], axis=-1)


def coma_critic_forward(critic: ComaCriticParams, inputs: Tensor, tensors: Params | None = None) -> Tensor:
    """(N, n, input_dim) -> (N, n, k)."""
    t = critic.tensors if tensors is None else tensors
    rows, n, d = inputs.shape
    x = ad.reshape(inputs, (rows * n, d))
    h = ad.relu(linear(t, "fc1", x))
    h = ad.relu(linear(t, "fc2", h))
    return ad.reshape(linear(t, "fc3", h), (rows, n, critic.n_actions))


def counterfactual_advantage(q_values: np.ndarray, pi: np.ndarray, chosen: int) -> float:
    """A = Q(s, u) - sum_u' pi(u') Q(s, (u^-a, u')).

    ``q_values[u']`` is Q with agent a's action replaced by u' and the other
    agents' actions held fixed.
    """
    q_values = np.asarray(q_values, dtype=np.float64)
    return float(q_values[chosen] - np.dot(pi, q_values))


def table_advantages(q_table: np.ndarray, policies: list[np.ndarray]) -> np.ndarray:
    """Counterfactual advantage of every agent for every joint action of a Q table.

    ``q_table`` has one axis per agent. Returns an array shaped
    ``q_table.shape + (n_agents,)``.
    """
    n = q_table.ndim
    out = np.zeros(q_table.shape + (n,))
    for joint in np.ndindex(*q_table.shape):
        for a in range(n):
            row = []
            for alt in range(q_table.shape[a]):
                j = list(joint)
                j[a] = alt
                row.append(q_table[tuple(j)])
            out[joint + (a,)] = counterfactual_advantage(np.array(row), policies[a], joint[a])
    return out


def coma_policy_loss(probs: Tensor, q_values: np.ndarray, actions: np.ndarray, cfg: TrainConfig) -> tuple[Tensor, float, float]:
    """-mean(A * log pi(u)) plus the entropy term. Advantages are constants."""
    k = probs.shape[-1]
    onehot = np.eye(k)[actions]
    pi = probs.data
    baseline = (pi * q_values).sum(axis=-1)
    adv = (onehot * q_values).sum(axis=-1) - baseline
    logp = ad.sum(ad.mul(ad.log(probs), Tensor(onehot)), axis=-1)
    pg = ad.mean(ad.mul(logp, Tensor(adv)))
    ent_loss, h = entropy_regularizer(probs, cfg.entropy_mode, cfg.entropy_coef)
    return ad.add(ad.scale(pg, -1.0), ent_loss), float(np.mean(adv)), h


def coma_policy_step(batch: EpisodeBatch, policy, critic: ComaCriticParams, cfg: TrainConfig, opt: Adam) -> tuple[float, float]:
    rows = flat_rows(batch)
    inputs = coma_inputs(rows["state"], rows["actions"], batch.n_actions)
    q_values = coma_critic_forward(critic, Tensor(inputs), detached(critic.tensors)).data
    with ad.Tape() as tape:
        probs = policy_probs(policy, batch)
        loss, _, h = coma_policy_loss(probs, q_values, rows["actions"], cfg)
    _finite(loss.item(), "COMA policy loss", entropy=h)
    tape.backward(loss)
    apply_gradients(opt, cfg.grad_clip)
    return -loss.item(), h


class ComaLearner:
    def __init__(self, cfg: TrainConfig, spec: EnvSpec, rng: np.random.Generator):
        self.cfg = cfg
        self.spec = spec
        self.policy = build_policy(cfg, spec, rng)
        self.critic = ComaCriticParams.init(rng, spec.state_dim, spec.n_agents, spec.n_actions, cfg.critic_hidden)
        self.target = clone(self.critic.tensors)
        self.policy_opt = Adam(self.policy.tensors, cfg.policy_lr)
        self.critic_opt = Adam(self.critic.tensors, cfg.critic_lr)
        self.critic_updates = 0

    def targets(self, batch: EpisodeBatch) -> np.ndarray:
        b, t = batch.mask.shape
        n, k = batch.n_agents, batch.n_actions
        na = batch.next_actions.reshape(b * t, n)
        inputs = coma_inputs(batch.next_state.reshape(b * t, -1), na, k)
        q = coma_critic_forward(self.critic, Tensor(inputs), self.target).data
        q_next = np.take_along_axis(q, na[:, :, None], axis=-1)[..., 0].reshape(b, t, n)
        return td_lambda_targets(batch.reward, batch.terminated, batch.cont, q_next,
                                 self.cfg.gamma, self.cfg.td_lambda, batch.mask)

    def critic_step(self, batch: EpisodeBatch, targets: np.ndarray) -> float:
        rows = flat_rows(batch)
        n, k = batch.n_agents, batch.n_actions
        y = targets.reshape(-1, n)[rows["idx"]]
        inputs = coma_inputs(rows["state"], rows["actions"], k)
        chosen = np.eye(k)[rows["actions"]]
        with ad.Tape() as tape:
            q = coma_critic_forward(self.critic, Tensor(inputs))
            q_taken = ad.sum(ad.mul(q, Tensor(chosen)), axis=-1)
            loss = ad.mean(ad.square(ad.sub(Tensor(y), q_taken)))
        _finite(loss.item(), "COMA critic loss")
        tape.backward(loss)
        apply_gradients(self.critic_opt, self.cfg.grad_clip)
        return loss.item()

    def update(self, batch: EpisodeBatch) -> dict:
        closs = self.critic_step(batch, self.targets(batch))
        self.critic_updates += 1
        obj, h = coma_policy_step(batch, self.policy, self.critic, self.cfg, self.policy_opt)
        if self.critic_updates % self.cfg.target_update_interval == 0:
            assign(self.target, self.critic.tensors)
        return {"critic_loss": closs, "objective": obj, "entropy": h}

    def groups(self) -> dict:
        return {"policy": self.policy.tensors, "critic": self.critic.tensors, "target": self.target}

    def rng_state(self) -> dict:
        return {}
