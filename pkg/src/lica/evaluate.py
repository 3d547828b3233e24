"""Roll out frozen policies and summarize returns."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import TrainConfig
from .envs import make_env
from .nets import PolicyParams, load_checkpoint, policy_forward_all, zero_
from .rollout import sample_categorical
from .training import build_policy, env_spec

SUCCESS_NAME = {"traffic_junction": "optimal_rate", "predator_prey": "capture_rate"}


def load_policy(path: str | Path) -> tuple[PolicyParams, TrainConfig]:
    groups, meta = load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    policy = build_policy(cfg, env_spec(cfg), np.random.default_rng(0))
    for k, t in groups["policy"].items():
        policy.tensors[k].data = t.data
    return policy, cfg


def uniform_policy(cfg: TrainConfig) -> PolicyParams:
    """A policy with zero parameters, i.e. uniform over actions everywhere."""
    policy = build_policy(cfg, env_spec(cfg), np.random.default_rng(0))
    zero_(policy.tensors)
    return policy


def evaluate(policy: PolicyParams, cfg: TrainConfig, episodes: int, greedy: bool = False, seed: int = 0,
             chunk: int = 64) -> dict:
    """Run ``episodes`` full episodes; greedy takes the argmax action.

    Evaluation streams are seeded apart from the training streams.
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    returns, lengths, success = [], [], []
    for start in range(0, episodes, chunk):
        worlds = range(start, min(start + chunk, episodes))
        e = len(worlds)
        env = make_env(cfg.env, e, cfg.n_agents, cfg.episode_limit, cfg.gamma)
        env.reset([np.random.default_rng(np.random.SeedSequence([seed, 4, w])) for w in worlds])
        act_rngs = [np.random.default_rng(np.random.SeedSequence([seed, 5, w])) for w in worlds]
        hidden = policy.zero_hidden(e) if policy.recurrent else None
        active = np.ones(e, dtype=bool)
        ret = np.zeros(e)
        length = np.zeros(e, dtype=np.int64)
        won = np.zeros(e, dtype=bool)
        while active.any():
            probs, new_h = policy_forward_all(policy, env.observations(), hidden)
            probs = probs.data
            if greedy:
                acts = probs.argmax(axis=-1)
            else:
                u = np.stack([rng.random(probs.shape[1]) for rng in act_rngs])
                acts = sample_categorical(probs, u)
            res = env.step(acts)
            hidden = None if new_h is None else new_h.data
            ret += np.where(active, res.reward, 0.0)
            length += active
            if "success" in res.info:
                won |= active & res.info["success"]
            active &= ~(res.terminated | (env.t >= cfg.episode_limit))
        returns.extend(ret)
        lengths.extend(length)
        success.extend(won)
    returns = np.array(returns)
    sd = float(returns.std(ddof=1)) if episodes > 1 else 0.0
    out = {"episodes": episodes, "mode": "greedy" if greedy else "sample",
           "mean_reward": float(returns.mean()), "std_reward": sd,
           "stderr_reward": sd / float(np.sqrt(episodes)),
           "mean_length": float(np.mean(lengths))}
    if cfg.env in SUCCESS_NAME:
        out[SUCCESS_NAME[cfg.env]] = float(np.mean(success))
    return out
