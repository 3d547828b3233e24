"""On-policy data collection into padded episode batches.

Two collection modes share one batch layout:

* ``rollout_length == 0``: every update samples ``batch_size`` fresh episodes
  that run until termination or the episode limit.
* ``rollout_length == L``: ``batch_size`` persistent worlds each advance ``L``
  steps per update and reset themselves when an episode ends.

Every world owns persistent PRNG streams (one for the environment, one for
action sampling), and worlds are grouped into fixed-size
chunks, so the collected data does not depend on how many worker threads
process the chunks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .envs import VecEnv, make_env
from .nets import PolicyParams, policy_forward_all


@dataclass
class EpisodeBatch:
    """b parallel trajectory segments padded to a common length T.

    ``next_state``/``next_actions`` hold s_{t+1}, u_{t+1} for every step; at a
    truncation they hold the final state and an action sampled there for
    bootstrapping. ``cont[b, t]`` says step t+1 belongs to the same episode.
    """

    state: np.ndarray        # (B, T, ds)
    obs: np.ndarray          # (B, T, n, do)
    actions: np.ndarray      # (B, T, n) int
    probs: np.ndarray        # (B, T, n, k) behaviour probabilities
    reward: np.ndarray       # (B, T)
    terminated: np.ndarray   # (B, T) bool, natural termination at t
    mask: np.ndarray         # (B, T) bool, valid step
    cont: np.ndarray         # (B, T) bool
    first: np.ndarray        # (B, T) bool, episode starts at t
    next_state: np.ndarray   # (B, T, ds)
    next_actions: np.ndarray  # (B, T, n) int
    h0: np.ndarray | None = None  # (B, n, hidden) recurrent state at segment start

    @property
    def n_agents(self) -> int:
        return self.actions.shape[2]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[3]

    def onehot(self, actions: np.ndarray | None = None) -> np.ndarray:
        acts = self.actions if actions is None else actions
        return np.eye(self.n_actions)[acts]

    def valid_index(self) -> np.ndarray:
        return np.flatnonzero(self.mask.reshape(-1))

    def padded(self, extra: int) -> "EpisodeBatch":
        """Append ``extra`` dead steps (masked out)."""
        def pad(x, value=0):
            widths = [(0, 0), (0, extra)] + [(0, 0)] * (x.ndim - 2)
            return np.pad(x, widths, constant_values=value)

        return EpisodeBatch(pad(self.state), pad(self.obs), pad(self.actions), pad(self.probs, 0.25),
                            pad(self.reward), pad(self.terminated, False), pad(self.mask, False),
                            pad(self.cont, False), pad(self.first, False), pad(self.next_state),
                            pad(self.next_actions), self.h0)


@dataclass
class EpisodeStats:
    world: int
    ret: float
    length: int
    entropy: float
    terminated: bool
    success: bool


def sample_categorical(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF draws over the last axis of ``probs`` given U(0,1) ``uniforms``."""
    cdf = np.cumsum(probs, axis=-1)
    u = uniforms * cdf[..., -1]
    return np.minimum((u[..., None] >= cdf).sum(axis=-1), probs.shape[-1] - 1)


def entropy_np(p: np.ndarray) -> np.ndarray:
    return -(p * np.log(np.maximum(p, 1e-12))).sum(axis=-1)


class _Chunk:
    def __init__(self, env: VecEnv, worlds: range, seed: int):
        self.env = env
        self.worlds = worlds
        self.seed = seed
        self.env_rngs = [np.random.default_rng(np.random.SeedSequence([seed, 1, w])) for w in worlds]
        self.act_rngs = [np.random.default_rng(np.random.SeedSequence([seed, 2, w])) for w in worlds]
        self.hidden: np.ndarray | None = None
        self.ep_ret = np.zeros(len(worlds))
        self.ep_len = np.zeros(len(worlds), dtype=np.int64)
        self.ep_ent = np.zeros(len(worlds))
        self.needs_reset = np.ones(len(worlds), dtype=bool)

    def reset_world(self, j: int) -> None:
        self.env.reset_world(j, self.env_rngs[j])
        self.ep_ret[j] = 0.0
        self.ep_len[j] = 0
        self.ep_ent[j] = 0.0
        if self.hidden is not None:
            self.hidden[j] = 0.0
        self.needs_reset[j] = False


class Runner:
    def __init__(self, env_name: str, policy: PolicyParams, n_worlds: int, seed: int,
                 rollout_length: int = 0, chunk: int = 8, workers: int = 1, n_agents: int = 3,
                 episode_limit: int = 200, gamma: float = 0.99):
        self.policy = policy
        self.rollout_length = rollout_length
        self.workers = workers
        self.chunks = []
        for start in range(0, n_worlds, chunk):
            worlds = range(start, min(start + chunk, n_worlds))
            env = make_env(env_name, len(worlds), n_agents, episode_limit, gamma)
            self.chunks.append(_Chunk(env, worlds, seed))
        self.spec = self.chunks[0].env.spec
        self.n_worlds = n_worlds

    def collect(self) -> tuple[EpisodeBatch, list[EpisodeStats]]:
        if self.workers > 1 and len(self.chunks) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                parts = list(pool.map(self._collect_chunk, self.chunks))
        else:
            parts = [self._collect_chunk(c) for c in self.chunks]
        t_max = max(p[0]["mask"].shape[1] for p in parts)
        fields_ = {}
        for key in parts[0][0]:
            arrs = []
            for p, _ in parts:
                a = p[key]
                if a is not None and a.ndim >= 2 and key != "h0" and a.shape[1] < t_max:
                    widths = [(0, 0), (0, t_max - a.shape[1])] + [(0, 0)] * (a.ndim - 2)
                    a = np.pad(a, widths, constant_values=0.25 if key == "probs" else 0)
                arrs.append(a)
            fields_[key] = None if arrs[0] is None else np.concatenate(arrs, axis=0)
        stats = [s for _, ss in parts for s in ss]
        stats.sort(key=lambda s: s.world)
        return EpisodeBatch(**fields_), stats

    def _policy(self, obs: np.ndarray, hidden: np.ndarray | None):
        probs, new_h = policy_forward_all(self.policy, obs, hidden)
        return probs.data, (None if new_h is None else new_h.data)

    def _sample(self, c: _Chunk, probs: np.ndarray, rows) -> np.ndarray:
        acts = np.zeros(probs.shape[:2], dtype=np.int64)
        if len(rows):
            u = np.stack([c.act_rngs[j].random(probs.shape[1]) for j in rows])
            acts[rows] = sample_categorical(probs[rows], u)
        return acts

    def _collect_chunk(self, c: _Chunk):
        env, spec = c.env, self.spec
        e, n = env.n_envs, spec.n_agents
        recurrent = self.policy.recurrent
        fragment = self.rollout_length > 0
        if recurrent and c.hidden is None:
            c.hidden = self.policy.zero_hidden(e)
        if not fragment:
            c.needs_reset[:] = True
        for j in np.flatnonzero(c.needs_reset):
            c.reset_world(j)
        h0 = None if not recurrent else c.hidden.copy()
        horizon = self.rollout_length if fragment else spec.episode_limit

        rec = {k: [] for k in ("state", "obs", "actions", "probs", "reward", "terminated",
                               "mask", "first", "next_state", "ended")}
        boot_actions = np.zeros((e, horizon, n), dtype=np.int64)
        active = np.ones(e, dtype=bool)
        stats: list[EpisodeStats] = []
        first = c.ep_len == 0
        for t in range(horizon):
            obs = env.observations()
            state = env.state()
            probs, new_h = self._policy(obs, c.hidden)
            acts = self._sample(c, probs, np.flatnonzero(active))
            res = env.step(acts)
            limit = env.t >= spec.episode_limit
            ended = (res.terminated | limit) & active
            ent = entropy_np(probs).mean(axis=1)
            c.ep_ret += np.where(active, res.reward, 0.0)
            c.ep_ent += np.where(active, ent, 0.0)
            c.ep_len += active
            if recurrent:
                c.hidden = new_h
            # bootstrap actions where the episode is cut by the time limit or segment end
            cut = (limit & ~res.terminated & active)
            if fragment and t == horizon - 1:
                cut = cut | (active & ~ended)
            if cut.any():
                bprobs, _ = self._policy(res.next_obs, c.hidden)
                boot_actions[:, t] = self._sample(c, bprobs, np.flatnonzero(cut))
            for key, val in (("state", state), ("obs", obs), ("actions", acts), ("probs", probs),
                             ("reward", res.reward), ("terminated", res.terminated & active),
                             ("mask", active.copy()), ("first", first & active),
                             ("next_state", res.next_state), ("ended", ended)):
                rec[key].append(val)
            for j in np.flatnonzero(ended):
                success = bool(res.info["success"][j]) if "success" in res.info else False
                stats.append(EpisodeStats(c.worlds[j], float(c.ep_ret[j]), int(c.ep_len[j]),
                                          float(c.ep_ent[j] / c.ep_len[j]), bool(res.terminated[j]),
                                          success))
            first = np.zeros(e, dtype=bool)
            if fragment:
                for j in np.flatnonzero(ended):
                    c.reset_world(j)
                first = ended.copy()
            else:
                active = active & ~ended
                if not active.any():
                    break
        if not fragment:
            c.needs_reset[:] = True

        arr = {k: np.stack(v, axis=1) for k, v in rec.items()}
        steps = arr["mask"].shape[1]
        boot_actions = boot_actions[:, :steps]
        mask, ended = arr["mask"], arr["ended"]
        cont = np.zeros_like(mask)
        cont[:, :-1] = mask[:, 1:] & ~ended[:, :-1]
        next_actions = np.zeros_like(arr["actions"])
        next_actions[:, :-1] = arr["actions"][:, 1:]
        next_actions = np.where(cont[:, :, None], next_actions, boot_actions)
        del arr["ended"]
        arr.update(cont=cont, next_actions=next_actions, h0=h0)
        return arr, stats
