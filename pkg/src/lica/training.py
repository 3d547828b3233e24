"""The LICA optimization loop: TD(lambda) critic regression plus policy ascent
through the mixing critic on action-distribution inputs."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .envs import EnvSpec, make_env
from .nets import (MixingCriticParams, MlpCriticParams, PolicyParams, assign, clone, critic_forward,
                   detached, policy_forward_all, save_checkpoint)
from .optim import Adam, apply_gradients
from .rollout import EpisodeBatch, EpisodeStats, Runner

log = logging.getLogger(__name__)

ENTROPY_FLOOR = 1e-3


class TrainingError(RuntimeError):
    pass


# --- targets ------------------------------------------------------------------

def td_lambda_targets(reward: np.ndarray, terminated: np.ndarray, cont: np.ndarray, q_next: np.ndarray,
                      gamma: float, lam: float, mask: np.ndarray | None = None) -> np.ndarray:
    """Recursive TD(lambda) targets, computed backward over time.

    y_t = r_t + gamma * (1 - term_t) * (lam * y_{t+1} + (1 - lam) * Q(s_{t+1}, u_{t+1}))

    where y_{t+1} is replaced by Q(s_{t+1}, u_{t+1}) when step t+1 is not part of
    the same episode (truncation or segment end). ``q_next`` may carry extra
    trailing axes (e.g. one value per agent); rewards broadcast over them.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    extra = q_next.ndim - reward.ndim

    def lift(x):
        return x.reshape(x.shape + (1,) * extra)

    r, live, c = lift(reward), lift(1.0 - terminated), lift(cont)
    y = np.zeros_like(q_next, dtype=np.float64)
    steps = reward.shape[1]
    for t in range(steps - 1, -1, -1):
        nxt = y[:, t + 1] if t + 1 < steps else np.zeros_like(q_next[:, t])
        boot = np.where(c[:, t], lam * nxt + (1.0 - lam) * q_next[:, t], q_next[:, t])
        y[:, t] = r[:, t] + gamma * live[:, t] * boot
    if mask is not None:
        y = y * lift(mask)
    return y


# --- entropy ------------------------------------------------------------------

def entropy(p: Tensor) -> Tensor:
    """H(p) = -sum_i p_i log p_i over the last axis (natural log)."""
    return ad.scale(ad.sum(ad.mul(p, ad.log(p)), axis=-1), -1.0)


def entropy_regularizer(p: Tensor, mode: str, coeff: float) -> tuple[Tensor, float]:
    """Loss term (to minimize) rewarding policy entropy, plus the mean entropy.

    Entropy is averaged over every agent-step in ``p``. In adaptive mode the
    weight is ``coeff / H`` with H treated as a constant, which rescales each
    per-probability gradient -(log p_i + 1) by 1/H.
    """
    h = ad.mean(entropy(p))
    h_val = h.item()
    if mode == "vanilla":
        weight = coeff
    elif mode == "adaptive":
        weight = coeff / max(ad.stop_gradient(h).item(), ENTROPY_FLOOR)
    else:
        raise ValueError(f"unknown entropy mode {mode!r}")
    return ad.scale(h, -weight), h_val


# --- critic inputs ------------------------------------------------------------

def gumbel_softmax_st(probs: Tensor, rng: np.random.Generator, temperature: float = 1.0) -> Tensor:
    """Straight-through Gumbel-Softmax over the last axis: one-hot forward, soft backward."""
    g = -np.log(-np.log(rng.uniform(1e-300, 1.0, probs.shape)))
    soft = ad.softmax(ad.scale(ad.add(ad.log(probs), Tensor(g)), 1.0 / temperature), axis=-1)
    hard = np.eye(probs.shape[-1])[soft.data.argmax(axis=-1)]
    return ad.straight_through(hard, soft)


def joint_action_input(probs: Tensor, mode: str = "distribution_params",
                       rng: np.random.Generator | None = None, temperature: float = 1.0) -> Tensor:
    """(N, n, k) per-agent distributions -> (N, n*k) critic action input."""
    n_rows, n, k = probs.shape
    if mode == "distribution_params":
        x = probs
    elif mode == "gumbel_st":
        if rng is None:
            raise ValueError("gumbel_st needs an rng")
        x = gumbel_softmax_st(probs, rng, temperature)
    else:
        raise ValueError(f"unknown policy input mode {mode!r}")
    return ad.reshape(x, (n_rows, n * k))


# --- steps ----------------------------------------------------------------------

def _finite(value: float, what: str, **diag) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"{what} is not finite ({value}); diagnostics: {diag}")


def flat_rows(batch: EpisodeBatch) -> dict[str, np.ndarray]:
    """Valid (episode, step) rows flattened in row-major order."""
    idx = batch.valid_index()
    b, t = batch.mask.shape
    def rows(x):
        return x.reshape((b * t,) + x.shape[2:])[idx]
    return {"idx": idx, "state": rows(batch.state), "obs": rows(batch.obs), "actions": rows(batch.actions),
            "next_state": rows(batch.next_state), "next_actions": rows(batch.next_actions)}


def critic_values(critic, tensors, state: np.ndarray, actions: np.ndarray, n_actions: int) -> np.ndarray:
    joint = np.eye(n_actions)[actions].reshape(actions.shape[0], -1)
    return critic_forward(critic, Tensor(state), Tensor(joint), tensors).data


def lica_targets(batch: EpisodeBatch, critic, target_tensors, gamma: float, lam: float) -> np.ndarray:
    """TD(lambda) targets from the target critic evaluated on one-hot next actions."""
    b, t = batch.mask.shape
    ns = batch.next_state.reshape(b * t, -1)
    na = batch.next_actions.reshape(b * t, -1)
    q_next = critic_values(critic, target_tensors, ns, na, batch.n_actions).reshape(b, t)
    return td_lambda_targets(batch.reward, batch.terminated, batch.cont, q_next, gamma, lam, batch.mask)


def critic_step(batch: EpisodeBatch, critic, targets: np.ndarray, opt: Adam, clip: float = 10.0) -> float:
    """One clipped Adam step on the mean squared TD(lambda) error. Returns the pre-step loss."""
    rows = flat_rows(batch)
    y = targets.reshape(-1)[rows["idx"]]
    joint = np.eye(batch.n_actions)[rows["actions"]].reshape(len(y), -1)
    with ad.Tape() as tape:
        q = critic_forward(critic, Tensor(rows["state"]), Tensor(joint))
        loss = ad.mean(ad.square(ad.sub(Tensor(y), q)))
    _finite(loss.item(), "critic loss", q_range=(float(q.data.min()), float(q.data.max())),
            target_range=(float(y.min()), float(y.max())))
    tape.backward(loss)
    apply_gradients(opt, clip)
    return loss.item()


def policy_probs(policy: PolicyParams, batch: EpisodeBatch) -> Tensor:
    """Recompute (N, n, k) action probabilities on the tape for all valid rows."""
    idx = batch.valid_index()
    b, t = batch.mask.shape
    n, k = batch.n_agents, batch.n_actions
    if not policy.recurrent:
        obs = batch.obs.reshape((b * t,) + batch.obs.shape[2:])[idx]
        return policy_forward_all(policy, obs)[0]
    h = Tensor(batch.h0 if batch.h0 is not None else policy.zero_hidden(b))
    steps = []
    for s in range(t):
        keep = np.broadcast_to((~batch.first[:, s])[:, None, None], h.shape).astype(np.float64)
        h = ad.mul(h, Tensor(keep))
        p, h = policy_forward_all(policy, batch.obs[:, s], h)
        steps.append(ad.reshape(p, (b, 1, n, k)))
    probs = ad.reshape(ad.concat(steps, axis=1), (b * t, n, k))
    return ad.take(probs, idx, axis=0)


def policy_objective(policy: PolicyParams, critic, critic_tensors, batch: EpisodeBatch, cfg: TrainConfig,
                     rng: np.random.Generator | None = None) -> tuple[Tensor, float, float]:
    """Negated LICA objective (a loss), the mean Q term and the mean entropy."""
    rows = flat_rows(batch)
    probs = policy_probs(policy, batch)
    joint = joint_action_input(probs, cfg.policy_input, rng, cfg.gumbel_temperature)
    q = ad.mean(critic_forward(critic, Tensor(rows["state"]), joint, critic_tensors))
    ent_loss, h = entropy_regularizer(probs, cfg.entropy_mode, cfg.entropy_coef)
    return ad.add(ad.scale(q, -1.0), ent_loss), q.item(), h


def policy_step(batch: EpisodeBatch, policy: PolicyParams, critic, cfg: TrainConfig, opt: Adam,
                rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Ascend the objective with the critic frozen. Returns (objective, mean entropy)."""
    frozen = detached(critic.tensors)
    with ad.Tape() as tape:
        loss, _, h = policy_objective(policy, critic, frozen, batch, cfg, rng)
    _finite(loss.item(), "policy objective", entropy=h)
    tape.backward(loss)
    apply_gradients(opt, cfg.grad_clip)
    return -loss.item(), h


# --- learners ---------------------------------------------------------------------

def build_critic(cfg: TrainConfig, spec: EnvSpec, rng: np.random.Generator):
    action_dim = spec.n_agents * spec.n_actions
    if cfg.critic == "mixing":
        return MixingCriticParams.init(rng, spec.state_dim, action_dim, cfg.critic_hidden, cfg.hyper_hidden)
    return MlpCriticParams.init(rng, spec.state_dim, action_dim, cfg.critic_hidden)


def build_policy(cfg: TrainConfig, spec: EnvSpec, rng: np.random.Generator) -> PolicyParams:
    return PolicyParams.init(rng, spec.n_agents, spec.obs_dim, spec.n_actions, cfg.hidden_dim,
                             cfg.recurrent, cfg.share_params)


class LicaLearner:
    def __init__(self, cfg: TrainConfig, spec: EnvSpec, rng: np.random.Generator):
        self.cfg = cfg
        self.spec = spec
        self.policy = build_policy(cfg, spec, rng)
        self.critic = build_critic(cfg, spec, rng)
        self.target = clone(self.critic.tensors)
        self.policy_opt = Adam(self.policy.tensors, cfg.policy_lr)
        self.critic_opt = Adam(self.critic.tensors, cfg.critic_lr)
        self.noise_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
        self.critic_updates = 0

    def update(self, batch: EpisodeBatch) -> dict:
        targets = lica_targets(batch, self.critic, self.target, self.cfg.gamma, self.cfg.td_lambda)
        closs = critic_step(batch, self.critic, targets, self.critic_opt, self.cfg.grad_clip)
        self.critic_updates += 1
        obj, h = policy_step(batch, self.policy, self.critic, self.cfg, self.policy_opt, self.noise_rng)
        if self.critic_updates % self.cfg.target_update_interval == 0:
            assign(self.target, self.critic.tensors)
        return {"critic_loss": closs, "objective": obj, "entropy": h}

    def groups(self) -> dict:
        return {"policy": self.policy.tensors, "critic": self.critic.tensors, "target": self.target}

    def rng_state(self) -> dict:
        return self.noise_rng.bit_generator.state


def make_learner(cfg: TrainConfig, spec: EnvSpec, rng: np.random.Generator):
    if cfg.algo == "coma":
        from .baselines import ComaLearner
        return ComaLearner(cfg, spec, rng)
    return LicaLearner(cfg, spec, rng)


def env_spec(cfg: TrainConfig) -> EnvSpec:
    return make_env(cfg.env, 1, cfg.n_agents, cfg.episode_limit, cfg.gamma).spec


# --- loop -------------------------------------------------------------------------

@dataclass
class TrainResult:
    config: TrainConfig
    learner: object
    metrics: list[dict] = field(default_factory=list)
    episodes: list[EpisodeStats] = field(default_factory=list)
    updates: int = 0


def _summary(stats: list[EpisodeStats], upd: list[dict]) -> dict:
    out = {}
    if stats:
        out["mean_reward"] = float(np.mean([s.ret for s in stats]))
        out["mean_length"] = float(np.mean([s.length for s in stats]))
        out["success_rate"] = float(np.mean([s.success for s in stats]))
    out["mean_entropy"] = float(np.mean([u["entropy"] for u in upd])) if upd else None
    out["critic_loss"] = float(np.mean([u["critic_loss"] for u in upd])) if upd else None
    return out


def train_loop(cfg: TrainConfig, out_dir: str | Path | None = None, learner=None,
               on_update=None) -> TrainResult:
    """Sample on-policy batches, update critic then policy, sync the target critic.

    Writes ``metrics.jsonl`` (deterministic), ``timing.jsonl`` and checkpoints
    into ``out_dir`` when given. ``on_update(result)`` runs after every update.
    """
    spec = env_spec(cfg)
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    learner = learner or make_learner(cfg, spec, init_rng)
    runner = Runner(cfg.env, learner.policy, cfg.batch_size, cfg.seed, cfg.rollout_length,
                    cfg.rollout_chunk, cfg.workers, cfg.n_agents, cfg.episode_limit, cfg.gamma)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.jsonl", "w")
        timing_fh = open(out / "timing.jsonl", "w")
    result = TrainResult(cfg, learner)
    window_stats: list[EpisodeStats] = []
    window_upd: list[dict] = []
    start = time.perf_counter()

    def checkpoint(tag: str):
        if out is not None:
            meta = {"config": cfg.to_dict(runtime=False), "config_hash": cfg.digest(), "step": result.updates,
                    "episodes": len(result.episodes), "rng_state": learner.rng_state()}
            save_checkpoint(out / f"ckpt_{tag}.json", learner.groups(), meta)

    try:
        while True:
            batch, stats = runner.collect()
            upd = learner.update(batch)
            result.updates += 1
            result.episodes.extend(stats)
            window_stats.extend(stats)
            window_upd.append(upd)
            if on_update is not None:
                on_update(result)
            done = ((cfg.max_updates > 0 and result.updates >= cfg.max_updates)
                    or (cfg.max_episodes > 0 and len(result.episodes) >= cfg.max_episodes))
            if result.updates % cfg.log_interval == 0 or done:
                rec = {"step": result.updates, "episodes": len(result.episodes)}
                rec.update(_summary(window_stats, window_upd))
                result.metrics.append(rec)
                if out is not None:
                    metrics_fh.write(json.dumps(rec, sort_keys=True) + "\n")
                    metrics_fh.flush()
                    timing_fh.write(json.dumps({"step": result.updates,
                                                "wallclock": time.perf_counter() - start}) + "\n")
                log.info("step %d episodes %d reward %s entropy %.4f", rec["step"], rec["episodes"],
                         rec.get("mean_reward"), rec["mean_entropy"])
                window_stats, window_upd = [], []
            if cfg.checkpoint_interval and result.updates % cfg.checkpoint_interval == 0 and not done:
                checkpoint(f"{result.updates:07d}")
            if done:
                break
        checkpoint("final")
    finally:
        if out is not None:
            metrics_fh.close()
            timing_fh.close()
    return result
