"""Finite-difference checks for every op, every network and the policy objective."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, gradcheck
from .config import TrainConfig
from .nets import (MixingCriticParams, MlpCriticParams, PolicyParams, mixing_critic_forward, mlp_critic_forward,
                   policy_forward)

TOLERANCE = 1e-4
# small enough that a central stencil rarely straddles a ReLU kink, large enough for float64 round-off
EPS = 1e-6


def _signed(rng, shape, lo=0.1, hi=2.0):
    """Values bounded away from zero, for ops with a kink there."""
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _project(rng, shape):
    w = Tensor(rng.normal(size=shape))
    return lambda t: ad.sum(ad.mul(t, w))


def _binary(op):
    def build(rng):
        a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))
        proj = _project(rng, (3, 4))
        return lambda: proj(op(a, b)), [a, b]
    return build


def _unary(op, make=None):
    def build(rng):
        x = Tensor(make(rng) if make else rng.normal(size=(3, 4)))
        proj = _project(rng, (3, 4))
        return lambda: proj(op(x)), [x]
    return build


def _matmul(rng):
    a, b = Tensor(rng.normal(size=(3, 2))), Tensor(rng.normal(size=(2, 4)))
    proj = _project(rng, (3, 4))
    return lambda: proj(ad.matmul(a, b)), [a, b]


def _batch_vecmat(rng):
    x, m = Tensor(rng.normal(size=(3, 2))), Tensor(rng.normal(size=(3, 2, 4)))
    proj = _project(rng, (3, 4))
    return lambda: proj(ad.batch_vecmat(x, m)), [x, m]


def _reduce(op):
    def build(rng):
        x = Tensor(rng.normal(size=(3, 4, 2)))
        axis = int(rng.integers(3))
        shape = tuple(d for i, d in enumerate(x.shape) if i != axis)
        proj = _project(rng, shape)
        return lambda: proj(op(x, axis=axis)), [x]
    return build


def _softmax(rng):
    x = Tensor(rng.normal(size=(3, 4)) * 2)
    axis = int(rng.integers(2))
    proj = _project(rng, (3, 4))
    return lambda: proj(ad.softmax(x, axis=axis)), [x]


def _scale(rng):
    c = float(rng.normal())
    return _unary(lambda t: ad.scale(t, c))(rng)


def _concat(rng):
    a, b = Tensor(rng.normal(size=(3, 1))), Tensor(rng.normal(size=(3, 3)))
    proj = _project(rng, (3, 4))
    return lambda: proj(ad.concat([a, b], axis=1)), [a, b]


def _slice(rng):
    x = Tensor(rng.normal(size=(3, 7)))
    start = int(rng.integers(0, 3))
    proj = _project(rng, (3, 4))
    return lambda: proj(ad.slice(x, start, start + 4, axis=1)), [x]


def _take(rng):
    x = Tensor(rng.normal(size=(5, 4)))
    idx = rng.integers(0, 5, 3)
    proj = _project(rng, (3, 4))
    return lambda: proj(ad.take(x, idx, axis=0)), [x]


def _reshape(rng):
    x = Tensor(rng.normal(size=(2, 6)))
    proj = _project(rng, (3, 4))
    return lambda: proj(ad.reshape(x, (3, 4))), [x]


def _expand(rng):
    x = Tensor(rng.normal(size=(4,)))
    proj = _project(rng, (3, 4))
    return lambda: proj(ad.expand(x, 3)), [x]


OPS: dict[str, Callable] = {
    "add": _binary(ad.add), "sub": _binary(ad.sub), "mul": _binary(ad.mul), "matmul": _matmul,
    "batch_vecmat": _batch_vecmat, "scale": _scale, "square": _unary(ad.square),
    "relu": _unary(ad.relu, lambda r: _signed(r, (3, 4))), "tanh": _unary(ad.tanh),
    "sigmoid": _unary(ad.sigmoid), "exp": _unary(ad.exp),
    "log": _unary(ad.log, lambda r: r.uniform(0.2, 3.0, (3, 4))), "softmax": _softmax,
    "sum": _reduce(ad.sum), "mean": _reduce(ad.mean), "concat": _concat, "slice": _slice, "take": _take,
    "reshape": _reshape, "expand": _expand,
}


# --- networks ---------------------------------------------------------------------

def _random_biases(params, rng) -> None:
    """Fresh inits have zero biases, which can park a ReLU exactly on its kink."""
    for k, t in params.items():
        if k.endswith(".b"):
            t.data = rng.normal(size=t.shape) * 0.5


def _policy(recurrent: bool):
    def build(rng):
        p = PolicyParams.init(rng, 2, 3, 4, hidden=5, recurrent=recurrent)
        _random_biases(p.tensors, rng)
        obs = Tensor(rng.normal(size=(3, 5)))
        h = Tensor(rng.normal(size=(3, 5)) * 0.5) if recurrent else None
        w = Tensor(rng.normal(size=(3, 4)))

        def fn():
            probs, new_h = policy_forward(p, obs, h)
            out = ad.sum(ad.mul(probs, w))
            return ad.add(out, ad.sum(new_h)) if recurrent else out
        inputs = list(p.tensors.values()) + [obs] + ([h] if recurrent else [])
        return fn, inputs
    return build


def _mixing(rng):
    c = MixingCriticParams.init(rng, 3, 4, embed=4, hyper_hidden=4)
    _random_biases(c.tensors, rng)
    s, u = Tensor(rng.normal(size=(3, 3))), Tensor(rng.random((3, 4)))
    w = Tensor(rng.normal(size=(3,)))
    return lambda: ad.sum(ad.mul(mixing_critic_forward(c, s, u), w)), list(c.tensors.values()) + [s, u]


def _mlp(rng):
    c = MlpCriticParams.init(rng, 3, 4, hidden=5)
    _random_biases(c.tensors, rng)
    s, u = Tensor(rng.normal(size=(3, 3))), Tensor(rng.random((3, 4)))
    w = Tensor(rng.normal(size=(3,)))
    return lambda: ad.sum(ad.mul(mlp_critic_forward(c, s, u), w)), list(c.tensors.values()) + [s, u]


def _objective(recurrent: bool):
    """The full policy loss (critic term plus entropy term) on a small real batch."""
    def build(rng):
        from .rollout import Runner
        from .training import LicaLearner, env_spec, policy_objective
        seed = int(rng.integers(2**31))
        cfg = TrainConfig(env="coop_nav", n_agents=2, episode_limit=4, batch_size=2, rollout_length=3,
                          hidden_dim=4, critic_hidden=4, hyper_hidden=4, recurrent=recurrent,
                          entropy_mode="vanilla", entropy_coef=0.05, seed=seed)
        learner = LicaLearner(cfg, env_spec(cfg), np.random.default_rng(seed))
        _random_biases(learner.policy.tensors, rng)
        _random_biases(learner.critic.tensors, rng)
        batch, _ = Runner(cfg.env, learner.policy, 2, seed, 3, 2, 1, 2, 4, cfg.gamma).collect()
        frozen = {k: Tensor(v.data) for k, v in learner.critic.tensors.items()}
        names = sorted(learner.policy.tensors)
        picked = [learner.policy.tensors[names[i]] for i in rng.choice(len(names), 3, replace=False)]
        return lambda: policy_objective(learner.policy, learner.critic, frozen, batch, cfg)[0], picked
    return build


NETWORKS: dict[str, Callable] = {
    "policy_ff": _policy(False), "policy_gru": _policy(True), "mixing_critic": _mixing, "mlp_critic": _mlp,
    "policy_objective": _objective(False), "policy_objective_gru": _objective(True),
}


def run_suite(instances: int = 100, seed: int = 0, names: list[str] | None = None) -> dict[str, float]:
    """Max relative error per check over ``instances`` seeded random instances each."""
    checks = {**OPS, **NETWORKS}
    out = {}
    for name in names or list(checks):
        rng = np.random.default_rng(np.random.SeedSequence([seed, *name.encode()]))
        worst = 0.0
        for _ in range(instances):
            fn, inputs = checks[name](rng)
            worst = max(worst, gradcheck(fn, inputs, EPS))
        out[name] = worst
    return out
