"""Decentralized policy networks, the mixing-critic hypernetwork and the MLP critic.

Parameters live in plain ``dict[str, Tensor]`` collections so optimizers,
checkpoints and target copies can treat every network the same way.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

Params = dict[str, Tensor]


# --- parameter helpers ------------------------------------------------------

def init_linear(params: Params, name: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> None:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero bias."""
    bound = 1.0 / np.sqrt(fan_in)
    params[f"{name}.W"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True, name=f"{name}.W")
    params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b")


def linear(params: Params, name: str, x: Tensor) -> Tensor:
    h = ad.matmul(x, params[f"{name}.W"])
    return ad.add(h, ad.expand(params[f"{name}.b"], x.shape[0]))


def detached(params: Params) -> Params:
    """Untracked views sharing the same values (no gradient flows into them)."""
    return {k: Tensor(v.data) for k, v in params.items()}


def clone(params: Params) -> Params:
    return {k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=v.name) for k, v in params.items()}


def assign(dst: Params, src: Params) -> None:
    for k, v in src.items():
        dst[k].data = v.data.copy()


def zero_(params: Params) -> None:
    for v in params.values():
        v.data = np.zeros_like(v.data)


def _check_width(op: str, x: Tensor, width: int) -> None:
    if x.data.ndim != 2 or x.shape[1] != width:
        raise ad.ShapeError(f"{op}: expected input width {width}, got shape {x.shape}")


# --- policy -------------------------------------------------------------------

@dataclass
class PolicyParams:
    """FC -> (GRU) -> FC -> softmax, shared across agents or one set per agent.

    With sharing on, a one-hot agent id is appended to every observation.
    """

    n_agents: int
    obs_dim: int
    n_actions: int
    hidden: int = 64
    recurrent: bool = False
    shared: bool = True
    tensors: Params = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.obs_dim + (self.n_agents if self.shared else 0)

    def prefix(self, agent: int) -> str:
        return "" if self.shared else f"agent{agent}."

    @classmethod
    def init(cls, rng: np.random.Generator, n_agents: int, obs_dim: int, n_actions: int,
             hidden: int = 64, recurrent: bool = False, shared: bool = True) -> "PolicyParams":
        p = cls(n_agents, obs_dim, n_actions, hidden, recurrent, shared)
        for a in range(1 if shared else n_agents):
            pre = p.prefix(a)
            init_linear(p.tensors, pre + "fc1", p.input_dim, hidden, rng)
            if recurrent:
                for gate in ("r", "z", "n"):
                    init_linear(p.tensors, f"{pre}gru.x{gate}", hidden, hidden, rng)
                    init_linear(p.tensors, f"{pre}gru.h{gate}", hidden, hidden, rng)
            init_linear(p.tensors, pre + "fc2", hidden, n_actions, rng)
        return p

    def zero_hidden(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.n_agents, self.hidden))


def gru_cell(params: Params, prefix: str, x: Tensor, h: Tensor) -> Tensor:
    """h' = z * candidate + (1 - z) * h."""
    def gate(g):
        return ad.add(linear(params, f"{prefix}gru.x{g}", x), linear(params, f"{prefix}gru.h{g}", h))

    r = ad.sigmoid(gate("r"))
    z = ad.sigmoid(gate("z"))
    cand = ad.tanh(ad.add(linear(params, f"{prefix}gru.xn", x),
                          ad.mul(r, linear(params, f"{prefix}gru.hn", h))))
    one_minus_z = ad.sub(Tensor(np.ones(z.shape)), z)
    return ad.add(ad.mul(z, cand), ad.mul(one_minus_z, h))


def policy_forward(params: PolicyParams, obs: Tensor, hidden: Tensor | None = None,
                   agent: int = 0) -> tuple[Tensor, Tensor | None]:
    """Action probabilities for a batch of inputs of one agent.

    ``obs`` must already carry the agent-id one-hot when parameters are shared
    (see :func:`policy_inputs`). In feedforward mode ``hidden`` is passed through.
    """
    _check_width("policy_forward", obs, params.input_dim)
    pre = params.prefix(agent)
    x = ad.relu(linear(params.tensors, pre + "fc1", obs))
    new_hidden = hidden
    if params.recurrent:
        if hidden is None:
            hidden = Tensor(np.zeros((obs.shape[0], params.hidden)))
        _check_width("policy_forward(hidden)", hidden, params.hidden)
        x = new_hidden = gru_cell(params.tensors, pre, x, hidden)
    logits = linear(params.tensors, pre + "fc2", x)
    return ad.softmax(logits, axis=-1), new_hidden


def policy_inputs(params: PolicyParams, obs: np.ndarray) -> np.ndarray:
    """(B, n, obs_dim) -> (B, n, input_dim), appending agent ids when shared."""
    if not params.shared:
        return obs
    b, n = obs.shape[:2]
    ids = np.broadcast_to(np.eye(n), (b, n, n))
    return np.concatenate([obs, ids], axis=-1)


def policy_forward_all(params: PolicyParams, obs: np.ndarray | Tensor,
                       hidden: Tensor | np.ndarray | None = None) -> tuple[Tensor, Tensor | None]:
    """Forward every agent at once: obs (B, n, obs_dim) -> probs (B, n, k)."""
    o = obs.data if isinstance(obs, Tensor) else np.asarray(obs, dtype=np.float64)
    b, n = o.shape[:2]
    x = policy_inputs(params, o)
    h = hidden if hidden is None or isinstance(hidden, Tensor) else Tensor(hidden)
    k, hw = params.n_actions, params.hidden
    if params.shared:
        flat_h = None if h is None else ad.reshape(h, (b * n, hw))
        probs, new_h = policy_forward(params, Tensor(x.reshape(b * n, -1)), flat_h)
        probs = ad.reshape(probs, (b, n, k))
        if new_h is not None:
            new_h = ad.reshape(new_h, (b, n, hw))
        return probs, new_h
    outs, hs = [], []
    for a in range(n):
        ha = None if h is None else ad.reshape(ad.slice(h, a, a + 1, axis=1), (b, hw))
        pa, na = policy_forward(params, Tensor(x[:, a]), ha, agent=a)
        outs.append(ad.reshape(pa, (b, 1, k)))
        if na is not None:
            hs.append(ad.reshape(na, (b, 1, hw)))
    probs = ad.concat(outs, axis=1)
    new_h = ad.concat(hs, axis=1) if hs else None
    return probs, new_h


# --- critics ------------------------------------------------------------------

@dataclass
class MixingCriticParams:
    """Hypernetwork mapping the state to the weights of a two-layer mixer.

    The mixer takes the concatenated per-agent action vectors (one-hot samples
    or probability vectors) and returns Q. W1 and W2 are produced by
    one-hidden-layer ReLU nets of the state; b1 is linear in the state and b2
    is a one-hidden-layer ReLU net. No sign constraint on any generated weight.
    """

    state_dim: int
    action_dim: int
    embed: int = 64
    hyper_hidden: int = 64
    tensors: Params = field(default_factory=dict)

    @classmethod
    def init(cls, rng: np.random.Generator, state_dim: int, action_dim: int,
             embed: int = 64, hyper_hidden: int = 64) -> "MixingCriticParams":
        c = cls(state_dim, action_dim, embed, hyper_hidden)
        t = c.tensors
        init_linear(t, "hyper_w1.0", state_dim, hyper_hidden, rng)
        init_linear(t, "hyper_w1.1", hyper_hidden, action_dim * embed, rng)
        init_linear(t, "hyper_b1", state_dim, embed, rng)
        init_linear(t, "hyper_w2.0", state_dim, hyper_hidden, rng)
        init_linear(t, "hyper_w2.1", hyper_hidden, embed, rng)
        init_linear(t, "hyper_b2.0", state_dim, hyper_hidden, rng)
        init_linear(t, "hyper_b2.1", hyper_hidden, 1, rng)
        return c

    def generated_w1(self, state: Tensor, tensors: Params | None = None) -> Tensor:
        """W1(s) reshaped to (B, action_dim, embed)."""
        t = self.tensors if tensors is None else tensors
        raw = linear(t, "hyper_w1.1", ad.relu(linear(t, "hyper_w1.0", state)))
        return ad.reshape(raw, (state.shape[0], self.action_dim, self.embed))


def mixing_first_layer(params: MixingCriticParams, state: Tensor, joint: Tensor,
                       tensors: Params | None = None) -> Tensor:
    """First mixed representation: joint . W1(s), shape (B, embed)."""
    _check_width("mixing_critic_forward(state)", state, params.state_dim)
    _check_width("mixing_critic_forward(joint)", joint, params.action_dim)
    if state.shape[0] != joint.shape[0]:
        raise ad.ShapeError(f"mixing_critic_forward: batch mismatch {state.shape} vs {joint.shape}")
    return ad.batch_vecmat(joint, params.generated_w1(state, tensors))


def mixing_critic_forward(params: MixingCriticParams, state: Tensor, joint: Tensor,
                          tensors: Params | None = None) -> Tensor:
    """Q(s, u) = relu(u W1(s) + b1(s)) W2(s) + b2(s), one value per row."""
    t = params.tensors if tensors is None else tensors
    b = state.shape[0]
    nu = mixing_first_layer(params, state, joint, t)
    hidden = ad.relu(ad.add(nu, linear(t, "hyper_b1", state)))
    w2 = ad.reshape(linear(t, "hyper_w2.1", ad.relu(linear(t, "hyper_w2.0", state))),
                    (b, params.embed, 1))
    b2 = linear(t, "hyper_b2.1", ad.relu(linear(t, "hyper_b2.0", state)))
    q = ad.add(ad.batch_vecmat(hidden, w2), b2)
    return ad.reshape(q, (b,))


@dataclass
class MlpCriticParams:
    """Feedforward critic on concat(state, joint action input)."""

    state_dim: int
    action_dim: int
    hidden: int = 64
    tensors: Params = field(default_factory=dict)

    @classmethod
    def init(cls, rng: np.random.Generator, state_dim: int, action_dim: int,
             hidden: int = 64) -> "MlpCriticParams":
        c = cls(state_dim, action_dim, hidden)
        init_linear(c.tensors, "fc1", state_dim + action_dim, hidden, rng)
        init_linear(c.tensors, "fc2", hidden, hidden, rng)
        init_linear(c.tensors, "fc3", hidden, 1, rng)
        return c


def mlp_first_layer(params: MlpCriticParams, state: Tensor, joint: Tensor,
                    tensors: Params | None = None) -> Tensor:
    _check_width("mlp_critic_forward(state)", state, params.state_dim)
    _check_width("mlp_critic_forward(joint)", joint, params.action_dim)
    t = params.tensors if tensors is None else tensors
    return linear(t, "fc1", ad.concat([state, joint], axis=1))


def mlp_critic_forward(params: MlpCriticParams, state: Tensor, joint: Tensor,
                       tensors: Params | None = None) -> Tensor:
    t = params.tensors if tensors is None else tensors
    h = ad.relu(mlp_first_layer(params, state, joint, t))
    h = ad.relu(linear(t, "fc2", h))
    return ad.reshape(linear(t, "fc3", h), (state.shape[0],))


def critic_forward(params: MixingCriticParams | MlpCriticParams, state: Tensor, joint: Tensor,
                   tensors: Params | None = None) -> Tensor:
    if isinstance(params, MixingCriticParams):
        return mixing_critic_forward(params, state, joint, tensors)
    return mlp_critic_forward(params, state, joint, tensors)


# --- checkpoints ----------------------------------------------------------------

def params_to_json(groups: dict[str, Params]) -> dict:
    out = {}
    for group, params in groups.items():
        for name, t in params.items():
            out[f"{group}/{name}"] = {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
    return out


def params_from_json(doc: dict) -> dict[str, Params]:
    groups: dict[str, Params] = {}
    for key, entry in doc.items():
        group, name = key.split("/", 1)
        data = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        groups.setdefault(group, {})[name] = Tensor(data, requires_grad=True, name=name)
    return groups


def save_checkpoint(path: str | Path, groups: dict[str, Params], metadata: dict) -> None:
    doc = {"params": params_to_json(groups), "metadata": metadata}
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path: str | Path) -> tuple[dict[str, Params], dict]:
    doc = json.loads(Path(path).read_text())
    return params_from_json(doc["params"]), doc["metadata"]
