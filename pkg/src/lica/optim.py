from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def global_norm(grads: list[np.ndarray]) -> float:
    return float(np.sqrt(np.sum([np.sum(g * g) for g in grads])))


def clip_global_norm(grads: list[np.ndarray], max_norm: float = 10.0) -> tuple[list[np.ndarray], float]:
    """Rescale the concatenated gradient to L2 norm <= max_norm. Returns (grads, pre-clip norm)."""
    norm = global_norm(grads)
    if norm > max_norm:
        factor = max_norm / norm
        grads = [g * factor for g in grads]
    return grads, norm


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            v = self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p = self.params[k]
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t,
                "m": {k: v.tolist() for k, v in self.m.items()},
                "v": {k: v.tolist() for k, v in self.v.items()}}


def apply_gradients(opt: Adam, max_norm: float) -> float:
    """Clip the grads currently on ``opt.params`` and take one Adam step."""
    names = list(opt.params)
    raw = [opt.params[k].grad if opt.params[k].grad is not None else np.zeros_like(opt.params[k].data)
           for k in names]
    clipped, norm = clip_global_norm(raw, max_norm)
    opt.step(dict(zip(names, clipped)))
    for k in names:
        opt.params[k].grad = None
    return norm
