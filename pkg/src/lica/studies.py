"""Repeated short trainings on the one-step traffic junction."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import TrainConfig, preset
from .envs import TrafficJunction, optimal_mass
from .nets import policy_forward_all
from .training import train_loop


def junction_probs(policy) -> np.ndarray:
    """(2, 2) action probabilities of both agents at the junction's only observation."""
    return policy_forward_all(policy, TrafficJunction(1).observations())[0].data[0]


def junction_curve(cfg: TrainConfig) -> np.ndarray:
    """Per-step (after every update) [optimal mass, p1(pass), p2(pass)] for one init."""
    rows = []

    def record(result):
        p = junction_probs(result.learner.policy)
        rows.append((optimal_mass(p[0], p[1]), p[0, 0], p[1, 0]))

    train_loop(cfg, on_update=record)
    return np.array(rows)


def _run(args):
    cfg, seed = args
    return junction_curve(cfg.replace(seed=seed))


def max_workers() -> int:
    return max(1, int(os.environ.get("LICA_THREADS", os.cpu_count() or 1)))


def traffic_junction_study(algo: str = "lica", inits: int = 1000, steps: int = 60, base_seed: int = 0,
                           cfg: TrainConfig | None = None, workers: int | None = None) -> np.ndarray:
    """Curves of shape (inits, steps, 3) from independent random initializations."""
    if inits < 1:
        raise ValueError(f"inits must be >= 1, got {inits}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    cfg = cfg or preset(f"traffic_junction_{algo}")
    cfg = cfg.replace(algo=algo, max_updates=steps, max_episodes=0, log_interval=steps)
    jobs = [(cfg, base_seed + i) for i in range(inits)]
    workers = workers or max_workers()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            curves = list(pool.map(_run, jobs, chunksize=max(1, inits // (4 * workers))))
    else:
        curves = [_run(j) for j in jobs]
    return np.stack(curves)


def summarize(curves: np.ndarray) -> dict[str, np.ndarray]:
    """Across-init mean and std per step."""
    return {"mean_optimal": curves[:, :, 0].mean(axis=0), "std_optimal": curves[:, :, 0].std(axis=0),
            "mean_p1_pass": curves[:, :, 1].mean(axis=0), "std_p1_pass": curves[:, :, 1].std(axis=0),
            "mean_p2_pass": curves[:, :, 2].mean(axis=0), "std_p2_pass": curves[:, :, 2].std(axis=0)}
