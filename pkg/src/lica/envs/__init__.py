from .base import EnvSpec, StepResult, VecEnv, dump_step
from .particles import CooperativeNavigation, PredatorPrey
from .traffic_junction import TrafficJunction, optimal_mass, payoff_table

ENVS = ("traffic_junction", "coop_nav", "predator_prey")


def make_env(name: str, n_envs: int = 1, n_agents: int = 3, episode_limit: int = 200,
             gamma: float = 0.99) -> VecEnv:
    if name == "traffic_junction":
        return TrafficJunction(n_envs)
    if name == "coop_nav":
        return CooperativeNavigation(n_agents, n_envs, episode_limit, gamma)
    if name == "predator_prey":
        return PredatorPrey(n_envs, episode_limit, gamma)
    raise ValueError(f"unknown env {name!r}; choose from {', '.join(ENVS)}")


__all__ = ["ENVS", "CooperativeNavigation", "EnvSpec", "PredatorPrey", "StepResult",
           "TrafficJunction", "VecEnv", "dump_step", "make_env", "optimal_mass", "payoff_table"]
