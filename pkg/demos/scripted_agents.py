"""Compare a shortest-path oracle with a random agent on held-out scenes.

The oracle sets the ceiling a trained policy should approach; the random
agent shows the floor.

    python3 demos/scripted_agents.py
"""

from __future__ import annotations

from batchsim.navsim import EpisodeParams
from batchsim.rollout import OracleAgent, RandomAgent, episode_set, evaluate, generated_split


def main() -> None:
    val = generated_split(count=10, seed=0, split="val")
    params = EpisodeParams(max_geodesic=8.0)
    episodes = episode_set(val, per_scene=10, seed=1, params=params)
    for name, agent in (("oracle", OracleAgent()), ("random", RandomAgent(seed=0, stop_prob=0.05))):
        m = evaluate(agent, val, episodes, params=params)
        print(f"{name:>6}: success {m['success']:.3f}  spl {m['spl']:.3f}  ({m['episodes']} episodes)")


if __name__ == "__main__":
    main()
