"""Episode metrics."""

from __future__ import annotations

from typing import Iterable, Mapping

from ..errors import InvalidInputError


def spl(episodes: Iterable[Mapping]) -> float:
    """Success weighted by (normalized inverse) path length.

    Each episode needs ``success``, ``shortest_path`` (> 0) and ``path_length`` (>= 0).
    """
    total, count = 0.0, 0
    for ep in episodes:
        shortest, actual = float(ep["shortest_path"]), float(ep["path_length"])
        if shortest <= 0 or actual < 0:
            raise InvalidInputError(f"invalid episode lengths shortest={shortest} actual={actual}")
        if ep["success"]:
            total += shortest / max(actual, shortest)
        count += 1
    if count == 0:
        raise InvalidInputError("spl of an empty episode list")
    return total / count


def success_rate(episodes: Iterable[Mapping]) -> float:
    eps = list(episodes)
    if not eps:
        raise InvalidInputError("success rate of an empty episode list")
    return sum(bool(e["success"]) for e in eps) / len(eps)
